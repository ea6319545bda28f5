"""Polynomial ODE models: term descriptors, RK4 replay, mean-field models and diagnostics."""

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
DEFAULT_SUBSTEPS = 10

_MONOMIAL = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)(?:\^(\d+))?$")
_CROWDING = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)\(1-(?:([A-Za-z][A-Za-z0-9_]*)\*?)?([A-Za-z][A-Za-z0-9_]*)\)$")


@dataclass(frozen=True)
class TermDescriptor:
    """One right-hand-side term.

    ``powers`` is a tuple of (variable, exponent) pairs multiplied together.
    ``crowding`` optionally multiplies the monomial by ``1 - signal*var`` (or
    ``1 - var`` when ``signal`` is None), as in C(1-C) and C(1-FC).
    """

    label: str
    powers: Tuple[Tuple[str, int], ...]
    crowding: Optional[str] = None
    signal: Optional[str] = None

    @property
    def is_constant(self) -> bool:
        return not self.powers and self.crowding is None

    @property
    def variables(self) -> Tuple[str, ...]:
        names = [v for v, _ in self.powers]
        if self.crowding is not None:
            names.append(self.crowding)
        if self.signal is not None:
            names.append(self.signal)
        return tuple(dict.fromkeys(names))

    def degree(self, variable: str) -> int:
        return sum(exp for v, exp in self.powers if v == variable)

    def evaluate(self, columns: Mapping[str, np.ndarray]):
        """Evaluate element-wise on named signal arrays (or scalars)."""
        for name in self.variables:
            if name not in columns:
                raise ConfigError(f"term {self.label} needs signal {name!r}, which is not available")
        value = 1.0
        for var, exp in self.powers:
            value = value * columns[var] ** exp if exp != 1 else value * columns[var]
        if self.crowding is not None:
            x = columns[self.crowding]
            if self.signal is not None:
                value = value * (1.0 - columns[self.signal] * x)
            else:
                value = value * (1.0 - x)
        return value


def parse_term(label: str) -> TermDescriptor:
    """Parse labels such as ``C``, ``C^2``, ``S*I``, ``C(1-C)``, ``C(1-FC)`` or ``1``."""
    text = label.replace(" ", "")
    if text == "1":
        return TermDescriptor(label=label, powers=())
    m = _CROWDING.match(text)
    if m:
        var, signal, inner = m.group(1), m.group(2), m.group(3)
        if signal is None and len(inner) > len(var) and inner.endswith(var):
            # "FC" written without the multiplication sign
            signal, inner = inner[: -len(var)], var
        if inner != var:
            raise ConfigError(f"crowding term {label!r} must use the same variable inside and outside")
        return TermDescriptor(label=label, powers=((var, 1),), crowding=var, signal=signal)
    powers = {}
    for factor in text.split("*"):
        fm = _MONOMIAL.match(factor)
        if not fm:
            raise ConfigError(f"cannot parse library term {label!r}")
        powers[fm.group(1)] = powers.get(fm.group(1), 0) + int(fm.group(2) or 1)
    if any(exp < 1 for exp in powers.values()):
        raise ConfigError(f"exponents must be positive in {label!r}")
    return TermDescriptor(label=label, powers=tuple(powers.items()))


Equation = Tuple[Tuple[TermDescriptor, float], ...]


@dataclass(frozen=True)
class PolynomialModel:
    """A system dX/dt = sum_i xi_i * term_i(X, signals), one equation per state variable."""

    variables: Tuple[str, ...]
    equations: Tuple[Equation, ...]
    meta: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.variables) != len(self.equations):
            raise ConfigError("one equation per state variable is required")
        for var, eq in zip(self.variables, self.equations):
            labels = [term.label for term, _ in eq]
            if len(set(labels)) != len(labels):
                raise ConfigError(f"duplicate terms in the {var} equation")
            for term, coeff in eq:
                if not math.isfinite(coeff):
                    raise ConfigError(f"non-finite coefficient on {term.label} in the {var} equation")

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @property
    def signals(self) -> Tuple[str, ...]:
        names = {v for eq in self.equations for term, _ in eq for v in term.variables}
        return tuple(sorted(names - set(self.variables)))

    def rhs(self, state, signals: Optional[Mapping[str, float]] = None) -> np.ndarray:
        columns = dict(signals or {})
        for j, var in enumerate(self.variables):
            columns[var] = state[j]
        out = np.empty(self.dimension)
        for j, eq in enumerate(self.equations):
            total = 0.0
            for term, coeff in eq:
                total += coeff * term.evaluate(columns)
            out[j] = total
        return out

    def equation(self, variable: str) -> Equation:
        return self.equations[self.variables.index(variable)]


@dataclass(frozen=True)
class FitDiagnostics:
    """Replay quality: MSE against data and whether the replay blew up (MSE then undefined)."""

    mse: float = float("nan")
    diverged: bool = False

    def __post_init__(self):
        if self.diverged:
            object.__setattr__(self, "mse", float("nan"))

    def with_mse(self, mse: float) -> "FitDiagnostics":
        return FitDiagnostics(mse=mse, diverged=self.diverged)


# ---------------------------------------------------------------------------
# logistic family
# ---------------------------------------------------------------------------

def logistic_rhs(c, pp, pd):
    return pp * c * (1.0 - c) - pd * c


def modified_logistic_rhs(c, f, pp, pd):
    """dC/dt = Pp C (1 - F C) - Pd C; identical to the logistic right-hand side when F = 1."""
    return pp * c * (1.0 - f * c) - pd * c


def logistic_analytic(pp: float, pd: float, c0: float, times) -> np.ndarray:
    """Closed-form logistic solution K C0 e^{rt} / (K + C0 (e^{rt} - 1)), r = Pp - Pd, K = r / Pp."""
    if not pp > pd or pd < 0:
        raise DomainError(f"logistic solution needs Pp > Pd >= 0, got Pp={pp}, Pd={pd}")
    if not 0.0 <= c0 <= 1.0:
        raise DomainError(f"initial density must lie in [0, 1], got {c0}")
    t = np.asarray(times, dtype=float)
    r = pp - pd
    k = r / pp
    growth = np.exp(r * t)
    return k * c0 * growth / (k + c0 * (growth - 1.0))


def mean_field_logistic_model(pp: float, pd: float) -> PolynomialModel:
    """dC/dt = (Pp - Pd) C - Pp C^2 as a polynomial model."""
    if pp < 0 or pd < 0:
        raise DomainError("rates must be non-negative")
    eq = ((parse_term("C"), pp - pd), (parse_term("C^2"), -pp))
    return PolynomialModel(("C",), (eq,), {"source": "mean_field", "pp": pp, "pd": pd})


def modified_logistic_model(pp: float, pd: float) -> PolynomialModel:
    """dC/dt = -Pd C + Pp C(1-FC); needs the F signal when integrated."""
    eq = ((parse_term("C"), -pd), (parse_term("C(1-FC)"), pp))
    return PolynomialModel(("C",), (eq,), {"source": "modified_logistic", "pp": pp, "pd": pd})


def mean_field_sir_model(p_inf: float, p_rec: float, m: float) -> PolynomialModel:
    """dS/dt = -M PI S I, dI/dt = M PI S I - PR I, with R = 1 - S - I."""
    if p_inf < 0 or p_rec < 0:
        raise DomainError(f"rates must be non-negative, got PI={p_inf}, PR={p_rec}")
    if not 0.0 < m <= 1.0:
        raise DomainError(f"occupied fraction M must lie in (0, 1], got {m}")
    si = parse_term("S*I")
    eq_s = ((si, -m * p_inf),)
    eq_i = ((si, m * p_inf), (parse_term("I"), -p_rec))
    return PolynomialModel(("S", "I"), (eq_s, eq_i), {"source": "mean_field", "pi": p_inf, "pr": p_rec, "m": m})


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def integrate_rk4(model: PolynomialModel, initial, times, signals: Optional[Mapping[str, np.ndarray]] = None,
                  substeps: int = DEFAULT_SUBSTEPS) -> Tuple[np.ndarray, FitDiagnostics]:
    """Classical RK4 on the data grid with ``substeps`` internal steps per interval.

    Returns an (n, dimension) trajectory. Exogenous signals are interpolated
    linearly between grid times. If any state leaves [-1e6, 1e6] or becomes
    non-finite, integration stops, the remaining rows are NaN and the
    diagnostics are flagged as diverged.
    """
    t = np.asarray(times, dtype=float)
    y = np.array(initial, dtype=float).reshape(-1)
    if y.shape[0] != model.dimension:
        raise ConfigError(f"initial state has {y.shape[0]} values for a {model.dimension}-state model")
    if not np.all(np.isfinite(y)):
        raise ConfigError("initial state must be finite")
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    if t.size > 1:
        steps = np.diff(t)
        if not (np.all(steps > 0) and np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)):
            raise ConfigError("integration times must be equispaced and ascending")
    signals = {k: np.asarray(v, dtype=float) for k, v in (signals or {}).items()}
    missing = set(model.signals) - set(signals)
    if missing:
        raise ConfigError(f"model needs exogenous signals {sorted(missing)}")

    def sig_at(s):
        return {k: float(np.interp(s, t, v)) for k, v in signals.items()}

    out = np.full((t.size, model.dimension), np.nan)
    out[0] = y
    diverged = False
    for i in range(1, t.size):
        h = (t[i] - t[i - 1]) / substeps
        s = t[i - 1]
        for _ in range(substeps):
            k1 = model.rhs(y, sig_at(s))
            k2 = model.rhs(y + 0.5 * h * k1, sig_at(s + 0.5 * h))
            k3 = model.rhs(y + 0.5 * h * k2, sig_at(s + 0.5 * h))
            k4 = model.rhs(y + h * k3, sig_at(s + h))
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += h
            if not np.all(np.isfinite(y)) or np.any(np.abs(y) > DIVERGENCE_LIMIT):
                diverged = True
                break
        if diverged:
            logger.info("replay diverged at t=%.6g model=%s", t[i], model.meta.get("source", "?"))
            break
        out[i] = y
    return out, FitDiagnostics(diverged=diverged)


def mean_field_sir(p_inf: float, p_rec: float, m: float, initial, times,
                   substeps: int = DEFAULT_SUBSTEPS) -> Tuple[np.ndarray, FitDiagnostics]:
    """Mean-field SIR trajectories as an (n, 3) array of S, I, R with R = 1 - S - I."""
    s0, i0 = (float(v) for v in initial)
    if s0 < 0 or i0 < 0 or s0 + i0 > 1.0:
        raise DomainError(f"need S, I >= 0 and S + I <= 1, got ({s0}, {i0})")
    model = mean_field_sir_model(p_inf, p_rec, m)
    si, diagnostics = integrate_rk4(model, [s0, i0], times, substeps=substeps)
    return with_recovered(si), diagnostics


def with_recovered(si: np.ndarray) -> np.ndarray:
    """Append R = 1 - S - I to an (n, 2) S, I trajectory."""
    return np.column_stack([si, 1.0 - si[:, 0] - si[:, 1]])


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def per_capita_growth(model: PolynomialModel, c: float, signals: Optional[Mapping[str, float]] = None) -> float:
    """G(C) = RHS(C) / C; at C = 0 the limit (sum of coefficients of terms linear in C)."""
    if model.dimension != 1:
        raise ConfigError("per-capita growth needs a single-state model")
    var = model.variables[0]
    if c < 0:
        raise DomainError(f"density must be non-negative, got {c}")
    if c > 0:
        return float(model.rhs([c], signals)[0] / c)
    eq = model.equations[0]
    if any(term.is_constant or term.degree(var) == 0 for term, _ in eq):
        raise DomainError("per-capita growth at C = 0 is undefined for a model with a constant term")
    return float(sum(coeff for term, coeff in eq if term.degree(var) == 1))


def _coefficient(equation: Iterable[Tuple[TermDescriptor, float]], powers: Dict[str, int]) -> Optional[float]:
    for term, coeff in equation:
        if term.crowding is None and dict(term.powers) == powers:
            return coeff
    return None


def compute_r0(equation: Iterable[Tuple[TermDescriptor, float]]) -> float:
    """R0 = b / (-a) for dI/dt = a I + b S I + ..., evaluated at S = 1.

    States are agent fractions, so M is already folded into b. Returns NaN when
    either term is missing or the signs do not describe an outbreak threshold.
    """
    equation = tuple(equation)
    a = _coefficient(equation, {"I": 1})
    b = _coefficient(equation, {"S": 1, "I": 1})
    if a is None or b is None:
        logger.info("R0 undefined: I-equation lacks %s", "the I term" if a is None else "the S*I term")
        return float("nan")
    if a >= 0 or b <= 0:
        logger.info("R0 undefined for coefficients a=%g b=%g", a, b)
        return float("nan")
    return b / (-a)


def mean_field_r0(m: float, p_inf: float, p_rec: float) -> float:
    if p_rec <= 0:
        raise DomainError("R0 needs PR > 0")
    return m * p_inf / p_rec


def species_mse(trajectory, data) -> np.ndarray:
    """Per-column mean squared error; NaN for any column touched by a diverged replay."""
    a = np.asarray(trajectory, dtype=float)
    b = np.asarray(data, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"trajectory shape {a.shape} does not match data shape {b.shape}")
    diff = (a - b) ** 2
    if diff.ndim == 1:
        diff = diff[:, None]
    return diff.mean(axis=0)


def trace_mse(trajectory, data) -> float:
    """Mean squared error over record times, averaged over species."""
    return float(np.mean(species_mse(trajectory, data)))


# ---------------------------------------------------------------------------
# rendering and serialisation
# ---------------------------------------------------------------------------

def format_equation(equation: Iterable[Tuple[TermDescriptor, float]], decimals: int = 5) -> str:
    """Render ``0.00468C - 0.00951C^2`` style text; zero-term equations render as ``0``."""
    parts = []
    for term, coeff in equation:
        label = "" if term.is_constant else term.label
        text = f"{abs(coeff):.{decimals}f}{label}"
        if not parts:
            parts.append(f"-{text}" if coeff < 0 else text)
        else:
            parts.append(f"- {text}" if coeff < 0 else f"+ {text}")
    return " ".join(parts) if parts else "0"


def format_model(model: PolynomialModel, decimals: int = 5) -> Dict[str, str]:
    return {var: f"d{var}/dt = {format_equation(eq, decimals)}" for var, eq in zip(model.variables, model.equations)}


def model_to_dict(model: PolynomialModel) -> dict:
    return {
        "variables": list(model.variables),
        "equations": [
            {"variable": var, "terms": [{"label": term.label, "coeff": float(coeff)} for term, coeff in eq]}
            for var, eq in zip(model.variables, model.equations)
        ],
        "meta": model.meta,
    }


def model_to_json(model: PolynomialModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, default=_json_default)


def model_from_json(text: str) -> PolynomialModel:
    try:
        data = json.loads(text)
        variables = tuple(data.get("variables") or [eq["variable"] for eq in data["equations"]])
        equations = tuple(
            tuple((parse_term(t["label"]), float(t["coeff"])) for t in eq["terms"]) for eq in data["equations"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed model JSON: {e}") from None
    return PolynomialModel(variables, equations, dict(data.get("meta") or {}))


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def model_from_equations(variables: Sequence[str], equations: Sequence[Iterable[Tuple[TermDescriptor, float]]],
                         meta: Optional[Dict] = None) -> PolynomialModel:
    return PolynomialModel(tuple(variables), tuple(tuple(eq) for eq in equations), dict(meta or {}))
