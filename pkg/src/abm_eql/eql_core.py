"""Equation learning: finite differences, library construction and sparse regression.

The pipeline is differentiate -> build_library -> solve -> (optionally) prune and
vote over random train/test splits. Three solvers are available: minimum-norm
least squares, Lasso by FISTA, and greedy forward-backward selection.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError
from .ode_models import (
    FitDiagnostics,
    TermDescriptor,
    format_equation,
    parse_term,
)

logger = logging.getLogger(__name__)

SOLVER_KINDS = ("least_squares", "lasso", "greedy")

LIBRARY_PRESETS = {
    "poly4": ("C", "C^2", "C^3", "C^4"),
    "sir": ("S", "S^2", "I", "I^2", "S*I"),
    "logistic": ("C(1-C)", "C"),
    "modified_logistic": ("C(1-FC)", "C"),
}


def default_grid() -> Tuple[float, ...]:
    """lambda = 0 plus 100 log-spaced values in [1e-5, 1e-3]."""
    return (0.0,) + tuple(float(v) for v in np.logspace(-5, -3, 100))


# ---------------------------------------------------------------------------
# differentiation and library
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeEstimate:
    values: np.ndarray
    schemes: Tuple[str, ...]


def differentiate(times, values) -> DerivativeEstimate:
    """Forward difference at the first point, centered in the interior, backward at the last."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.ndim != 1 or y.shape != t.shape:
        raise ConfigError(f"times and values must be 1-D of equal length, got {t.shape} and {y.shape}")
    n = t.size
    if n < 3:
        raise ConfigError(f"differentiation needs at least 3 points, got {n}")
    steps = np.diff(t)
    if not (steps[0] > 0 and np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)):
        raise ConfigError("differentiation needs a uniform, increasing time grid")
    dy = np.gradient(y, float(steps[0]), edge_order=1)
    return DerivativeEstimate(values=dy, schemes=("forward",) + ("centered",) * (n - 2) + ("backward",))


@dataclass(frozen=True)
class LibraryMatrix:
    theta: np.ndarray
    terms: Tuple[TermDescriptor, ...]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.theta.shape

    def rows(self, index) -> "LibraryMatrix":
        return LibraryMatrix(self.theta[index], self.terms)


def resolve_terms(spec: Union[str, Sequence[Union[str, TermDescriptor]]]) -> Tuple[TermDescriptor, ...]:
    """Terms from a preset name, a comma-separated label list, or a sequence of labels/descriptors."""
    if isinstance(spec, str):
        labels = LIBRARY_PRESETS.get(spec)
        if labels is None:
            labels = tuple(part.strip() for part in spec.split(",") if part.strip())
        spec = labels
    terms = tuple(t if isinstance(t, TermDescriptor) else parse_term(t) for t in spec)
    if not terms:
        raise ConfigError("library needs at least one term")
    labels = [t.label for t in terms]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate library terms: {labels}")
    return terms


def build_library(columns: Mapping[str, np.ndarray], terms) -> LibraryMatrix:
    """Evaluate each term row-wise on the named signals. No constant column is allowed."""
    terms = resolve_terms(terms)
    for term in terms:
        if term.is_constant:
            raise ConfigError("library terms may not include a constant")
    cols = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    n = {v.shape[0] for v in cols.values()}
    if len(n) != 1:
        raise ConfigError("library signals must share one time grid")
    n = n.pop()
    theta = np.empty((n, len(terms)))
    for j, term in enumerate(terms):
        theta[:, j] = term.evaluate(cols)
    if not np.all(np.isfinite(theta)):
        raise ConfigError("library contains non-finite values (undefined signal such as F on an empty lattice?)")
    return LibraryMatrix(theta, terms)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def least_squares(theta, b) -> np.ndarray:
    """Minimum-norm least-squares coefficients (SVD based)."""
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(b, dtype=float)
    if theta.shape[0] < theta.shape[1]:
        raise ConfigError(f"least squares needs n >= d, got {theta.shape}")
    return np.linalg.lstsq(theta, b, rcond=None)[0]


def _lstsq_on_support(theta, b, support) -> np.ndarray:
    xi = np.zeros(theta.shape[1])
    support = list(support)
    if support:
        xi[support] = np.linalg.lstsq(theta[:, support], b, rcond=None)[0]
    return xi


def soft_threshold(x, threshold):
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def lasso_objective(theta, b, xi, lam) -> float:
    """0.5 ||b - theta xi||^2 + lam ||xi||_1."""
    r = b - theta @ xi
    return 0.5 * float(r @ r) + lam * float(np.abs(xi).sum())


@dataclass(frozen=True)
class LassoResult:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    objective: float
    column_norms: np.ndarray
    target_norm: float = 1.0
    objective_trace: Tuple[float, ...] = ()


def lasso_fista(theta, b, lam: float, iter_max: int = 10000, tol: float = 1e-10,
                debias: bool = False) -> LassoResult:
    """Lasso by FISTA with function-value momentum restart.

    The target is scaled to unit norm and the penalty acts on coefficients in
    library units: minimises 0.5 ||b / |b| - theta x||^2 + lam ||x||_1 and
    returns |b| x. Equivalently the threshold on theta'r is lam |b|, so a
    given lambda means the same thing whatever the magnitude of dC/dt.
    Iterates run on the column-normalised library (w = a x, a the column
    2-norms) with per-column thresholds lam / a. ``objective`` is the final
    value of the scaled problem. With ``debias`` the support found by FISTA is
    refit by least squares.
    """
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(b, dtype=float)
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    norms = np.linalg.norm(theta, axis=0)
    if np.any(norms == 0.0):
        raise NumericalError(f"library column(s) {np.flatnonzero(norms == 0.0).tolist()} are identically zero")
    scale = float(np.linalg.norm(b))
    if scale == 0.0:
        zeros = np.zeros(theta.shape[1])
        return LassoResult(zeros, True, 0, 0.0, norms, 0.0)
    target = b / scale
    a = theta / norms
    lipschitz = np.linalg.norm(a, 2) ** 2
    gram = np.ascontiguousarray(a.T @ a)
    corr = np.ascontiguousarray(a.T @ target)
    penalty = np.ascontiguousarray(lam / norms)
    w, converged, iterations, trace = _fista_kernel(gram, corr, 1.0, penalty, 1.0 / lipschitz,
                                                    int(iter_max), float(tol))
    if not converged:
        logger.info("FISTA did not converge lambda=%g iterations=%d", lam, iter_max)

    x = w / norms
    xi = scale * x
    if debias:
        xi = _lstsq_on_support(theta, b, np.flatnonzero(w))
    return LassoResult(
        coefficients=xi,
        converged=bool(converged),
        iterations=int(iterations),
        objective=lasso_objective(theta, target, x, lam),
        column_norms=norms,
        target_norm=scale,
        objective_trace=tuple(float(f) for f in trace[:iterations + 1]),
    )


@njit(cache=True, nogil=True)
def _gram_objective(gram, corr, bsq, penalty, w):
    d = w.shape[0]
    quad = 0.0
    lin = 0.0
    l1 = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += gram[i, j] * w[j]
        quad += w[i] * row
        lin += corr[i] * w[i]
        l1 += penalty[i] * abs(w[i])
    return 0.5 * quad - lin + 0.5 * bsq + l1


@njit(cache=True, nogil=True)
def _prox_gradient(gram, corr, z, step, penalty, out):
    d = z.shape[0]
    for i in range(d):
        grad = -corr[i]
        for j in range(d):
            grad += gram[i, j] * z[j]
        v = z[i] - step * grad
        shrink = step * penalty[i]
        if v > shrink:
            out[i] = v - shrink
        elif v < -shrink:
            out[i] = v + shrink
        else:
            out[i] = 0.0


@njit(cache=True, nogil=True)
def _fista_kernel(gram, corr, bsq, penalty, step, iter_max, tol):
    # objective through the Gram matrix: 0.5 w'Gw - c'w + 0.5 b'b + sum penalty |w|
    d = corr.shape[0]
    w = np.zeros(d)
    w_old = np.zeros(d)
    z = np.empty(d)
    w_new = np.empty(d)
    trace = np.empty(iter_max + 1)
    f_cur = _gram_objective(gram, corr, bsq, penalty, w)
    trace[0] = f_cur
    age = 0
    converged = False
    it = 0
    for it in range(1, iter_max + 1):
        beta = age / (age + 1.0)
        for j in range(d):
            z[j] = w[j] + beta * (w[j] - w_old[j])
        _prox_gradient(gram, corr, z, step, penalty, w_new)
        f_new = _gram_objective(gram, corr, bsq, penalty, w_new)
        if f_new > f_cur:
            # momentum restart: plain proximal step from w
            _prox_gradient(gram, corr, w, step, penalty, w_new)
            f_new = _gram_objective(gram, corr, bsq, penalty, w_new)
            age = 0
        change = 0.0
        size = 0.0
        for j in range(d):
            change += (w_new[j] - w[j]) ** 2
            size += w_new[j] ** 2
            w_old[j] = w[j]
            w[j] = w_new[j]
        f_cur = f_new
        trace[it] = f_cur
        age += 1
        if np.sqrt(change) <= tol * max(np.sqrt(size), 1e-300):
            converged = True
            break
    return w, converged, it, trace


def _residual_norm(theta, b, support) -> Tuple[float, np.ndarray]:
    xi = _lstsq_on_support(theta, b, sorted(support))
    return float(np.linalg.norm(b - theta @ xi)), xi


def greedy_fb(theta, b, tol: float, max_iter: Optional[int] = None) -> np.ndarray:
    """Greedy forward-backward selection against a residual-norm tolerance.

    A column enters when its least-squares refit lowers ||b - theta xi||_2 by more
    than ``tol``; after each entry, active columns are dropped while the
    increase this causes stays below ``tol / 2``. Ties go to the lowest column
    index. Returns least-squares coefficients on the final active set.
    """
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(b, dtype=float)
    if not tol > 0:
        raise ConfigError(f"greedy tolerance must be positive, got {tol}")
    d = theta.shape[1]
    max_iter = max_iter or 10 * d
    active: List[int] = []
    err = float(np.linalg.norm(b))
    for _ in range(max_iter):
        best_j, best_err = None, None
        for j in range(d):
            if j in active:
                continue
            e, _ = _residual_norm(theta, b, active + [j])
            if best_err is None or e < best_err:
                best_j, best_err = j, e
        if best_j is None or err - best_err <= tol:
            break
        active.append(best_j)
        err = best_err
        while active:
            worst_j, worst_err = None, None
            for j in sorted(active):
                e, _ = _residual_norm(theta, b, [k for k in active if k != j])
                if worst_err is None or e < worst_err:
                    worst_j, worst_err = j, e
            if worst_err - err < tol / 2:
                active.remove(worst_j)
                err = worst_err
            else:
                break
    if not active:
        logger.info("greedy selected no terms tol=%g", tol)
    return _lstsq_on_support(theta, b, sorted(active))


# ---------------------------------------------------------------------------
# solver spec, splits and hyperparameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverSpec:
    """Regression back-end and its hyperparameters.

    For ``lasso`` a ``lam`` of None means lambda is chosen per split from ``grid``.
    """

    kind: str = "greedy"
    lam: Optional[float] = None
    tol: Optional[float] = None
    iter_max: int = 10000
    prune_threshold: float = 0.05
    n_splits: int = 10
    grid: Tuple[float, ...] = field(default_factory=default_grid)
    debias: bool = False

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigError(f"Unknown solver: {self.kind}")
        if self.kind == "greedy":
            if self.tol is None or not self.tol > 0:
                raise ConfigError("greedy solver needs a positive tol")
            if self.lam is not None:
                raise ConfigError("greedy solver takes tol, not lambda")
        elif self.kind == "lasso":
            if self.tol is not None:
                raise ConfigError("lasso solver takes lambda, not tol")
            if self.lam is not None and self.lam < 0:
                raise ConfigError("lambda must be non-negative")
            if self.lam is None and not self.grid:
                raise ConfigError("lasso without lambda needs a non-empty grid")
        elif self.lam is not None or self.tol is not None:
            raise ConfigError("least squares takes neither lambda nor tol")
        if self.prune_threshold < 0:
            raise ConfigError("pruning threshold must be non-negative")
        if self.n_splits < 1:
            raise ConfigError("split count must be >= 1")
        if self.iter_max < 1:
            raise ConfigError("iter_max must be >= 1")

    def describe(self) -> Dict:
        out = {"kind": self.kind, "prune_threshold": self.prune_threshold, "n_splits": self.n_splits}
        if self.kind == "lasso":
            out.update(lam=self.lam, iter_max=self.iter_max, debias=self.debias)
            if self.lam is None:
                out.update(grid_min=min(self.grid), grid_max=max(self.grid), grid_count=len(self.grid))
        if self.kind == "greedy":
            out["tol"] = self.tol
        return out


def solve(theta, b, spec: SolverSpec, lam: Optional[float] = None, tol: Optional[float] = None) -> np.ndarray:
    if spec.kind == "least_squares":
        return least_squares(theta, b)
    if spec.kind == "greedy":
        return greedy_fb(theta, b, spec.tol if tol is None else tol)
    lam = spec.lam if lam is None else lam
    if lam is None:
        raise ConfigError("lasso needs a lambda value")
    return lasso_fista(theta, b, lam, iter_max=spec.iter_max, debias=spec.debias).coefficients


def split_rows(n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform random half split of row indices; an odd extra row goes to training."""
    if n < 2:
        raise ConfigError(f"cannot split {n} rows")
    perm = rng.permutation(n)
    n_train = (n + 1) // 2
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def split_tolerance(tol: float, b_train, b) -> float:
    """Greedy tolerance for a fit on a subset of rows.

    The residual-norm tolerance is read as a fraction of |b| on the full data
    and applied as the same fraction of |b| on the training rows.
    """
    full = float(np.linalg.norm(b))
    if full == 0.0:
        return tol
    return tol * float(np.linalg.norm(b_train)) / full


def _test_residual(theta, b, xi) -> float:
    return float(np.linalg.norm(b - theta @ xi))


def _best_on_split(theta, b, train, test, grid, spec: SolverSpec) -> Tuple[float, float]:
    best_lam, best_res = None, None
    for lam in sorted(grid):
        xi = solve(theta[train], b[train], spec, lam=lam)
        res = _test_residual(theta[test], b[test], xi)
        if best_res is None or (res < best_res and not math.isclose(res, best_res, rel_tol=1e-9, abs_tol=1e-14)):
            best_lam, best_res = lam, res
    return best_lam, best_res


def select_hyperparameter(theta, b, grid: Sequence[float], seed: int, spec: Optional[SolverSpec] = None) -> float:
    """Grid value whose Lasso fit on a random half of the rows best predicts the other half.

    Ties within numerical precision go to the smaller lambda.
    """
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(b, dtype=float)
    if not len(grid):
        raise ConfigError("hyperparameter grid is empty")
    if theta.shape[0] < 4:
        raise ConfigError(f"hyperparameter search needs at least 4 rows, got {theta.shape[0]}")
    spec = spec or SolverSpec(kind="lasso", grid=tuple(grid))
    train, test = split_rows(theta.shape[0], split_rng(seed, 0))
    lam, _ = _best_on_split(theta, b, train, test, grid, spec)
    return lam


# ---------------------------------------------------------------------------
# learned models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitRecord:
    split_id: int
    lam: Optional[float]
    form: Tuple[int, ...]
    coefficients: np.ndarray
    test_residual: float
    tol: Optional[float] = None


@dataclass(frozen=True)
class LearnedModel:
    """Sparse coefficient vector over a term library, with solver metadata and diagnostics."""

    terms: Tuple[TermDescriptor, ...]
    coefficients: np.ndarray
    solver: Dict = field(default_factory=dict)
    diagnostics: Optional[FitDiagnostics] = None
    votes: int = 0
    splits: Tuple[SplitRecord, ...] = ()

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.coefficients))

    @property
    def form(self) -> Tuple[str, ...]:
        return tuple(self.terms[j].label for j in self.support)

    @property
    def empty(self) -> bool:
        return not self.support

    def equation(self) -> Tuple[Tuple[TermDescriptor, float], ...]:
        return tuple((self.terms[j], float(self.coefficients[j])) for j in self.support)

    def equation_string(self, decimals: int = 5) -> str:
        return format_equation(self.equation(), decimals)

    def with_diagnostics(self, diagnostics: FitDiagnostics) -> "LearnedModel":
        return replace(self, diagnostics=diagnostics)

    def to_dict(self) -> Dict:
        return {
            "terms": [{"label": t.label, "coeff": float(c)} for t, c in zip(self.terms, self.coefficients)],
            "form": list(self.form),
            "equation": self.equation_string(),
            "solver": self.solver,
            "votes": self.votes,
            "n_splits": len(self.splits),
            "mse": None if self.diagnostics is None or math.isnan(self.diagnostics.mse) else self.diagnostics.mse,
            "diverged": bool(self.diagnostics.diverged) if self.diagnostics else False,
        }


def fit_single(library: LibraryMatrix, b, spec: SolverSpec) -> LearnedModel:
    """One fit on all rows, no splitting or pruning."""
    if spec.kind == "lasso" and spec.lam is None:
        raise ConfigError("a single fit needs a fixed lambda")
    xi = solve(library.theta, np.asarray(b, dtype=float), spec)
    return LearnedModel(terms=library.terms, coefficients=xi, solver=spec.describe())


def _prune(theta_test, b_test, xi, threshold) -> List[int]:
    base = float(np.sum((b_test - theta_test @ xi) ** 2))
    keep = []
    for j in np.flatnonzero(xi):
        trial = xi.copy()
        trial[j] = 0.0
        increase = float(np.sum((b_test - theta_test @ trial) ** 2))
        if increase > base * (1.0 + threshold):
            keep.append(int(j))
    return keep


def prune_and_vote(library: LibraryMatrix, b, spec: SolverSpec, seed: int) -> LearnedModel:
    """Fit, prune and vote over random half splits; return the most frequent form.

    On every split the model is fit on the training half (lambda chosen on the
    test half when not fixed, greedy tolerance scaled by ``split_tolerance``).
    Each term is then dropped unless zeroing it raises the squared test
    residual by more than ``spec.prune_threshold``, and the kept terms are
    refit by least squares. The majority form wins (ties: fewer
    terms, then lower column indices) and its coefficients are averaged over
    the splits that produced it.
    """
    theta = library.theta
    b = np.asarray(b, dtype=float)
    n = theta.shape[0]
    if n < 4:
        raise ConfigError(f"split fitting needs at least 4 rows, got {n}")
    records = []
    for s in range(spec.n_splits):
        train, test = split_rows(n, split_rng(seed, s))
        lam = tol = None
        if spec.kind == "lasso":
            lam = spec.lam if spec.lam is not None else _best_on_split(theta, b, train, test, spec.grid, spec)[0]
        elif spec.kind == "greedy":
            tol = split_tolerance(spec.tol, b[train], b)
        xi = solve(theta[train], b[train], spec, lam=lam, tol=tol)
        kept = _prune(theta[test], b[test], xi, spec.prune_threshold)
        xi = _lstsq_on_support(theta[train], b[train], kept)
        records.append(SplitRecord(s, lam, tuple(kept), xi, _test_residual(theta[test], b[test], xi), tol))

    counts = Counter(r.form for r in records)
    form = min(counts, key=lambda f: (-counts[f], len(f), f))
    chosen = [r for r in records if r.form == form]
    coefficients = np.mean([r.coefficients for r in chosen], axis=0)
    if not form:
        logger.warning("all terms pruned in the majority form votes=%d/%d", counts[form], spec.n_splits)
    logger.info("majority form %s votes=%d/%d", [library.terms[j].label for j in form], counts[form], spec.n_splits)
    return LearnedModel(
        terms=library.terms,
        coefficients=coefficients,
        solver={**spec.describe(), "seed": seed},
        votes=counts[form],
        splits=tuple(records),
    )


def fit_report_rows(model: LearnedModel) -> List[Dict]:
    """Rows of the fit-report CSV: split_id, lambda, form, one column per term, test_residual."""
    rows = []
    for r in model.splits:
        row = {
            "split_id": r.split_id,
            "lambda": "" if r.lam is None else repr(r.lam),
            "form": "+".join(model.terms[j].label for j in r.form) or "0",
        }
        for t, c in zip(model.terms, r.coefficients):
            row[t.label] = repr(float(c))
        row["test_residual"] = repr(r.test_residual)
        rows.append(row)
    return rows


@dataclass(frozen=True)
class CoefficientSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def average_models(models: Sequence[LearnedModel]) -> Tuple[LearnedModel, Dict[str, CoefficientSummary]]:
    """Term-wise mean over a common library (absent terms count as zero) plus per-term spread."""
    if not models:
        raise ConfigError("cannot average an empty list of models")
    labels = models[0].labels
    for m in models[1:]:
        if m.labels != labels:
            raise ConfigError("models must share one term library to be averaged")
    stack = np.array([m.coefficients for m in models], dtype=float)
    mean = stack.mean(axis=0)
    summary = {}
    for j, label in enumerate(labels):
        q = np.percentile(stack[:, j], [0, 25, 50, 75, 100])
        summary[label] = CoefficientSummary(*(float(v) for v in q))
    averaged = LearnedModel(
        terms=models[0].terms,
        coefficients=mean,
        solver={**models[0].solver, "averaged_over": len(models)},
    )
    return averaged, summary
