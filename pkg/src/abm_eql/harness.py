"""Case-study orchestration: simulate, learn, replay, and write tables, models and figures.

Each study writes into its output directory:

    table.csv          one row per sweep point and model, with config and seed columns
    models/*.json      learned and mean-field models
    data/*.csv         ensemble traces
    figures/*.svg      model-vs-data plots on nondimensional time
    report.json        everything above in one document
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import plotting
from .config import BdmConfig, SirConfig, config_to_dict
from .eql_core import (
    LearnedModel,
    SolverSpec,
    average_models,
    build_library,
    differentiate,
    fit_report_rows,
    fit_single,
    prune_and_vote,
)
from .errors import ConfigError
from .lattice_abm import Trace, run_ensemble, run_replicates
from .model_selection import build_candidate_libraries, vote_select
from .ode_models import (
    FitDiagnostics,
    PolynomialModel,
    compute_r0,
    format_model,
    integrate_rk4,
    mean_field_logistic_model,
    mean_field_r0,
    mean_field_sir_model,
    model_from_equations,
    model_to_json,
    modified_logistic_model,
    parse_term,
    per_capita_growth,
    species_mse,
    trace_mse,
    with_recovered,
)

logger = logging.getLogger(__name__)

CASE_STUDIES = ("tutorial", "cs1", "cs2", "cs3a", "cs3b", "cs4", "cs5")
SCALES = ("paper", "desk")

GREEDY_TOL = 1e-4
TUTORIAL_LAMBDA = 4e-4
POLY4 = ("C", "C^2", "C^3", "C^4")
SIR_LIBRARY = ("S", "S^2", "I", "I^2", "S*I")

# below these lattice sizes the reproduction tolerance bands widen
_BDM_SIZE_WARN = 50
_SIR_SIZE_WARN = 30


@dataclass(frozen=True)
class CaseStudySpec:
    """One case study: the swept values, replicate count, lattice size, seed and output location.

    ``sweep`` holds Pp (tutorial, cs1, cs4), replicate counts N (cs2), sample
    counts n (cs3a), training fractions (cs3b) or PI (cs5).
    """

    id: str
    sweep: Tuple[float, ...]
    n_replicates: int
    size: int
    out_dir: Path
    seed: int = 0
    pm: float = 1.0
    n_record: int = 100
    n_datasets: int = 1
    n_splits: int = 10
    scale: str = "paper"
    workers: Optional[int] = None

    def __post_init__(self):
        if self.id not in CASE_STUDIES:
            raise ConfigError(f"Unknown case study: {self.id}")
        if self.scale not in SCALES:
            raise ConfigError(f"Unknown scale: {self.scale}")
        if not self.sweep:
            raise ConfigError("sweep list must not be empty")
        if self.n_replicates < 1 or self.n_datasets < 1 or self.n_splits < 1:
            raise ConfigError("replicate, dataset and split counts must be >= 1")
        if self.id == "cs3b" and not all(0.0 < f < 1.0 for f in self.sweep):
            raise ConfigError("training fractions must lie in (0, 1)")
        if self.id == "cs3a" and not all(3 <= int(n) <= self.n_record for n in self.sweep):
            raise ConfigError(f"sample counts must lie in [3, {self.n_record}]")
        if self.id == "cs2" and not all(int(n) >= 1 for n in self.sweep):
            raise ConfigError("replicate counts must be >= 1")
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        limit = _SIR_SIZE_WARN if self.id == "cs5" else _BDM_SIZE_WARN
        if self.size < limit:
            logger.warning("lattice X=%d is below %d; reproduction tolerances widen", self.size, limit)


def case_study_spec(study: str, out_dir, scale: str = "paper", seed: int = 0,
                    workers: Optional[int] = None) -> CaseStudySpec:
    """Preset sweeps for each study at paper or desk scale."""
    if scale not in SCALES:
        raise ConfigError(f"Unknown scale: {scale}")
    bdm_size = 120 if scale == "paper" else 60
    presets = {
        "tutorial": dict(sweep=(0.01,), n_replicates=50, size=bdm_size),
        "cs1": dict(sweep=(0.01, 0.05, 0.1, 0.5), n_replicates=50, size=bdm_size),
        "cs2": dict(sweep=(1, 5, 10, 25), n_replicates=1, size=bdm_size, n_datasets=10),
        "cs3a": dict(sweep=(100, 50, 25, 13), n_replicates=50, size=bdm_size),
        "cs3b": dict(sweep=(0.1, 0.2, 0.25, 0.5), n_replicates=50, size=bdm_size),
        "cs4": dict(sweep=(0.005, 0.01, 0.05, 0.1, 0.5), n_replicates=50, size=bdm_size, n_splits=100),
        "cs5": dict(sweep=(0.005, 0.01, 0.05, 0.1), n_replicates=25, size=40),
    }
    if study not in presets:
        raise ConfigError(f"Unknown case study: {study}")
    return CaseStudySpec(id=study, out_dir=Path(out_dir), seed=seed, scale=scale, workers=workers, **presets[study])


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# trace manipulation
# ---------------------------------------------------------------------------

def subsample_trace(trace: Trace, n_target: int) -> Trace:
    """Keep ``n_target`` equispaced record points starting at the first.

    When (n - 1) is a multiple of (n_target - 1) both endpoints are kept;
    otherwise the largest whole stride is used and the final time is truncated,
    with a warning.
    """
    n = len(trace)
    if n_target < 3:
        raise ConfigError(f"subsampling needs n_target >= 3, got {n_target}")
    if n_target > n:
        raise ConfigError(f"cannot subsample {n} points to {n_target}")
    stride, rem = divmod(n - 1, n_target - 1)
    if rem:
        logger.warning("n_target=%d does not divide the %d-point grid; last time truncated to t=%.6g",
                       n_target, n, trace.times[stride * (n_target - 1)])
    return trace.take(np.arange(n_target) * stride)


def split_prefix(trace: Trace, fraction: float) -> Tuple[Trace, Trace]:
    """First ceil(fraction * n) points for training, the rest for testing."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"training fraction must lie in (0, 1), got {fraction}")
    n = len(trace)
    n_train = math.ceil(fraction * n - 1e-9)
    if n_train < 3:
        raise ConfigError(f"training prefix has {n_train} points; at least 3 are needed")
    if n_train >= n:
        raise ConfigError("training prefix leaves no test points")
    return trace.take(np.arange(n_train)), trace.take(np.arange(n_train, n))


# ---------------------------------------------------------------------------
# shared steps
# ---------------------------------------------------------------------------

def _replay(model: PolynomialModel, initial, times, data, signals=None) -> Tuple[np.ndarray, FitDiagnostics]:
    trajectory, diagnostics = integrate_rk4(model, initial, times, signals=signals)
    if diagnostics.diverged:
        return trajectory, diagnostics
    data = np.asarray(data, dtype=float).reshape(trajectory.shape)
    return trajectory, diagnostics.with_mse(trace_mse(trajectory, data))


def _learned_bdm_model(learned: LearnedModel, meta: Dict) -> PolynomialModel:
    return model_from_equations(("C",), (learned.equation(),), {"source": "learned", **meta})


def _learn_density(trace: Trace, spec: SolverSpec, seed: int, terms=POLY4) -> LearnedModel:
    deriv = differentiate(trace.times, trace.density["C"])
    library = build_library(trace.columns(), terms)
    return prune_and_vote(library, deriv.values, spec, seed)


def _growth_curves(models: Dict[str, PolynomialModel]) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    c = np.linspace(0.0, 1.0, 101)
    curves = {}
    for name, model in models.items():
        try:
            g = np.array([per_capita_growth(model, x) for x in c])
        except ConfigError as e:
            logger.info("no growth curve for %s: %s", name, e)
            continue
        curves[name] = (c, g)
    return curves


class _Report:
    """Collects rows and artifacts for one study and writes them out."""

    def __init__(self, spec: CaseStudySpec):
        self.spec = spec
        self.rows: List[Dict] = []
        self.models: Dict[str, str] = {}
        self.traces: Dict[str, str] = {}
        self.figures: List[str] = []
        self.extra: Dict = {}
        for sub in ("models", "data", "figures"):
            (spec.out_dir / sub).mkdir(parents=True, exist_ok=True)

    def add_row(self, config, n_replicates: int, **values):
        row = {"study": self.spec.id, **values, **_config_columns(config), "n_replicates": n_replicates}
        self.rows.append(row)

    def save_trace(self, name: str, trace: Trace):
        path = trace.to_csv(self.spec.out_dir / "data" / f"{name}.csv")
        self.traces[name] = str(path.relative_to(self.spec.out_dir))

    def save_model(self, name: str, model: PolynomialModel):
        path = self.spec.out_dir / "models" / f"{name}.json"
        path.write_text(model_to_json(model) + "\n", encoding="utf-8")
        self.models[name] = str(path.relative_to(self.spec.out_dir))

    def save_figure(self, path: Path):
        self.figures.append(str(Path(path).relative_to(self.spec.out_dir)))

    def figure_path(self, name: str) -> Path:
        return self.spec.out_dir / "figures" / f"{name}.svg"

    def finish(self) -> Dict:
        table = self.spec.out_dir / "table.csv"
        _write_csv(table, self.rows)
        report = {
            "study": self.spec.id,
            "scale": self.spec.scale,
            "seed": self.spec.seed,
            "spec": {
                "sweep": list(self.spec.sweep),
                "n_replicates": self.spec.n_replicates,
                "size": self.spec.size,
                "n_datasets": self.spec.n_datasets,
                "n_splits": self.spec.n_splits,
            },
            "rows": self.rows,
            "models": self.models,
            "traces": self.traces,
            "figures": self.figures,
            "table": "table.csv",
            **self.extra,
        }
        (self.spec.out_dir / "report.json").write_text(
            json.dumps(report, indent=2, default=_json_safe, allow_nan=True) + "\n", encoding="utf-8"
        )
        logger.info("case study %s written to %s", self.spec.id, self.spec.out_dir)
        return report


def _config_columns(config) -> Dict:
    return {f"config_{k}": v for k, v in config_to_dict(config).items()}


def _json_safe(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _write_csv(path: Path, rows: Sequence[Dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    header: List[str] = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(v) for k, v in row.items()})
    return path


def _csv_value(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _greedy_spec(n_splits: int) -> SolverSpec:
    return SolverSpec(kind="greedy", tol=GREEDY_TOL, n_splits=n_splits)


def _bdm_config(spec: CaseStudySpec, pp: float, pd: float, seed: int, n_record: Optional[int] = None) -> BdmConfig:
    return BdmConfig(pp=pp, pd=pd, pm=spec.pm, size=spec.size, n_record=n_record or spec.n_record, seed=seed)


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

def run_tutorial(spec: CaseStudySpec) -> Dict:
    """BDM ensemble, poly4 library, least-squares / Lasso / greedy / pruned-Lasso fits, RK4 replays."""
    report = _Report(spec)
    pp = float(spec.sweep[0])
    pd = pp / 2
    config = _bdm_config(spec, pp, pd, spec.seed)
    trace = run_ensemble(config, spec.n_replicates, spec.seed, workers=spec.workers)
    report.save_trace("tutorial", trace)

    deriv = differentiate(trace.times, trace.density["C"])
    library = build_library(trace.columns(), POLY4)
    fits = {
        "least_squares": fit_single(library, deriv.values, SolverSpec(kind="least_squares")),
        "lasso": fit_single(library, deriv.values, SolverSpec(kind="lasso", lam=TUTORIAL_LAMBDA)),
        "greedy": fit_single(library, deriv.values, SolverSpec(kind="greedy", tol=GREEDY_TOL)),
        "pruned_lasso": prune_and_vote(library, deriv.values, SolverSpec(kind="lasso", n_splits=spec.n_splits),
                                       spec.seed),
    }
    c0 = trace.density["C"][0]
    data = trace.density["C"]
    scaled_t = trace.times * (pp - pd)
    models = {"mean_field": mean_field_logistic_model(pp, pd)}
    models.update({name: _learned_bdm_model(f, f.solver) for name, f in fits.items()})
    curves = {}
    for name, model in models.items():
        trajectory, diagnostics = _replay(model, [c0], trace.times, data)
        report.save_model(f"tutorial_{name}", model)
        learned = fits.get(name)
        report.add_row(
            config, spec.n_replicates,
            model=name,
            equation=format_model(model)["C"],
            coefficients=";".join(repr(float(c)) for c in learned.coefficients) if learned else "",
            mse=diagnostics.mse,
            diverged=int(diagnostics.diverged),
        )
        curves[name] = (scaled_t, trajectory[:, 0])

    pruned = fits["pruned_lasso"]
    _write_csv(spec.out_dir / "fit_report.csv", fit_report_rows(pruned))
    estimates = None
    if pruned.form == ("C", "C^2"):
        xi1, xi2 = pruned.coefficients[0], pruned.coefficients[1]
        estimates = {"pp": float(-xi2), "pd": float(-xi2 - xi1)}
    report.extra["parameter_estimates"] = estimates
    report.extra["pruned_votes"] = pruned.votes

    path = plotting.plot_density_fit(
        report.figure_path("tutorial"), scaled_t, data,
        {k: curves[k] for k in ("mean_field", "least_squares", "lasso", "greedy")},
        title=f"Pp={pp:g}, Pd={pd:g}",
        growth=_growth_curves({k: models[k] for k in ("mean_field", "lasso")}),
    )
    report.save_figure(path)
    return report.finish()


def run_cs1(spec: CaseStudySpec) -> Dict:
    """Mean-field versus greedy-learned models across proliferation rates."""
    report = _Report(spec)
    for i, pp in enumerate(spec.sweep):
        pd = pp / 2
        seed = derive_seed(spec.seed, i)
        config = _bdm_config(spec, pp, pd, seed)
        trace = run_ensemble(config, spec.n_replicates, seed, workers=spec.workers)
        tag = f"pp_{pp:g}"
        report.save_trace(tag, trace)
        learned = _learn_density(trace, _greedy_spec(spec.n_splits), seed)
        models = {
            "mean_field": mean_field_logistic_model(pp, pd),
            "learned": _learned_bdm_model(learned, learned.solver),
        }
        data = trace.density["C"]
        scaled_t = trace.times * (pp - pd)
        curves = {}
        for name, model in models.items():
            trajectory, diagnostics = _replay(model, [data[0]], trace.times, data)
            report.save_model(f"{tag}_{name}", model)
            report.add_row(config, spec.n_replicates, pp=pp, pd=pd, model=name,
                           equation=format_model(model)["C"], mse=diagnostics.mse,
                           diverged=int(diagnostics.diverged),
                           votes=learned.votes if name == "learned" else "")
            curves[name] = (scaled_t, trajectory[:, 0])
        path = plotting.plot_density_fit(report.figure_path(tag), scaled_t, data, curves,
                                         title=f"Pp={pp:g}, Pd={pd:g}", growth=_growth_curves(models))
        report.save_figure(path)
    return report.finish()


def run_cs2(spec: CaseStudySpec) -> Dict:
    """Learned models from ensembles of N replicates, repeated over independent datasets."""
    report = _Report(spec)
    pp, pd = 0.01, 0.005
    coefficient_rows: List[Dict] = []
    summary_rows: List[Dict] = []
    previous: Optional[np.ndarray] = None
    for i, n_rep in enumerate(int(n) for n in spec.sweep):
        learned_models = []
        datasets = []
        seeds = []
        for k in range(spec.n_datasets):
            seed = derive_seed(spec.seed, i, k)
            config = _bdm_config(spec, pp, pd, seed)
            trace = run_ensemble(config, n_rep, seed, workers=spec.workers)
            datasets.append(trace)
            seeds.append(seed)
            model = _learn_density(trace, _greedy_spec(spec.n_splits), seed)
            learned_models.append(model)
            coefficient_rows.append({"N": n_rep, "dataset": k, "seed": seed,
                                     **{t: float(c) for t, c in zip(model.labels, model.coefficients)}})
            replayed = _learned_bdm_model(model, model.solver)
            _, diagnostics = _replay(replayed, [trace.density["C"][0]], trace.times, trace.density["C"])
            report.add_row(config, n_rep, N=n_rep, model="dataset", dataset=k,
                           equation=format_model(replayed)["C"], mse=diagnostics.mse,
                           diverged=int(diagnostics.diverged), votes=model.votes)
        averaged, spread = average_models(learned_models)
        for label, s in spread.items():
            summary_rows.append({"N": n_rep, "term": label, "min": s.minimum, "q1": s.q1, "median": s.median,
                                 "q3": s.q3, "max": s.maximum})
        pooled = Trace(
            times=datasets[0].times,
            density={"C": np.mean([d.density["C"] for d in datasets], axis=0)},
            n_replicates=n_rep * spec.n_datasets,
        )
        tag = f"n_{n_rep}"
        report.save_trace(tag, pooled)
        data = pooled.density["C"]
        models = {
            "mean_field": mean_field_logistic_model(pp, pd),
            "learned": _learned_bdm_model(averaged, averaged.solver),
        }
        change = "" if previous is None else float(np.linalg.norm(averaged.coefficients - previous))
        previous = averaged.coefficients
        config = _bdm_config(spec, pp, pd, spec.seed)
        scaled_t = pooled.times * (pp - pd)
        curves = {}
        for name, model in models.items():
            trajectory, diagnostics = _replay(model, [data[0]], pooled.times, data)
            report.save_model(f"{tag}_{name}", model)
            report.add_row(config, n_rep, N=n_rep, model=name, equation=format_model(model)["C"],
                           mse=diagnostics.mse, diverged=int(diagnostics.diverged),
                           successive_change=change if name == "learned" else "",
                           dataset_seeds=";".join(str(s) for s in seeds))
            curves[name] = (scaled_t, trajectory[:, 0])
        path = plotting.plot_density_fit(report.figure_path(tag), scaled_t, data, curves, title=f"N={n_rep}")
        report.save_figure(path)
    _write_csv(spec.out_dir / "coefficients.csv", coefficient_rows)
    _write_csv(spec.out_dir / "coefficient_summary.csv", summary_rows)
    report.extra["coefficients"] = "coefficients.csv"
    report.extra["coefficient_summary"] = "coefficient_summary.csv"
    return report.finish()


def run_cs3a(spec: CaseStudySpec) -> Dict:
    """Greedy learning from n equispaced samples of one ensemble, scored on the finest grid."""
    report = _Report(spec)
    pp, pd = 0.05, 0.0125
    targets = [int(n) for n in spec.sweep]
    base_n = 1 + math.lcm(*(n - 1 for n in targets))
    config = _bdm_config(spec, pp, pd, spec.seed, n_record=base_n)
    base = run_ensemble(config, spec.n_replicates, spec.seed, workers=spec.workers)
    reference = subsample_trace(base, max(targets))
    report.save_trace("reference", reference)
    data = reference.density["C"]
    scaled_t = reference.times * (pp - pd)
    for n in targets:
        sampled = subsample_trace(base, n)
        tag = f"n_{n}"
        report.save_trace(tag, sampled)
        learned = _learn_density(sampled, _greedy_spec(spec.n_splits), spec.seed)
        model = _learned_bdm_model(learned, learned.solver)
        trajectory, diagnostics = _replay(model, [data[0]], reference.times, data)
        report.save_model(tag, model)
        report.add_row(config, spec.n_replicates, n=n, model="learned", equation=format_model(model)["C"],
                       mse=diagnostics.mse, diverged=int(diagnostics.diverged))
        path = plotting.plot_density_fit(
            report.figure_path(tag), sampled.times * (pp - pd), sampled.density["C"],
            {"learned": (scaled_t, trajectory[:, 0])}, title=f"n={n}",
        )
        report.save_figure(path)
    return report.finish()


def run_cs3b(spec: CaseStudySpec) -> Dict:
    """Learning from a prefix of the data and predicting the held-out remainder."""
    report = _Report(spec)
    pp, pd = 0.01, 0.005
    config = _bdm_config(spec, pp, pd, spec.seed)
    trace = run_ensemble(config, spec.n_replicates, spec.seed, workers=spec.workers)
    report.save_trace("full", trace)
    for fraction in spec.sweep:
        train, test = split_prefix(trace, fraction)
        tag = f"frac_{fraction:g}"
        learned = _learn_density(train, _greedy_spec(spec.n_splits), spec.seed)
        model = _learned_bdm_model(learned, learned.solver)
        trajectory, diagnostics = integrate_rk4(model, [train.density["C"][0]], trace.times)
        n_train = len(train)
        if not diagnostics.diverged:
            diagnostics = diagnostics.with_mse(trace_mse(trajectory[n_train:, 0], test.density["C"]))
        report.save_model(tag, model)
        report.add_row(config, spec.n_replicates, fraction=fraction, n_train=n_train, model="learned",
                       equation=format_model(model)["C"], mse=diagnostics.mse,
                       diverged=int(diagnostics.diverged))
        path = plotting.plot_density_fit(
            report.figure_path(tag), train.times * (pp - pd), train.density["C"],
            {"learned": (trace.times * (pp - pd), trajectory[:, 0])},
            title=f"first {fraction:.0%}",
            held_out=(test.times * (pp - pd), test.density["C"]),
        )
        report.save_figure(path)
    return report.finish()


def run_cs4(spec: CaseStudySpec) -> Dict:
    """Vote between mean-field and correlation-modified logistic libraries."""
    report = _Report(spec)
    votes, labels = [], []
    for i, pp in enumerate(spec.sweep):
        pd = pp / 2
        seed = derive_seed(spec.seed, i)
        config = _bdm_config(spec, pp, pd, seed)
        trace = run_ensemble(config, spec.n_replicates, seed, correlation=True, workers=spec.workers)
        tag = f"pp_{pp:g}"
        report.save_trace(tag, trace)
        theta1, theta2 = build_candidate_libraries(trace)
        deriv = differentiate(trace.times, trace.density["C"])
        result = vote_select(theta1, theta2, deriv.values, n_splits=spec.n_splits, seed=seed)
        _write_csv(spec.out_dir / "data" / f"{tag}_splits.csv", result.residual_rows())
        (spec.out_dir / "models" / f"{tag}_selection.json").write_text(
            json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")

        equation = tuple((parse_term(label), float(c)) for label, c in result.equation())
        model = model_from_equations(("C",), (equation,), {"source": "selected", "winner": result.winner_name})
        report.save_model(f"{tag}_winner", model)
        data = trace.density["C"]
        signals = {"F": np.nan_to_num(trace.correlation, nan=1.0)}
        trajectory, diagnostics = _replay(model, [data[0]], trace.times, data, signals=signals)
        pp_hat, pd_hat = result.rate_estimates()
        report.add_row(config, spec.n_replicates, pp=pp, pd=pd, winner=result.winner_name,
                       equation=format_model(model)["C"], votes=result.votes[result.winner],
                       votes_mean_field=result.votes[0], votes_modified=result.votes[1],
                       pp_hat=pp_hat, pd_hat=pd_hat, mse=diagnostics.mse,
                       diverged=int(diagnostics.diverged))
        votes.append(result.votes)
        labels.append(f"{pp:g}")
        scaled_t = trace.times * (pp - pd)
        mf, _ = integrate_rk4(mean_field_logistic_model(pp, pd), [data[0]], trace.times)
        modified, _ = integrate_rk4(modified_logistic_model(pp, pd), [data[0]], trace.times, signals=signals)
        path = plotting.plot_density_fit(
            report.figure_path(tag), scaled_t, data,
            {"mean_field": (scaled_t, mf[:, 0]), "selected": (scaled_t, trajectory[:, 0]),
             "modified (true rates)": (scaled_t, modified[:, 0])},
            title=f"Pp={pp:g}, Pd={pd:g}, winner {result.winner_name}",
        )
        report.save_figure(path)
    report.save_figure(plotting.plot_votes(report.figure_path("votes"), labels, votes, ("mean_field", "modified")))
    return report.finish()


def run_cs5(spec: CaseStudySpec) -> Dict:
    """SIR: Lasso-learned S and I equations against the mean-field model, with R0."""
    report = _Report(spec)
    r0_learned = []
    for i, p_inf in enumerate(spec.sweep):
        p_rec = p_inf / 10
        seed = derive_seed(spec.seed, i)
        config = SirConfig(pi=p_inf, pr=p_rec, pm=spec.pm, size=spec.size, n_record=spec.n_record, seed=seed)
        replicates = run_replicates(config, spec.n_replicates, seed, workers=spec.workers)
        trace = replicates.mean()
        tag = f"pi_{p_inf:g}"
        report.save_trace(tag, trace)
        library = build_library(trace.columns(), SIR_LIBRARY)
        lasso = SolverSpec(kind="lasso", n_splits=spec.n_splits)
        learned = {}
        for j, species in enumerate(("S", "I")):
            deriv = differentiate(trace.times, trace.density[species])
            learned[species] = prune_and_vote(library, deriv.values, lasso, derive_seed(seed, j))
            _write_csv(spec.out_dir / "data" / f"{tag}_{species}_fit_report.csv", fit_report_rows(learned[species]))
        m = config.occupied_fraction
        models = {
            "mean_field": mean_field_sir_model(p_inf, p_rec, m),
            "learned": model_from_equations(("S", "I"), (learned["S"].equation(), learned["I"].equation()),
                                            {"source": "learned", **lasso.describe()}),
        }
        data = trace.values()
        initial = [trace.density["S"][0], trace.density["I"][0]]
        scaled_t = trace.times * p_rec
        curves = {}
        for name, model in models.items():
            si, diagnostics = integrate_rk4(model, initial, trace.times)
            per_species = [float("nan")] * 2 if diagnostics.diverged else species_mse(si, data[:, :2])
            r0 = mean_field_r0(m, p_inf, p_rec) if name == "mean_field" else compute_r0(model.equation("I"))
            if name == "learned":
                r0_learned.append(r0)
            text = format_model(model)
            report.save_model(f"{tag}_{name}", model)
            report.add_row(config, spec.n_replicates, pi=p_inf, pr=p_rec, model=name,
                           s_equation=text["S"], i_equation=text["I"],
                           mse_s=float(per_species[0]), mse_i=float(per_species[1]),
                           diverged=int(diagnostics.diverged), r0=r0,
                           r0_rounded=round(r0, 2) if math.isfinite(r0) else float("nan"))
            full = with_recovered(si)
            curves[name] = {"S": (scaled_t, full[:, 0]), "I": (scaled_t, full[:, 1])}
        path = plotting.plot_sir_fit(report.figure_path(tag), scaled_t,
                                     {"S": trace.density["S"], "I": trace.density["I"]}, curves,
                                     title=f"PI={p_inf:g}, PR={p_rec:g}")
        report.save_figure(path)
    report.extra["r0_learned"] = r0_learned
    return report.finish()


_RUNNERS: Dict[str, Callable[[CaseStudySpec], Dict]] = {
    "tutorial": run_tutorial,
    "cs1": run_cs1,
    "cs2": run_cs2,
    "cs3a": run_cs3a,
    "cs3b": run_cs3b,
    "cs4": run_cs4,
    "cs5": run_cs5,
}


def run_case_study(spec: CaseStudySpec) -> Dict:
    logger.info("case study %s scale=%s seed=%d", spec.id, spec.scale, spec.seed)
    return _RUNNERS[spec.id](spec)


# ---------------------------------------------------------------------------
# single-step workflows shared by the CLI and the tool server
# ---------------------------------------------------------------------------

def simulate_to_dir(config, n_replicates: int, seed: int, out_dir, correlation: bool = False,
                    workers: Optional[int] = None) -> Dict:
    """Run an ensemble and write ``trace.csv`` plus ``config.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    trace = run_ensemble(config, n_replicates, seed, correlation=correlation, workers=workers)
    path = trace.to_csv(out_dir / "trace.csv")
    summary = {
        "trace": str(path),
        "config": {**config_to_dict(config), "master_seed": seed, "n_replicates": n_replicates},
        "final": {k: float(v[-1]) for k, v in trace.columns().items()},
    }
    (out_dir / "config.json").write_text(json.dumps(summary["config"], indent=2) + "\n", encoding="utf-8")
    return summary


def learn_trace(trace: Trace, library, spec: SolverSpec, seed: int,
                species: Optional[Sequence[str]] = None, prune: bool = True) -> Dict[str, LearnedModel]:
    """Learn one equation per species; for S, I, R traces R is left out (R = 1 - S - I)."""
    if species is None:
        species = [s for s in trace.species if not (s == "R" and {"S", "I"} <= set(trace.species))]
    missing = [s for s in species if s not in trace.density]
    if missing:
        raise ConfigError(f"trace has no species {missing}")
    if not trace.is_uniform():
        raise ConfigError("learning needs a uniform time grid")
    lib = build_library(trace.columns(), library)
    learned = {}
    for j, name in enumerate(species):
        deriv = differentiate(trace.times, trace.density[name])
        if prune:
            learned[name] = prune_and_vote(lib, deriv.values, spec, derive_seed(seed, j))
        else:
            learned[name] = fit_single(lib, deriv.values, spec)
    return learned


def learn_to_dir(trace: Trace, library, spec: SolverSpec, seed: int, out_dir,
                 species: Optional[Sequence[str]] = None, prune: bool = True) -> Dict:
    """Learn, replay against the data and write ``model.json`` and ``fit_report.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    learned = learn_trace(trace, library, spec, seed, species, prune)
    names = tuple(learned)
    model = model_from_equations(names, [learned[s].equation() for s in names],
                                 {"source": "learned", "seed": seed, **spec.describe()})
    columns = trace.columns()
    signals = {k: np.nan_to_num(v, nan=1.0) for k, v in columns.items() if k not in names}
    data = np.column_stack([trace.density[s] for s in names])
    diagnostics = FitDiagnostics()
    try:
        _, diagnostics = _replay(model, data[0], trace.times, data, signals=signals)
    except ConfigError as e:
        logger.warning("learned model not replayed: %s", e)
    (out_dir / "model.json").write_text(model_to_json(model) + "\n", encoding="utf-8")
    rows = []
    for name in names:
        rows.extend({"species": name, **row} for row in fit_report_rows(learned[name]))
    if rows:
        _write_csv(out_dir / "fit_report.csv", rows)
    return {
        "model": str(out_dir / "model.json"),
        "fit_report": str(out_dir / "fit_report.csv") if rows else None,
        "equations": format_model(model),
        "votes": {name: learned[name].votes for name in names},
        "empty": [name for name in names if learned[name].empty],
        "mse": None if math.isnan(diagnostics.mse) else diagnostics.mse,
        "diverged": diagnostics.diverged,
    }


def select_to_dir(c_trace: Trace, f_trace: Optional[Trace], n_splits: int, seed: int, out_dir) -> Dict:
    """Vote between the candidate libraries and write ``selection.json`` and ``splits.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    theta1, theta2 = build_candidate_libraries(c_trace, f_trace)
    deriv = differentiate(c_trace.times, c_trace.density["C"])
    result = vote_select(theta1, theta2, deriv.values, n_splits=n_splits, seed=seed)
    selection = result.to_dict()
    pp_hat, pd_hat = result.rate_estimates()
    selection["rate_estimates"] = {"pp": pp_hat, "pd": pd_hat}
    (out_dir / "selection.json").write_text(json.dumps(selection, indent=2) + "\n", encoding="utf-8")
    _write_csv(out_dir / "splits.csv", result.residual_rows())
    return {**selection, "selection": str(out_dir / "selection.json"), "splits": str(out_dir / "splits.csv")}
