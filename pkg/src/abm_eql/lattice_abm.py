"""Two-dimensional lattice ABM engine.

Birth-death-migration (BDM) and SIR dynamics are simulated exactly with the
Gillespie algorithm on an X x X square lattice with volume exclusion and
no-flux boundaries. Event loops are numba kernels working on a flattened copy
of the site array plus two index maps (agent slot -> site, site -> agent slot)
so that a uniformly random agent can be drawn in O(1).

Randomness comes from a ``numpy.random.Generator`` (PCG64) that is passed into
the kernels, so a (config, seed) pair fully determines a trace.
"""

import csv
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numba import njit

from .config import BdmConfig, SimulationConfig, SirConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

EMPTY = 0
AGENT = 1
SUSCEPTIBLE = 1
INFECTED = 2
RECOVERED = 3

BDM_SPECIES = ("C",)
SIR_SPECIES = ("S", "I", "R")


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _neighbour(site, direction, size):
    """Flat index of the von Neumann neighbour in ``direction`` (0..3), -1 if off-lattice."""
    r = site // size
    c = site % size
    if direction == 0:
        r -= 1
    elif direction == 1:
        r += 1
    elif direction == 2:
        c -= 1
    else:
        c += 1
    if r < 0 or r >= size or c < 0 or c >= size:
        return -1
    return r * size + c


@njit(cache=True, nogil=True)
def _occupied_neighbours(flat, site, size):
    count = 0
    for d in range(4):
        nb = _neighbour(site, d, size)
        if nb >= 0 and flat[nb] != EMPTY:
            count += 1
    return count


@njit(cache=True, nogil=True)
def _uniform_index(rng, n):
    k = int(rng.random() * n)
    if k >= n:
        k = n - 1
    return k


@njit(cache=True, nogil=True)
def _waiting_time(rng, propensity):
    # 1 - U lies in (0, 1], so the log is finite
    return -np.log(1.0 - rng.random()) / propensity


@njit(cache=True, nogil=True)
def _place(flat, size, slots, where, counts, pairs, site):
    pairs[0] += _occupied_neighbours(flat, site, size)
    flat[site] = AGENT
    n = counts[0]
    slots[n] = site
    where[site] = n
    counts[0] = n + 1


@njit(cache=True, nogil=True)
def _remove(flat, size, slots, where, counts, pairs, site):
    flat[site] = EMPTY
    pairs[0] -= _occupied_neighbours(flat, site, size)
    k = where[site]
    last = counts[0] - 1
    moved = slots[last]
    slots[k] = moved
    where[moved] = k
    where[site] = -1
    counts[0] = last


@njit(cache=True, nogil=True)
def _write_bdm(out, rec, n, pairs, n_sites, chi2):
    out[0, rec] = n / n_sites
    if n > 0:
        out[1, rec] = pairs * (float(n_sites) * n_sites) / (chi2 * float(n) * n)
    else:
        out[1, rec] = np.nan


@njit(cache=True, nogil=True)
def _bdm_kernel(flat, size, slots, where, counts, pairs, pp, pd, pm,
                t, t_end, max_events, record_times, rec, out, rng):
    n_sites = size * size
    chi2 = 2.0 * size * (size - 1)
    rate = pp + pm + pd
    events = 0
    n_rec = record_times.shape[0]
    while True:
        n = counts[0]
        if n == 0 or n == n_sites or rate <= 0.0:
            break
        if max_events >= 0 and events >= max_events:
            break
        t_new = t + _waiting_time(rng, rate * n)
        if t_new > t_end:
            break
        while rec < n_rec and record_times[rec] < t_new:
            _write_bdm(out, rec, n, pairs[0], n_sites, chi2)
            rec += 1
        t = t_new

        site = slots[_uniform_index(rng, n)]
        r = rng.random() * rate
        if r < pp:
            target = _neighbour(site, _uniform_index(rng, 4), size)
            if target >= 0 and flat[target] == EMPTY:
                _place(flat, size, slots, where, counts, pairs, target)
        elif r < pp + pm:
            target = _neighbour(site, _uniform_index(rng, 4), size)
            if target >= 0 and flat[target] == EMPTY:
                _remove(flat, size, slots, where, counts, pairs, site)
                _place(flat, size, slots, where, counts, pairs, target)
        else:
            _remove(flat, size, slots, where, counts, pairs, site)
        events += 1

    while rec < n_rec:
        _write_bdm(out, rec, counts[0], pairs[0], n_sites, chi2)
        rec += 1
    return t, events


@njit(cache=True, nogil=True)
def _sir_kernel(flat, size, slots, where, counts, infected, inf_pos, p_inf, p_rec, pm,
                t, t_end, max_events, record_times, rec, out, rng):
    n = counts[0] + counts[1] + counts[2]
    events = 0
    n_rec = record_times.shape[0]
    while True:
        n_i = counts[1]
        if n_i == 0:
            break
        if max_events >= 0 and events >= max_events:
            break
        move_rate = pm * n
        a = move_rate + (p_inf + p_rec) * n_i
        if a <= 0.0:
            break
        t_new = t + _waiting_time(rng, a)
        if t_new > t_end:
            break
        while rec < n_rec and record_times[rec] < t_new:
            for j in range(3):
                out[j, rec] = counts[j] / n
            rec += 1
        t = t_new

        r = rng.random() * a
        if r < move_rate:
            agent = _uniform_index(rng, n)
            site = slots[agent]
            target = _neighbour(site, _uniform_index(rng, 4), size)
            if target >= 0 and flat[target] == EMPTY:
                flat[target] = flat[site]
                flat[site] = EMPTY
                slots[agent] = target
                where[target] = agent
                where[site] = -1
        else:
            k = _uniform_index(rng, n_i)
            agent = infected[k]
            site = slots[agent]
            if r - move_rate < p_inf * n_i:
                target = _neighbour(site, _uniform_index(rng, 4), size)
                if target >= 0 and flat[target] == SUSCEPTIBLE:
                    flat[target] = INFECTED
                    counts[0] -= 1
                    counts[1] += 1
                    other = where[target]
                    infected[n_i] = other
                    inf_pos[other] = n_i
            else:
                flat[site] = RECOVERED
                counts[1] -= 1
                counts[2] += 1
                last = n_i - 1
                moved = infected[last]
                infected[k] = moved
                inf_pos[moved] = k
                inf_pos[agent] = -1
        events += 1

    while rec < n_rec:
        for j in range(3):
            out[j, rec] = counts[j] / n
        rec += 1
    return t, events


# ---------------------------------------------------------------------------
# lattice state
# ---------------------------------------------------------------------------

class Lattice:
    """X x X lattice of site states plus the bookkeeping the event kernels maintain.

    ``counts`` holds the cached per-species occupancy: one entry (agents) for
    BDM, three entries (S, I, R) for SIR. ``pair_count`` is the number of
    unordered adjacent site pairs that are both occupied.
    """

    def __init__(self, sites: np.ndarray, kind: str = "bdm"):
        if kind not in ("bdm", "sir"):
            raise ConfigError(f"Unknown lattice kind: {kind}")
        sites = np.ascontiguousarray(sites, dtype=np.int8)
        if sites.ndim != 2 or sites.shape[0] != sites.shape[1]:
            raise ConfigError(f"lattice must be square, got shape {sites.shape}")
        if sites.shape[0] < 2:
            raise ConfigError(f"lattice size X must be >= 2, got {sites.shape[0]}")
        allowed = (EMPTY, AGENT) if kind == "bdm" else (EMPTY, SUSCEPTIBLE, INFECTED, RECOVERED)
        if not np.isin(sites, allowed).all():
            raise ConfigError(f"site states must be one of {allowed} for {kind}")

        self.kind = kind
        self.sites = sites
        size = sites.shape[0]
        flat = self.flat
        occupied = np.flatnonzero(flat)
        self.slots = np.zeros(size * size, dtype=np.int64)
        self.slots[: occupied.size] = occupied
        self.where = np.full(size * size, -1, dtype=np.int64)
        self.where[occupied] = np.arange(occupied.size)
        self.counts = self.census()
        self.pairs = np.array([self.pair_census()], dtype=np.int64)

        self.infected = np.zeros(size * size, dtype=np.int64)
        self.inf_pos = np.full(size * size, -1, dtype=np.int64)
        if kind == "sir":
            agents = np.flatnonzero(flat[occupied] == INFECTED)
            self.infected[: agents.size] = agents
            self.inf_pos[agents] = np.arange(agents.size)

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.sites.reshape(-1)

    @property
    def species(self) -> Tuple[str, ...]:
        return BDM_SPECIES if self.kind == "bdm" else SIR_SPECIES

    @property
    def occupied_count(self) -> int:
        return int(self.counts.sum())

    @property
    def pair_count(self) -> int:
        return int(self.pairs[0])

    def census(self) -> np.ndarray:
        """Per-species counts recomputed from the site array."""
        if self.kind == "bdm":
            return np.array([np.count_nonzero(self.sites)], dtype=np.int64)
        return np.array(
            [np.count_nonzero(self.sites == s) for s in (SUSCEPTIBLE, INFECTED, RECOVERED)],
            dtype=np.int64,
        )

    def pair_census(self) -> int:
        occ = self.sites != EMPTY
        return int(np.count_nonzero(occ[:, 1:] & occ[:, :-1]) + np.count_nonzero(occ[1:, :] & occ[:-1, :]))

    def densities(self) -> Dict[str, float]:
        if self.kind == "bdm":
            return {"C": self.counts[0] / self.size**2}
        n = self.occupied_count
        return {name: self.counts[j] / n for j, name in enumerate(SIR_SPECIES)}


def init_lattice(config: SimulationConfig, rng: Optional[np.random.Generator] = None) -> Lattice:
    """Place agents uniformly at random, without replacement."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    size = config.size
    n_sites = size * size
    sites = np.zeros(n_sites, dtype=np.int8)
    if isinstance(config, BdmConfig):
        k = int(round(config.init_fraction * n_sites))
        sites[rng.choice(n_sites, size=k, replace=False)] = AGENT
        return Lattice(sites.reshape(size, size), "bdm")
    if isinstance(config, SirConfig):
        n_s = int(round(config.init_s_fraction * n_sites))
        n_i = int(round(config.init_i_fraction * n_sites))
        if n_s + n_i > n_sites:
            raise ConfigError("initial S and I counts exceed the number of sites")
        chosen = rng.choice(n_sites, size=n_s + n_i, replace=False)
        sites[chosen[:n_s]] = SUSCEPTIBLE
        sites[chosen[n_s:]] = INFECTED
        return Lattice(sites.reshape(size, size), "sir")
    raise ConfigError(f"Unsupported config type: {type(config).__name__}")


def occupancy_correlation(lattice: Lattice) -> float:
    """F = C2 X^4 / (chi2 C^2), the clustering of occupied sites; NaN when the lattice is empty."""
    n = np.count_nonzero(lattice.sites)
    if n == 0:
        return float("nan")
    size = lattice.size
    n_sites = float(size * size)
    chi2 = 2.0 * size * (size - 1)
    return lattice.pair_census() * (n_sites * n_sites) / (chi2 * float(n) * n)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Densities (and optionally the occupancy correlation F) on an equispaced time grid."""

    times: np.ndarray
    density: Dict[str, np.ndarray]
    correlation: Optional[np.ndarray] = None
    n_replicates: int = 1

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.density = {k: np.asarray(v, dtype=float) for k, v in self.density.items()}
        n = self.times.shape[0]
        if not self.density:
            raise ConfigError("trace needs at least one species")
        for name, values in self.density.items():
            if values.shape != (n,):
                raise ConfigError(f"species {name} has {values.shape[0]} values for {n} times")
        if self.correlation is not None:
            self.correlation = np.asarray(self.correlation, dtype=float)
            if self.correlation.shape != (n,):
                raise ConfigError("correlation sequence length does not match times")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ConfigError("trace times must be strictly increasing")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be >= 1")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def species(self) -> Tuple[str, ...]:
        return tuple(self.density)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        steps = np.diff(self.times)
        return steps.size > 0 and bool(np.allclose(steps, steps[0], rtol=rtol, atol=0.0))

    def columns(self) -> Dict[str, np.ndarray]:
        """Named signals available to library terms: the species plus F when recorded."""
        cols = dict(self.density)
        if self.correlation is not None:
            cols["F"] = self.correlation
        return cols

    def values(self) -> np.ndarray:
        """Species as an (n, n_species) array."""
        return np.column_stack([self.density[s] for s in self.species])

    def take(self, indices) -> "Trace":
        idx = np.asarray(indices, dtype=int)
        return Trace(
            times=self.times[idx],
            density={k: v[idx] for k, v in self.density.items()},
            correlation=None if self.correlation is None else self.correlation[idx],
            n_replicates=self.n_replicates,
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ["t", *self.species]
        if self.correlation is not None:
            header.append("F")
        header.append("n_replicates")
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                row = [f"{self.times[i]:.17g}"]
                row += [f"{self.density[s][i]:.17g}" for s in self.species]
                if self.correlation is not None:
                    row.append(f"{self.correlation[i]:.17g}")
                row.append(str(self.n_replicates))
                writer.writerow(row)
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Trace":
        path = Path(path)
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as e:
            raise ConfigError(f"cannot read trace {path}: {e}") from None
        if len(rows) < 2:
            raise ConfigError(f"trace {path} has no data rows")
        header = rows[0]
        if header[0] != "t" or header[-1] != "n_replicates":
            raise ConfigError(f"trace {path} header must be t,<species...>[,F],n_replicates")
        try:
            data = np.array([[float(v) for v in row[:-1]] for row in rows[1:]], dtype=float)
            n_replicates = int(rows[1][-1])
        except ValueError as e:
            raise ConfigError(f"trace {path}: {e}") from None
        names = header[1:-1]
        correlation = None
        if names and names[-1] == "F":
            correlation = data[:, len(names)]
            names = names[:-1]
        density = {name: data[:, j + 1] for j, name in enumerate(names)}
        return cls(times=data[:, 0], density=density, correlation=correlation, n_replicates=n_replicates)


def record_times(config: SimulationConfig) -> np.ndarray:
    return np.linspace(0.0, config.t_end, config.n_record)


# ---------------------------------------------------------------------------
# simulation drivers
# ---------------------------------------------------------------------------

_NO_RECORDS = np.empty(0, dtype=np.float64)


def advance_bdm(lattice: Lattice, config: BdmConfig, rng: np.random.Generator,
                t: float = 0.0, max_events: int = 1) -> Tuple[float, int]:
    """Run at most ``max_events`` BDM events in place; returns (time, events executed)."""
    t, events = _bdm_kernel(
        lattice.flat, lattice.size, lattice.slots, lattice.where, lattice.counts, lattice.pairs,
        config.pp, config.pd, config.pm, float(t), np.inf, int(max_events),
        _NO_RECORDS, 0, np.empty((2, 0)), rng,
    )
    return t, events


def advance_sir(lattice: Lattice, config: SirConfig, rng: np.random.Generator,
                t: float = 0.0, max_events: int = 1) -> Tuple[float, int]:
    """Run at most ``max_events`` SIR events in place; returns (time, events executed)."""
    t, events = _sir_kernel(
        lattice.flat, lattice.size, lattice.slots, lattice.where, lattice.counts,
        lattice.infected, lattice.inf_pos, config.pi, config.pr, config.pm,
        float(t), np.inf, int(max_events), _NO_RECORDS, 0, np.empty((3, 0)), rng,
    )
    return t, events


def simulate_bdm(config: BdmConfig, correlation: bool = True) -> Trace:
    """One Gillespie realisation of the BDM process, recorded with zero-order hold."""
    rng = np.random.default_rng(config.seed)
    lattice = init_lattice(config, rng)
    times = record_times(config)
    out = np.empty((2, times.size))
    t, events = _bdm_kernel(
        lattice.flat, lattice.size, lattice.slots, lattice.where, lattice.counts, lattice.pairs,
        config.pp, config.pd, config.pm, 0.0, float(config.t_end), -1,
        times, 0, out, rng,
    )
    if lattice.counts[0] in (0, lattice.size**2):
        logger.debug("bdm replicate terminated early seed=%d t=%.6g count=%d", config.seed, t, lattice.counts[0])
    return Trace(times=times, density={"C": out[0].copy()}, correlation=out[1].copy() if correlation else None)


def simulate_sir(config: SirConfig) -> Trace:
    """One Gillespie realisation of the spatial SIR model; S, I, R are fractions of the agents."""
    rng = np.random.default_rng(config.seed)
    lattice = init_lattice(config, rng)
    times = record_times(config)
    out = np.empty((3, times.size))
    t, events = _sir_kernel(
        lattice.flat, lattice.size, lattice.slots, lattice.where, lattice.counts,
        lattice.infected, lattice.inf_pos, config.pi, config.pr, config.pm,
        0.0, float(config.t_end), -1, times, 0, out, rng,
    )
    if lattice.counts[1] == 0:
        logger.debug("sir replicate ended with no infected seed=%d t=%.6g", config.seed, t)
    return Trace(times=times, density={name: out[j].copy() for j, name in enumerate(SIR_SPECIES)})


def simulate(config: SimulationConfig, correlation: bool = False) -> Trace:
    if isinstance(config, BdmConfig):
        return simulate_bdm(config, correlation=correlation)
    if correlation:
        raise ConfigError("occupancy correlation is only recorded for the BDM process")
    return simulate_sir(config)


def replicate_seed(master_seed: int, index: int) -> int:
    """Seed of replicate ``index``, derived from the master seed independently of run order."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def replicate_config(config: SimulationConfig, master_seed: int, index: int) -> SimulationConfig:
    return config.with_seed(replicate_seed(master_seed, index))


@dataclass
class ReplicateSet:
    """Per-replicate records stacked as (N, n_record) arrays, indexed by replicate number."""

    times: np.ndarray
    density: Dict[str, np.ndarray]
    correlation: Optional[np.ndarray]

    @property
    def n_replicates(self) -> int:
        return next(iter(self.density.values())).shape[0]

    def mean(self) -> Trace:
        correlation = None
        if self.correlation is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                correlation = np.nanmean(self.correlation, axis=0)
        return Trace(
            times=self.times,
            density={k: v.mean(axis=0) for k, v in self.density.items()},
            correlation=correlation,
            n_replicates=self.n_replicates,
        )

    def standard_error(self, species: str) -> np.ndarray:
        values = self.density[species]
        if values.shape[0] < 2:
            return np.zeros(values.shape[1])
        return values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])


def run_replicates(config: SimulationConfig, n_replicates: int, master_seed: int,
                   correlation: bool = False, workers: Optional[int] = None) -> ReplicateSet:
    """Run independent replicates, possibly on a thread pool, and stack them by index."""
    if n_replicates < 1:
        raise ConfigError(f"replicate count must be >= 1, got {n_replicates}")
    configs = [replicate_config(config, master_seed, k) for k in range(n_replicates)]
    if workers is None:
        workers = min(n_replicates, os.cpu_count() or 1)

    def run_one(cfg):
        return simulate(cfg, correlation=correlation)

    logger.info("ensemble start kind=%s replicates=%d seed=%d workers=%d",
                config.kind, n_replicates, master_seed, workers)
    if workers <= 1:
        traces = [run_one(cfg) for cfg in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run_one, configs))

    species = traces[0].species
    density = {s: np.stack([tr.density[s] for tr in traces]) for s in species}
    corr = np.stack([tr.correlation for tr in traces]) if correlation else None
    logger.info("ensemble done kind=%s replicates=%d seed=%d", config.kind, n_replicates, master_seed)
    return ReplicateSet(times=traces[0].times, density=density, correlation=corr)


def run_ensemble(config: SimulationConfig, n_replicates: int, master_seed: int,
                 correlation: bool = False, workers: Optional[int] = None) -> Trace:
    """Pointwise ensemble mean of ``n_replicates`` independent runs."""
    return run_replicates(config, n_replicates, master_seed, correlation, workers).mean()
