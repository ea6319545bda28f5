"""Choosing between the mean-field logistic and the correlation-modified logistic model.

Both candidate libraries are fit by least squares on the same random half of
the data; the other half casts a vote for the candidate with the smaller test
residual. Repeating this over many splits gives a vote count per candidate.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .eql_core import LibraryMatrix, build_library, least_squares, split_rng, split_rows
from .errors import ConfigError
from .lattice_abm import Trace

logger = logging.getLogger(__name__)

CANDIDATES = ("mean_field", "modified")
MEAN_FIELD_TERMS = ("C(1-C)", "C")
MODIFIED_TERMS = ("C(1-FC)", "C")


def build_candidate_libraries(c_trace: Trace, f_trace: Optional[Trace] = None) -> Tuple[LibraryMatrix, LibraryMatrix]:
    """Theta1 = [C(1-C), C] and Theta2 = [C(1-FC), C] on a shared time grid.

    F is taken from ``f_trace`` (its correlation, or its only column) when given,
    otherwise from the correlation recorded in ``c_trace``.
    """
    if "C" not in c_trace.density:
        raise ConfigError("candidate libraries need a density trace with a C column")
    if f_trace is None:
        f = c_trace.correlation
    else:
        if f_trace.times.shape != c_trace.times.shape or not np.allclose(f_trace.times, c_trace.times,
                                                                         rtol=1e-12, atol=0.0):
            raise ConfigError("C and F traces do not share a time grid")
        if f_trace.correlation is not None:
            f = f_trace.correlation
        elif len(f_trace.species) == 1:
            f = f_trace.density[f_trace.species[0]]
        else:
            raise ConfigError("F trace has no correlation column")
    if f is None:
        raise ConfigError("no occupancy correlation F recorded for this trace")
    c = c_trace.density["C"]
    if np.any(~np.isfinite(f) & (c > 0)):
        raise ConfigError("F is undefined at times where C > 0")
    f = np.where(np.isfinite(f), f, 1.0)
    columns = {"C": c, "F": f}
    return build_library(columns, MEAN_FIELD_TERMS), build_library(columns, MODIFIED_TERMS)


@dataclass(frozen=True)
class SplitResidual:
    split_id: int
    residuals: Tuple[float, float]
    vote: int
    tie: bool


@dataclass(frozen=True)
class SelectionResult:
    """Vote counts per candidate plus the winner's mean coefficients over the splits it won."""

    candidates: Tuple[str, ...]
    terms: Tuple[Tuple[str, ...], ...]
    votes: Tuple[int, ...]
    winner: int
    coefficients: np.ndarray
    candidate_coefficients: Tuple[Optional[np.ndarray], ...]
    splits: Tuple[SplitResidual, ...]
    seed: int

    @property
    def winner_name(self) -> str:
        return self.candidates[self.winner]

    @property
    def winner_terms(self) -> Tuple[str, ...]:
        return self.terms[self.winner]

    def equation(self) -> Tuple[Tuple[str, float], ...]:
        return tuple(zip(self.winner_terms, (float(c) for c in self.coefficients)))

    def rate_estimates(self) -> Tuple[float, float]:
        """(Pp, Pd) read off the winner: the crowding-term coefficient and minus the C coefficient."""
        return float(self.coefficients[0]), float(-self.coefficients[1])

    def to_dict(self) -> Dict:
        return {
            "candidates": [
                {
                    "name": name,
                    "votes": votes,
                    "mean_coeffs": None if coeffs is None else dict(zip(terms, (float(c) for c in coeffs))),
                }
                for name, terms, votes, coeffs in zip(self.candidates, self.terms, self.votes,
                                                       self.candidate_coefficients)
            ],
            "winner": self.winner_name,
            "seed": self.seed,
        }

    def residual_rows(self) -> List[Dict]:
        return [
            {
                "split_id": s.split_id,
                f"{self.candidates[0]}_residual": repr(s.residuals[0]),
                f"{self.candidates[1]}_residual": repr(s.residuals[1]),
                "vote": self.candidates[s.vote],
                "tie": int(s.tie),
            }
            for s in self.splits
        ]


def vote_select(theta1, theta2, b, n_splits: int = 100, seed: int = 0) -> SelectionResult:
    """Least-squares fit of both candidates per split, one vote per split to the smaller test residual.

    An exact residual tie votes for the mean-field candidate (index 0), and so
    does a tie in the vote totals.
    """
    libs = [theta1, theta2]
    mats = [np.asarray(m.theta if isinstance(m, LibraryMatrix) else m, dtype=float) for m in libs]
    terms = tuple(
        m.labels if isinstance(m, LibraryMatrix) else default
        for m, default in zip(libs, (MEAN_FIELD_TERMS, MODIFIED_TERMS))
    )
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if n < 4:
        raise ConfigError(f"model selection needs at least 4 rows, got {n}")
    if any(m.shape[0] != n for m in mats):
        raise ConfigError("candidate libraries and derivative data differ in length")
    if n_splits < 1:
        raise ConfigError("split count must be >= 1")

    fits: List[List[np.ndarray]] = [[], []]
    splits = []
    ties = 0
    for s in range(n_splits):
        train, test = split_rows(n, split_rng(seed, s))
        res = []
        coeffs = []
        for m in mats:
            xi = least_squares(m[train], b[train])
            coeffs.append(xi)
            res.append(float(np.linalg.norm(b[test] - m[test] @ xi)))
        tie = res[0] == res[1]
        vote = 0 if res[0] <= res[1] else 1
        if tie:
            ties += 1
            logger.debug("split %d residual tie, vote to %s", s, CANDIDATES[0])
        fits[vote].append(coeffs[vote])
        splits.append(SplitResidual(s, (res[0], res[1]), vote, tie))

    votes = (len(fits[0]), len(fits[1]))
    winner = 0 if votes[0] >= votes[1] else 1
    if ties:
        logger.info("%d of %d splits tied; votes went to %s", ties, n_splits, CANDIDATES[0])
    if votes[0] == votes[1]:
        logger.info("vote totals tied at %d; selecting %s", votes[0], CANDIDATES[0])
    candidate_coefficients = tuple(np.mean(f, axis=0) if f else None for f in fits)
    logger.info("selected %s votes=%s seed=%d", CANDIDATES[winner], votes, seed)
    return SelectionResult(
        candidates=CANDIDATES,
        terms=terms,
        votes=votes,
        winner=winner,
        coefficients=candidate_coefficients[winner],
        candidate_coefficients=candidate_coefficients,
        splits=tuple(splits),
        seed=seed,
    )
