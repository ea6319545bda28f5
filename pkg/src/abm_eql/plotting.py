"""SVG figures for case-study reports (matplotlib, Agg backend)."""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt and no date stamp keep reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = "abm-eql"
_SVG_METADATA = {"Date": None}

Curve = Tuple[np.ndarray, np.ndarray]


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug("wrote figure %s", path)
    return path


def plot_density_fit(path, t_data, c_data, curves: Mapping[str, Curve], title: str = "",
                     growth: Optional[Mapping[str, Curve]] = None, held_out: Optional[Curve] = None) -> Path:
    """ABM density (dots) against model curves on nondimensional time, with an optional G(C) panel."""
    if growth:
        fig, (ax, ax_g) = plt.subplots(1, 2, figsize=(9, 3.6), gridspec_kw={"width_ratios": [2, 1]})
    else:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        ax_g = None
    ax.plot(t_data, c_data, "o", ms=3, color="tab:blue", label="ABM")
    if held_out is not None:
        ax.plot(held_out[0], held_out[1], "*", ms=5, color="tab:green", label="ABM (test)")
    styles = ["-", "--", ":", "-."]
    colors = ["black", "tab:red", "tab:purple", "tab:orange"]
    for k, (name, (t, c)) in enumerate(curves.items()):
        ax.plot(t, c, styles[k % 4], color=colors[k % 4], lw=1.5, label=name)
    ax.set_xlabel("T")
    ax.set_ylabel("C")
    ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    if ax_g is not None:
        for k, (name, (c, g)) in enumerate(growth.items()):
            ax_g.plot(c, g, styles[k % 4], color=colors[k % 4], lw=1.2, label=name)
        ax_g.axhline(0.0, color="grey", lw=0.5)
        ax_g.set_xlabel("C")
        ax_g.set_ylabel("G(C)")
    fig.tight_layout()
    return _save(fig, path)


def plot_sir_fit(path, t_data, data: Mapping[str, np.ndarray], curves: Mapping[str, Dict[str, Curve]],
                 title: str = "") -> Path:
    """S and I data (dots) against mean-field (solid) and learned (dashed) curves."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    colors = {"S": "tab:blue", "I": "tab:green", "R": "tab:grey"}
    for species, values in data.items():
        ax.plot(t_data, values, "o", ms=3, color=colors.get(species, "black"), label=f"{species} ABM")
    styles = ["-", "--", ":"]
    for k, (name, per_species) in enumerate(curves.items()):
        for species, (t, v) in per_species.items():
            ax.plot(t, v, styles[k % 3], color=colors.get(species, "black"), lw=1.5, label=f"{species} {name}")
    ax.set_xlabel("T")
    ax.set_ylabel("fraction of agents")
    ax.set_title(title)
    ax.legend(fontsize=7, frameon=False, ncol=2)
    fig.tight_layout()
    return _save(fig, path)


def plot_votes(path, labels: Sequence[str], votes: Sequence[Tuple[int, int]], names: Sequence[str]) -> Path:
    """Stacked vote counts per sweep point."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    x = np.arange(len(labels))
    first = np.array([v[0] for v in votes])
    second = np.array([v[1] for v in votes])
    ax.bar(x, first, color="tab:grey", label=names[0])
    ax.bar(x, second, bottom=first, color="tab:red", label=names[1])
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("votes")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return _save(fig, path)
