"""Optional figures for ``cwcsim run --plot`` (needs matplotlib).

Every observable gets a line over time.  Observables sharing a prefix
(``S_L0``, ``S_L1`` ... or ``oxo3_S1`` ... ``oxo3_S4``) are also drawn as a
time-by-member heat map, the flat counterpart of a surface plot.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def groups(names) -> dict[str, list[int]]:
    """Observables grouped by the text before their last underscore."""
    out: dict[str, list[int]] = {}
    for k, name in enumerate(names):
        if "_" in name:
            out.setdefault(name.rsplit("_", 1)[0], []).append(k)
    return {p: ks for p, ks in out.items() if len(ks) > 1}


def render(out_dir, times, names, mean, spread=None, title="") -> list[Path]:
    """Write ``observables.png`` and one heat map per observable group."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    times = np.asarray(times, dtype=float)
    mean = np.asarray(mean, dtype=float)
    paths = []

    fig, ax = plt.subplots(figsize=(8, 5))
    for k, name in enumerate(names):
        ax.plot(times, mean[:, k], label=name, lw=1.2)
        if spread is not None:
            lo, hi = mean[:, k] - spread[:, k], mean[:, k] + spread[:, k]
            ax.fill_between(times, lo, hi, alpha=0.15)
    ax.set_xlabel("time")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    path = out_dir / "observables.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    for prefix, ks in groups(names).items():
        fig, ax = plt.subplots(figsize=(8, 3 + 0.2 * len(ks)))
        im = ax.imshow(mean[:, ks].T, aspect="auto", origin="lower", interpolation="nearest",
                       extent=(times[0], times[-1] if len(times) > 1 else times[0] + 1, -0.5, len(ks) - 0.5))
        ax.set_yticks(range(len(ks)), [names[k] for k in ks])
        ax.set_xlabel("time")
        ax.set_title(f"{title} {prefix}".strip())
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        path = out_dir / f"{prefix}_heatmap.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
