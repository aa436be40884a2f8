"""SVG figures for experiment summaries."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed salt and no date keep repeated renders byte-identical.
plt.rcParams["svg.hashsalt"] = "gcbandit"
_META = {"Date": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def regret_figure(summary, config_hash: str, overlay: bool = True):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (mean, se) in summary.curves.items():
        t = np.arange(1, mean.size + 1)
        (line,) = ax.plot(t, mean, label=label)
        ax.fill_between(t, mean - se, mean + se, color=line.get_color(), alpha=0.25, linewidth=0)
        if overlay and label in summary.overlays and len(summary.overlays[label]):
            rows = summary.overlays[label]
            ax.plot(rows[:, 0], rows[:, 1], "--", color=line.get_color(), label=f"{label} upper bound")
            ax.plot(rows[:, 0], rows[:, 2], ":", color=line.get_color(), label=f"{label} lower bound")
    if overlay and summary.overlays:
        ax.set_yscale("log")
    ax.set_xlabel("round t")
    ax.set_ylabel(f"cumulative regret [{config_hash}]")
    ax.legend(title=config_hash, fontsize="small")
    fig.tight_layout()
    return fig


def _param_figure(summary, attr: str, config_hash: str):
    groups = defaultdict(list)
    for r in summary.rows:
        other = "L" if attr == "d" else "d"
        groups[(r.agent, r.cls, other, getattr(r, other))].append((getattr(r, attr), r.mean_final, r.se_final))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (agent, cls, other, val), pts in sorted(groups.items()):
        pts.sort()
        x, m, s = (np.array(v, dtype=float) for v in zip(*pts))
        ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=f"{agent} {cls} {other}={val}")
    ax.set_xlabel(attr)
    ax.set_ylabel(f"R(T) [{config_hash}]")
    ax.legend(title=config_hash, fontsize="small")
    fig.tight_layout()
    return fig


def emit_plots(summary, out_dir, overlay: bool = True, config_hash: str = "") -> list[Path]:
    """Render one SVG per figure family present in ``summary``.

    The R(T)-vs-d and R(T)-vs-L figures appear only when the summary spans
    more than one value of that parameter.
    """
    if summary is None or len(summary) == 0 or not summary.curves:
        raise ValueError("cannot plot an empty summary")
    out = Path(out_dir)
    files = [_save(regret_figure(summary, config_hash, overlay), out / "regret.svg")]
    for attr in ("d", "L"):
        if len({getattr(r, attr) for r in summary.rows}) > 1:
            files.append(_save(_param_figure(summary, attr, config_hash), out / f"regret_vs_{attr}.svg"))
    return files
