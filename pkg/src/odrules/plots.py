"""Optional SVG line charts of the metric series (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path

FIGURES = {
    "datasets": ("final", "rules_only", "rules_plus_final"),
    "variance": None,  # final plus every var_* series
}


def plot_series(series: dict[str, list[tuple]], out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "odrules"  # stable element ids
    out = Path(out_dir)
    written = []
    for metric, points in series.items():
        per_rule = metric.endswith("_per_rule")
        groups = {"variance": None} if per_rule else FIGURES
        for fig_name, kinds in groups.items():
            lines: dict[str, list[tuple[int, float]]] = {}
            for depth, kind, value in points:
                if kinds is None and not (kind.startswith("var_") or (kind == "final" and not per_rule)):
                    continue
                if kinds is not None and kind not in kinds:
                    continue
                lines.setdefault(kind, []).append((depth, float(value)))
            if not lines:
                continue
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for kind, pts in lines.items():
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", markersize=3, label=kind)
            ax.set_xlabel("tree depth")
            ax.set_ylabel(metric)
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = out / f"plot_{fig_name}_{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
