"""Plot-ready data files and the PNG report rendered from them."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .tables import Table, read_table, write_table

__all__ = ["emit_plot_data", "render_report"]

RANDOM_L_ACC = 0.20  # n / m for the desk-scale shape m = 5n


def _pivot(table: Table, key: str, value_cols):
    idx = {c: table.columns.index(c) for c in (key, *value_cols)}
    return [tuple(r[idx[c]] for c in (key, *value_cols)) for r in table.rows]


def emit_plot_data(res, out_dir) -> list[Path]:
    """One delimited file per figure analogue; columns documented in the header."""
    out = Path(out_dir)
    meta = {"experiment": res.spec.name, "kind": res.spec.kind}
    meta.update(res.hashes)
    files = []
    kind = res.spec.kind
    if kind in ("recovery_sweep", "ablation"):
        acc = res.tables["accuracy"]
        first = acc.columns[0]
        rows = [(r[0], r[1], r[3], r[4]) for r in acc.rows]
        name = "plot_accuracy_vs_d.tsv" if kind == "recovery_sweep" else "plot_ablation.tsv"
        desc = (f"{first}: engine label; d: nonzeros per signal; "
                "s_acc: exact top-d support match rate; l_acc: mean fraction of support inside the top-n scores")
        files.append(write_table(out / name, Table((first, "d", "s_acc", "l_acc"), rows, meta, desc)))
        if res.timing is not None:
            files.append(write_table(out / "plot_timing.tsv", Table(
                res.timing.columns, res.timing.rows, meta,
                "engine; samples timed; mean and median wall seconds per sample")))
    elif kind == "cor3_study":
        rip = res.tables["cor3_rip"]
        by_eps = {}
        for eps, _, pre, post in rip.rows:
            by_eps.setdefault(eps, []).append((pre, post))
        rows = []
        for eps, engine, d, trials, rate in res.tables["cor3_recovery"].rows:
            pre, post = np.mean(by_eps[eps], axis=0)
            rows.append((eps, engine, d, rate, float(pre), float(post)))
        files.append(write_table(out / "plot_cor3_epsilon.tsv", Table(
            ("epsilon", "engine", "d", "success_rate", "delta2_pre_mean", "delta2_post_mean"), rows, meta,
            "epsilon: detail scale; success_rate: exact support recovery; delta2_*: mean delta_2 over seeds")))
    elif kind == "aiht_study":
        t = res.tables["aiht"]
        files.append(write_table(out / "plot_aiht.tsv", Table(
            t.columns, t.rows, meta, "engine; trials; exact support success rate; cluster-level match rate")))
    elif kind == "stereo_study":
        t = res.tables["stereo"]
        files.append(write_table(out / "plot_stereo.tsv", Table(
            t.columns, t.rows, meta, "engine; points; mean and median angular error in degrees")))
    elif kind == "train":
        t = res.tables["training"]
        files.append(write_table(out / "plot_training.tsv", Table(
            t.columns, t.rows, meta, "epoch; learning rate; mean mini-batch loss")))
    return files


def _accuracy_figure(table, path, title):
    import matplotlib.pyplot as plt

    first = table.columns[0]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for name in sorted(set(table.column(first))):
        rows = sorted(r for r in table.rows if r[0] == name)
        d = [r[1] for r in rows]
        axes[0].plot(d, [r[2] for r in rows], marker="o", label=name)
        axes[1].plot(d, [r[3] for r in rows], marker="o", label=name)
    axes[1].axhline(RANDOM_L_ACC, color="0.5", ls=":", lw=1, label="random")
    for ax, lab in zip(axes, ("strict accuracy", "loose accuracy")):
        ax.set_xlabel("d")
        ax.set_ylabel(lab)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    axes[1].legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _bar_figure(labels, values, ylabel, path, title, log=False):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.bar(labels, values, color="0.35")
    if log:
        ax.set_yscale("log")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(results_dir, out_dir=None) -> list[Path]:
    """Render a PNG for every ``plot_*.tsv`` found in ``results_dir``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(results_dir)
    dst = Path(out_dir) if out_dir else src
    dst.mkdir(parents=True, exist_ok=True)
    made = []
    for path in sorted(src.glob("plot_*.tsv")):
        t = read_table(path)
        png = dst / (path.stem + ".png")
        stem = path.stem[len("plot_"):]
        if stem in ("accuracy_vs_d", "ablation"):
            _accuracy_figure(t, png, stem.replace("_", " "))
        elif stem == "timing":
            _bar_figure(t.column("engine"), t.column("median_seconds"), "median seconds / sample", png,
                        "per-sample runtime", log=True)
        elif stem == "stereo":
            _bar_figure(t.column("engine"), t.column("mean_error_deg"), "mean angular error (deg)", png,
                        "normal estimation")
        elif stem == "aiht":
            _bar_figure(t.column("engine"), t.column("success_rate"), "exact support recovery", png,
                        "clustered dictionaries")
        elif stem == "cor3_epsilon":
            fig, ax = plt.subplots(figsize=(5, 3.6))
            for eng in sorted(set(t.column("engine"))):
                rows = sorted((r[0], r[3]) for r in t.rows if r[1] == eng)
                ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o", label=eng)
            ax.set_xscale("log")
            ax.set_xlabel("epsilon")
            ax.set_ylabel("success rate")
            ax.legend(fontsize=8)
            fig.tight_layout()
            fig.savefig(png, dpi=120)
            plt.close(fig)
        elif stem == "training":
            fig, ax = plt.subplots(figsize=(5, 3.6))
            ax.plot(t.column("epoch"), t.column("loss"))
            ax.set_xlabel("epoch")
            ax.set_ylabel("loss")
            fig.tight_layout()
            fig.savefig(png, dpi=120)
            plt.close(fig)
        else:
            continue
        made.append(png)
    return made
