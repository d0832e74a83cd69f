"""ROC figure for the comparison report.

Rendering is made byte-stable: the Agg backend, a fixed SVG hash salt and
no date in the file metadata, so identical curves give identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

SVG_SALT = "pcwnet"
STYLE = {
    "svg.hashsalt": SVG_SALT,
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
}
LOW_FPR = 0.35


def roc_figure(curves, path, fpr_target=0.15):
    """Two panels: the full ROC and a zoom on low false-positive rates.

    ``curves`` maps a method name to a RocCurve; the dashed line marks
    ``fpr_target``.
    """
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax, (title, xmax) in zip(axes, [("ROC", 1.0), ("Low false-positive range", LOW_FPR)]):
            for name, curve in curves.items():
                ax.step(curve.fpr, curve.tpr, where="post", lw=1.4,
                        label=f"{name} (AUC {curve.auc:.3f})")
            ax.axvline(fpr_target, color="0.4", ls="--", lw=0.8)
            if xmax == 1.0:
                ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
            ax.set_xlim(0, xmax)
            ax.set_ylim(0, 1.01)
            ax.set_xlabel("False positive rate")
            ax.set_ylabel("True positive rate")
            ax.set_title(title)
        axes[0].legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
