"""
SVG heat maps of space-time fields.

Figures are written with a fixed hash salt and without a creation date so
that re-rendering the same field gives the same file.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from . import refsolver, utils  # noqa: E402

RC = {"svg.hashsalt": "bpinn-ageing", "svg.fonttype": "path"}


def heatmap(grid: refsolver.FieldGrid, filename, title: str = "", label: str = "") -> None:
    """Draws ``grid`` with time in hours on the x-axis and height on the y-axis.

    :param label: colour bar label
    """
    with matplotlib.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        try:
            mesh = ax.pcolormesh(
                grid.t / 3600.0, grid.x, grid.values.T, cmap="viridis", shading="nearest"
            )
            fig.colorbar(mesh, ax=ax, label=label)
            ax.set_xlabel("time [h]")
            ax.set_ylabel("height [m]")
            if title:
                ax.set_title(title)
            fig.tight_layout()
            fig.savefig(filename, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    utils.logger.info("wrote heat map %s", filename)
