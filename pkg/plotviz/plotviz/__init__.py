"""Offline figure rendering for training-run artifacts.

Pure file-in/file-out: reads the losses.csv / embeddings.csv / PGM outputs
of a completed run and writes PNG figures. Never recomputes metrics.
"""

__version__ = "0.1.0"

from .plots import plot_embeddings, plot_grid, plot_losses

__all__ = ["plot_losses", "plot_embeddings", "plot_grid", "__version__"]
