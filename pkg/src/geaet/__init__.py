"""Graph external attention and the GEAET architecture on a small numpy autodiff engine."""

__version__ = "0.1.0"
