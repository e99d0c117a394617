"""Language-conditioned bimanual folding policy on a numpy autodiff core."""

__version__ = "0.1.0"
