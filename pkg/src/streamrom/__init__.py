"""Streaming-SVD reduced-order modelling for parametric time-dependent fields."""
__version__ = "0.1.0"

from .metrics import eps_abs, eps_l2, eps_nrms, eps_rel  # noqa: E402
from .svd_stream import SvdState, project, reconstruct, stream_svd, svd_init, svd_update  # noqa: E402

__all__ = [
    "__version__",
    "SvdState",
    "svd_init",
    "svd_update",
    "stream_svd",
    "project",
    "reconstruct",
    "eps_abs",
    "eps_rel",
    "eps_nrms",
    "eps_l2",
]
