"""Backend selection for the hot kernels.

The Cython extension ``ppoher._core`` is used when it was built; otherwise the
numpy implementation in ``ppoher._pure`` is loaded. Setting the environment
variable ``PPOHER_PURE_PYTHON=1`` forces the fallback.
"""
import os

from ppoher import _pure

if os.environ.get("PPOHER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pure
    BACKEND = "python"
else:
    try:
        from ppoher import _core as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pure
        BACKEND = "python"

mlp_forward = _impl.mlp_forward
move_clamped = _impl.move_clamped
distance = _impl.distance
gaussian_log_prob = _impl.gaussian_log_prob
gae_episode = _impl.gae_episode

__all__ = [
    "BACKEND",
    "mlp_forward",
    "move_clamped",
    "distance",
    "gaussian_log_prob",
    "gae_episode",
]
