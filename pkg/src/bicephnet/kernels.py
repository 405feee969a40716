"""Hot-loop kernels, compiled when available.

The Cython extension ``bicephnet._kernels`` is used if it imports; otherwise
the numpy fallback in ``bicephnet._kernels_py`` is used. Setting the
environment variable ``BICEPHNET_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` names the active implementation.
"""
import os

from . import _kernels_py

if os.environ.get("BICEPHNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND

pairwise_distances = _impl.pairwise_distances
cross_distances = _impl.cross_distances
semihard_triples = _impl.semihard_triples
triplet_hinge = _impl.triplet_hinge


def available_backends():
    """Map backend name -> kernel module for every importable implementation."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
