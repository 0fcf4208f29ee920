"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions.
Set ``UNSUPDEPTH_BACKEND=python`` to force the fallback.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_NAMES = (
    "im2col",
    "col2im",
    "maxpool_forward",
    "maxpool_backward",
    "warp_forward",
    "warp_backward",
    "hs_redblack",
)

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on build
    _ckernels = None

BACKEND = "python"
HAVE_COMPILED = _ckernels is not None


def use_backend(name):
    """Switch every kernel to ``"compiled"`` or ``"python"``."""
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        mod = _ckernels
    elif name == "python":
        mod = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name
    logger.debug("kernel backend: %s", name)


def backend_module(name):
    return _ckernels if name == "compiled" else _pykernels


_requested = os.environ.get("UNSUPDEPTH_BACKEND", "")
if _requested == "python" or _ckernels is None:
    use_backend("python")
else:
    use_backend("compiled")
