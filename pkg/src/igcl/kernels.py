"""Backend selection for the contrastive kernels.

The compiled extension is used when it imports; set ``IGCL_PURE_PYTHON=1``
to force the numpy fallback. :data:`BACKEND` names the active one.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IGCL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def backends():
    """Map of every importable backend name to its module."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels as compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        found["cython"] = compiled
    return found


icl_upper = _impl.icl_upper
contrast_samples = _impl.contrast_samples
