"""Backend selection for the minibatch loss/gradient kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback. ``FEDAMD_KERNELS=python`` forces the fallback and
``FEDAMD_KERNELS=compiled`` makes a missing extension an import error.
The two backends agree to rounding (about 1e-13 relative) but are not
bit-identical, so a run is only byte-reproducible on the same backend.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("FEDAMD_KERNELS", "auto").strip().lower()

if _choice == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
softmax_loss_grad = _impl.softmax_loss_grad
mlp2_loss_grad = _impl.mlp2_loss_grad


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
