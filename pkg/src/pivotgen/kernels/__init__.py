"""Kernel lane selection.

The tensor engine routes its hot inner loops (softmax, layer norm, GELU,
cross-entropy, the AdamW update) through this module. At import time we
pick the compiled extension when it is built, otherwise the NumPy
fallback. `PIVOTGEN_KERNELS=py|ext` forces a lane; forcing `ext` when
the extension is missing is an error rather than a silent downgrade.

Both lanes implement the same formulas, so results agree to float32
round-off; within one process the selected lane is fixed, which keeps
runs bit-reproducible.
"""

import os

from . import _py

_REQUESTED = os.environ.get("PIVOTGEN_KERNELS", "auto").lower()

if _REQUESTED not in ("auto", "py", "ext"):
    raise ImportError(f"PIVOTGEN_KERNELS must be auto, py or ext, got {_REQUESTED!r}")

if _REQUESTED == "py":
    _impl = _py
    ACTIVE = "py"
else:
    try:
        from . import _ext as _impl  # type: ignore[attr-defined]

        ACTIVE = "ext"
    except ImportError:
        if _REQUESTED == "ext":
            raise ImportError(
                "PIVOTGEN_KERNELS=ext but the compiled extension is not built; "
                "run `python setup.py build_ext --inplace`"
            ) from None
        _impl = _py
        ACTIVE = "py"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
cross_entropy_fwd = _impl.cross_entropy_fwd
cross_entropy_bwd = _impl.cross_entropy_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adamw_update = _impl.adamw_update
