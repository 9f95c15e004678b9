"""Kernel backend selection.

The compiled extension (``ringsim._kernels``, built from Cython) is preferred
when importable; otherwise the numpy reference in ``_kernels_ref`` is used.
Set RINGSIM_KERNELS=python or RINGSIM_KERNELS=compiled to force a backend;
forcing "compiled" when the extension is missing raises ImportError rather
than silently degrading.

Both backends satisfy the same numeric contract (documented in
``_kernels_ref``) but are distinct floating-point programs, so results agree
to roundoff rather than bit-for-bit. Within one backend everything is
deterministic.
"""

import os

from . import _kernels_ref

_choice = os.environ.get("RINGSIM_KERNELS", "").strip().lower()

if _choice == "python":
    _impl = _kernels_ref
elif _choice == "compiled":
    from . import _kernels as _impl  # noqa: F401  (ImportError is the point)
elif _choice == "":
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_ref
else:
    raise ValueError(f"RINGSIM_KERNELS must be 'python' or 'compiled', got {_choice!r}")

MASK_NONE = _kernels_ref.MASK_NONE
MASK_FULL = _kernels_ref.MASK_FULL
MASK_CAUSAL = _kernels_ref.MASK_CAUSAL

BACKEND = _impl.BACKEND_NAME

attention_block = _impl.attention_block
merge_state = _impl.merge_state
