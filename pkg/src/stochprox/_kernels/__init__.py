"""Kernel backend selection.

The compiled extension is preferred when importable; set
``STOCHPROX_BACKEND=py`` (or ``cy``) to force a backend.  Both backends
implement the same contracts; a given run always uses a single backend,
so traces stay reproducible.
"""

from __future__ import annotations

import os

from . import pure

_choice = os.environ.get("STOCHPROX_BACKEND", "auto").lower()
_compiled = None
if _choice in ("auto", "cy", "compiled"):
    try:
        from . import _core as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None
        if _choice != "auto":
            raise ImportError(
                "STOCHPROX_BACKEND requested the compiled backend but the "
                "extension is not built; run pip install -e . first"
            )

_impl = _compiled if _compiled is not None else pure

BACKEND = _impl.BACKEND
DEGENERATE_GAP = pure.DEGENERATE_GAP
pk_conc_batch = _impl.pk_conc_batch
pk_mh_sweep = _impl.pk_mh_sweep
quad_cd_core = _impl.quad_cd_core


def backends() -> dict:
    """All importable backends, keyed by name (used by the benchmark)."""
    out = {"python": pure}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
