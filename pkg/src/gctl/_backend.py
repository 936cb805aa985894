"""Import-time selection of the stepping kernels.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is absent or when GCTL_PURE_PY is set in the environment.
"""

import os

if os.environ.get("GCTL_PURE_PY"):
    from . import _kernels_py as kernels

    COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        from . import _kernels_py as kernels

        COMPILED = False

BACKEND_NAME = getattr(kernels, "BACKEND", "python")

gheat_step_1d = kernels.gheat_step_1d
gheat_step_2d = kernels.gheat_step_2d
hjb_step_1d = kernels.hjb_step_1d
hjb_step_2d = kernels.hjb_step_2d
dpp_step_1d = kernels.dpp_step_1d
dpp_step_2d = kernels.dpp_step_2d
