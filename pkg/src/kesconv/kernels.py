"""Hot loops, compiled when the extension is built, pure Python otherwise.

Set ``KESCONV_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("KESCONV_PURE_PYTHON"):
    from ._kernels_py import lcs_length, top1

    BACKEND = "python"
else:
    try:
        from ._kernels import lcs_length, top1

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import lcs_length, top1

        BACKEND = "python"

__all__ = ["BACKEND", "lcs_length", "top1"]
