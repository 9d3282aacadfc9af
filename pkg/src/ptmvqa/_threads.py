"""Honors PTMVQA_THREADS by capping BLAS thread pools.

Must be imported before numpy: the BLAS backends read their env vars at
load time. The package __init__ imports this module first.
"""

import os


def apply_thread_cap() -> None:
    cap = os.environ.get("PTMVQA_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, cap)


apply_thread_cap()
