"""Process-level performance knobs, applied once before heavy numeric work.

Two effects, both measured >2x on small-tensor training steps:
  * glibc returns large freed blocks to the OS by default, so every training
    step re-faults pages for its temporaries; raising the malloc mmap/trim
    thresholds keeps those blocks reusable.
  * BLAS thread pools oversubscribe on the tiny GEMMs this model produces;
    results are identical either way, single-threaded is just faster.
"""

from __future__ import annotations

import ctypes

_tuned = False
_limiter = None  # keep the threadpoolctl handle alive


def tune_process(blas_threads: int | None = 1) -> None:
    global _tuned, _limiter
    if _tuned:
        return
    _tuned = True
    try:
        libc = ctypes.CDLL(None, use_errno=True)
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(ctypes.c_int(m_mmap_threshold), ctypes.c_int(1 << 30))
        libc.mallopt(ctypes.c_int(m_trim_threshold), ctypes.c_int(1 << 30))
    except Exception:
        pass  # not glibc: slower, still correct
    if blas_threads:
        try:
            from threadpoolctl import threadpool_limits
            _limiter = threadpool_limits(limits=blas_threads)
        except Exception:
            pass
