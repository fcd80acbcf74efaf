"""Process-level performance tuning for the numeric hot loops.

The samplers allocate and free many ~100 KB temporaries per leapfrog step.
With glibc's default trim/mmap thresholds every such free returns pages to
the kernel and the next allocation faults them back in, which slows the
elementwise kernels by an order of magnitude. Raising both thresholds
keeps the heap warm; the process simply holds on to its peak working set
(a few hundred MB at the largest batch sizes).

Set the environment variables ``MALLOC_TRIM_THRESHOLD_`` and
``MALLOC_MMAP_THRESHOLD_`` instead if mutating the allocator from Python
is undesirable; :func:`tune_allocator` is a best-effort no-op on platforms
without glibc ``mallopt``.
"""

from __future__ import annotations

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator():
    """Raise glibc's malloc trim/mmap thresholds (idempotent, best-effort)."""
    global _done
    if _done:
        return
    _done = True
    if os.environ.get("MIMODET_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass
