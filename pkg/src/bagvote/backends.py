"""Hot numeric kernels: numba-accelerated with a pure-numpy fallback.

Every O(N^2 * D) pairwise computation in the package funnels through
``gaussian_matrix``.  By default the numba ``@njit`` build is used;
setting the environment variable ``BAGVOTE_NO_NUMBA=1`` before import
selects the pure-numpy path instead (same results to ~1e-15 relative,
slower on large inputs).  ``benchmarks/backend_bench.py`` compares the
two.

Determinism: the njit kernel parallelizes over query rows only and each
row accumulates left to right, so outputs are bitwise identical for any
thread count.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "HAS_NUMBA",
    "active_backend",
    "gaussian_matrix",
    "gaussian_matrix_numpy",
    "set_threads",
]

_DISABLED_BY_ENV = os.environ.get("BAGVOTE_NO_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}


def gaussian_matrix_numpy(
    queries: np.ndarray, refs: np.ndarray, sigma: float, const: float
) -> np.ndarray:
    """``out[i, j] = const * exp(-||queries[i] - refs[j]||^2 / (2 sigma^2))``.

    Pure-numpy fallback; the difference-based distance avoids the
    catastrophic cancellation of the dot-product expansion.
    """
    if queries.shape[0] == 0 or refs.shape[0] == 0:
        return np.zeros((queries.shape[0], refs.shape[0]), dtype=np.float64)
    diff = queries[:, None, :] - refs[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return const * np.exp(d2 * (-1.0 / (2.0 * sigma * sigma)))


HAS_NUMBA = False
if not _DISABLED_BY_ENV:
    try:
        import numba
        from numba import njit, prange

        # workqueue is always built in; avoids noisy TBB/OMP probing.
        numba.config.THREADING_LAYER = "workqueue"

        HAS_NUMBA = True

        @njit(cache=True, parallel=True)
        def _gaussian_matrix_numba(queries, refs, sigma, const):
            nq, dim = queries.shape
            nr = refs.shape[0]
            inv = -1.0 / (2.0 * sigma * sigma)
            out = np.empty((nq, nr), dtype=np.float64)
            for i in prange(nq):
                for j in range(nr):
                    acc = 0.0
                    for k in range(dim):
                        d = queries[i, k] - refs[j, k]
                        acc += d * d
                    out[i, j] = const * np.exp(acc * inv)
            return out

    except ImportError:
        HAS_NUMBA = False


if HAS_NUMBA:

    def gaussian_matrix(queries, refs, sigma, const=1.0):
        if queries.shape[0] == 0 or refs.shape[0] == 0:
            return np.zeros((queries.shape[0], refs.shape[0]), dtype=np.float64)
        return _gaussian_matrix_numba(
            np.ascontiguousarray(queries), np.ascontiguousarray(refs),
            float(sigma), float(const),
        )

    def set_threads(n: int) -> int:
        """Set the worker-thread count, clamped to numba's configured cap."""
        cap = numba.config.NUMBA_NUM_THREADS
        effective = max(1, min(int(n), cap))
        numba.set_num_threads(effective)
        return effective

else:

    def gaussian_matrix(queries, refs, sigma, const=1.0):
        return gaussian_matrix_numpy(queries, refs, float(sigma), float(const))

    def set_threads(n: int) -> int:
        # numpy path is single-threaded for these ops; nothing to configure
        return 1


gaussian_matrix.__doc__ = gaussian_matrix_numpy.__doc__


def active_backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def warmup():
    """Trigger JIT compilation so timed sections exclude compile cost."""
    a = np.zeros((2, 2))
    gaussian_matrix(a, a, 1.0, 1.0)
