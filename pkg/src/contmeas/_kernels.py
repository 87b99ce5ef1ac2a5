"""Inner loops of the walk, compiled with numba when available.

Set ``CONTMEAS_DISABLE_NUMBA=1`` to force the pure-numpy versions. Both
implementations are always importable as ``*_numpy`` / ``*_numba`` so tests
and the benchmark can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK = (1 << 64) - 1

# trajectory status codes
RUNNING = 0
PLUS = 1
MINUS = -1
INCONSISTENT = 2


def trajectory_chunk_numpy(plus, minus, n_half, pos, psi, uniforms, checksum, tol):
    """Advance one walk until absorption or until ``uniforms`` run out.

    ``plus[j]`` / ``minus[j]`` are the step operators at pointer index
    ``j - n_half + 1``. ``psi`` is updated in place. Returns
    ``(pos, steps_taken, checksum, status)``.
    """
    h = int(checksum)
    steps = 0
    for u in uniforms:
        j = pos + n_half - 1
        up = plus[j] @ psi
        down = minus[j] @ psi
        p_up = float(np.vdot(up, up).real)
        p_down = float(np.vdot(down, down).real)
        if abs(p_up + p_down - 1.0) > tol:
            return pos, steps, np.uint64(h), INCONSISTENT
        steps += 1
        if u < p_up:
            psi[:] = up / np.sqrt(p_up)
            pos += 1
            bit = 1
        else:
            psi[:] = down / np.sqrt(p_down)
            pos -= 1
            bit = 0
        h = ((h ^ bit) * FNV_PRIME) & _MASK
        if pos >= n_half:
            return pos, steps, np.uint64(h), PLUS
        if pos <= -n_half:
            return pos, steps, np.uint64(h), MINUS
    return pos, steps, np.uint64(h), RUNNING


def ordered_product_numpy(mats):
    """``mats[-1] @ ... @ mats[0]``."""
    n = mats.shape[-1]
    out = np.eye(n, dtype=mats.dtype)
    for m in mats:
        out = m @ out
    return out


def _matvec(a, v, out):
    n = a.shape[0]
    for i in range(n):
        acc = 0j
        for k in range(n):
            acc += a[i, k] * v[k]
        out[i] = acc


def _trajectory_chunk(plus, minus, n_half, pos, psi, uniforms, checksum, tol):
    n = psi.shape[0]
    up = np.empty(n, dtype=np.complex128)
    down = np.empty(n, dtype=np.complex128)
    h = np.uint64(checksum)
    prime = np.uint64(FNV_PRIME)
    steps = 0
    for t in range(uniforms.shape[0]):
        j = pos + n_half - 1
        _matvec(plus[j], psi, up)
        _matvec(minus[j], psi, down)
        p_up = 0.0
        p_down = 0.0
        for i in range(n):
            p_up += up[i].real ** 2 + up[i].imag ** 2
            p_down += down[i].real ** 2 + down[i].imag ** 2
        if abs(p_up + p_down - 1.0) > tol:
            return pos, steps, h, INCONSISTENT
        steps += 1
        if uniforms[t] < p_up:
            s = 1.0 / np.sqrt(p_up)
            for i in range(n):
                psi[i] = up[i] * s
            pos += 1
            h = (h ^ np.uint64(1)) * prime
        else:
            s = 1.0 / np.sqrt(p_down)
            for i in range(n):
                psi[i] = down[i] * s
            pos -= 1
            h = (h ^ np.uint64(0)) * prime
        if pos >= n_half:
            return pos, steps, h, PLUS
        if pos <= -n_half:
            return pos, steps, h, MINUS
    return pos, steps, h, RUNNING


def _ordered_product(mats):
    n = mats.shape[-1]
    out = np.eye(n, dtype=np.complex128)
    tmp = np.empty((n, n), dtype=np.complex128)
    for m in range(mats.shape[0]):
        a = mats[m]
        for i in range(n):
            for j in range(n):
                acc = 0j
                for k in range(n):
                    acc += a[i, k] * out[k, j]
                tmp[i, j] = acc
        out[:, :] = tmp
    return out


try:
    import numba

    trajectory_chunk_numba = numba.njit(cache=True, nogil=True)(_trajectory_chunk)
    ordered_product_numba = numba.njit(cache=True, nogil=True)(_ordered_product)
    _matvec = numba.njit(cache=True, nogil=True, inline="always")(_matvec)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    trajectory_chunk_numba = None
    ordered_product_numba = None
    HAVE_NUMBA = False


def _numba_enabled() -> bool:
    flag = os.environ.get("CONTMEAS_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag in ("", "0", "false", "no")


USE_NUMBA = _numba_enabled()

if USE_NUMBA:
    trajectory_chunk = trajectory_chunk_numba
    ordered_product = ordered_product_numba
else:
    trajectory_chunk = trajectory_chunk_numpy
    ordered_product = ordered_product_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
