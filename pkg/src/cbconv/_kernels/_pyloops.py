"""Pure-numpy reference implementations of the sequential hot loops.

Same call signatures as the compiled backend; used as the import-time
fallback and as the comparison baseline in the kernel benchmark.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

BACKEND = "py"


def sim_block(Ad, Gd, w, dither, b, levels, x, codes_out, max_abs):
    """Advance the controlled simulation over one block of clock periods.

    Per period: quantize the (dithered) sampled states into ``codes_out``,
    then propagate ``x`` through the precomputed one-period affine update
    x <- Ad x + Gd s + w[k]. Returns the count of bound violations
    (samples with |x_l| > b) over the block.
    """
    M = codes_out.shape[0]
    n = x.shape[0]
    scale = levels / (2.0 * b)
    smap = 2.0 / (levels - 1)
    violations = 0
    for k in range(M):
        v = x + dither[k]
        codes = np.floor((v + b) * scale)
        np.clip(codes, 0, levels - 1, out=codes)
        codes_out[k] = codes
        s = codes * smap - 1.0
        x[:] = Ad @ x + Gd @ s + w[k]
        ax = np.abs(x)
        np.maximum(max_abs, ax, out=max_abs)
        violations += int(np.count_nonzero(ax > b))
    return violations


def filt_forward(Af, c, m, out):
    """Forward recursion m_{k+1} = Af m_k + c_k, storing m_k into out[k]."""
    M = c.shape[0]
    for k in range(M):
        out[k] = m
        m[:] = Af @ m + c[k]


def filt_backward(Ab, c, mf, WT, mb, out_u):
    """Backward recursion m_k = Ab m_{k+1} + c_k with on-the-fly combination.

    Writes out_u[k] = WT @ (m_k - mf[k]) scanning k downward; returns the
    largest 2-norm of the backward message over the block.
    """
    M = c.shape[0]
    max_mb = 0.0
    for k in range(M - 1, -1, -1):
        mb[:] = Ab @ mb + c[k]
        nb = float(np.linalg.norm(mb))
        if nb > max_mb:
            max_mb = nb
        out_u[k] = WT @ (mb - mf[k])
    return max_mb


def scan_complex(lam, f, out, backward):
    """n independent first-order complex recursions over a block.

    Forward: out[k] = m_k with m_{k+1} = lam * m_k + f_k, m_0 = 0.
    Backward: out[k] = m_k with m_k = lam * m_{k+1} + f_k, m_N = 0.
    """
    M, n = f.shape
    if not backward:
        # m_k = sum_{j<k} lam^{k-1-j} f_j: first-order IIR, one channel per column
        for i in range(n):
            out[:, i] = lfilter([0.0, 1.0], [1.0, -lam[i]], f[:, i])
    else:
        for i in range(n):
            out[::-1, i] = lfilter([1.0], [1.0, -lam[i]], f[::-1, i])
