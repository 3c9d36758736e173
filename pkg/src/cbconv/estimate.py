"""Digital estimation filter: batch smoother, mixed IIR/FIR, diagonalized form, and oracle.

All forms consume a ControlTrace and the precomputed FilterCoefficients and
produce sampled input estimates u_hat(t_k) = W^T (m_b(k) - m_f(k)), where the
messages follow

    m_f(k+1) = Af m_f(k) + Bf s(t_k),   m_f(0) = 0,
    m_b(k)   = Ab m_b(k+1) + Bb s(t_k), m_b(N) = 0.

``oracle_smoother`` implements the finite-step discrete-time Kalman smoother
that these recursions are the limit of; it serves as the independent
correctness reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .design import FilterCoefficients, ParallelForm
from .errors import CbconvError, DimensionError
from .model import AnalogSystem
from .sim import ControlTrace

DECAY_TOL = 1e-12


@dataclass
class EstimateTrace:
    T_u: float
    samples: np.ndarray          # (M, k)
    valid_range: tuple[int, int]  # [start, stop) with boundary effects < tol

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def valid_samples(self) -> np.ndarray:
        a, b = self.valid_range
        return self.samples[a:b]

    def times(self) -> np.ndarray:
        return np.arange(self.length) * self.T_u


@dataclass
class SmootherState:
    """Message pair carried by streaming implementations."""
    m_f: np.ndarray
    m_b: np.ndarray


def decay_length(M: np.ndarray, tol: float = DECAY_TOL, max_len: int = 1 << 20) -> int:
    """Smallest L with ||M^L||_2 < tol (spectral norm), capped at max_len."""
    P = np.eye(M.shape[0])
    for L in range(1, max_len + 1):
        P = P @ M
        if np.linalg.norm(P, 2) < tol:
            return L
    return max_len


def _replicate_controls(trace: ControlTrace, T_u: float) -> tuple[np.ndarray, int]:
    """Control values replicated onto the T_u grid; T must be c*T_u, c integer."""
    c = trace.T / T_u
    c_int = int(round(c))
    if c_int < 1 or abs(trace.T - c_int * T_u) > 1e-9 * trace.T:
        raise DimensionError(
            f"clock period T={trace.T} is not an integer multiple of T_u={T_u}")
    values = trace.values()
    if c_int > 1:
        values = np.repeat(values, c_int, axis=0)
    return values, c_int


def _edge_margin(coeffs: FilterCoefficients) -> int:
    return max(decay_length(coeffs.Af), decay_length(coeffs.Ab))


def estimate_batch(coeffs: FilterCoefficients, trace: ControlTrace,
                   T_u: Optional[float] = None, block_len: int = 1 << 16,
                   independent_blocks: bool = False, kernels=None) -> EstimateTrace:
    """Full forward + backward smoothing pass over a recorded trace.

    ``T_u`` defaults to the coefficients' design value; the trace's clock
    period must be an integer multiple of it (controls are replicated onto
    the finer grid). The backward pass runs in blocks; with
    ``independent_blocks`` each block is seeded from zero ``2 L*`` periods
    past its end (parallelizable) instead of carrying the exact message.
    """
    if kernels is None:
        kernels = _kernels
    T_u = coeffs.T_u if T_u is None else float(T_u)
    if abs(T_u - coeffs.T_u) > 1e-12 * max(T_u, coeffs.T_u):
        raise DimensionError("coefficients were designed for a different T_u")
    if trace.n != coeffs.Bf.shape[1]:
        raise DimensionError("trace control count does not match coefficients")
    values, _ = _replicate_controls(trace, T_u)
    u, margin, _ = estimate_values(coeffs, values, block_len=block_len,
                                   independent_blocks=independent_blocks,
                                   kernels=kernels)
    M = values.shape[0]
    start = min(margin, M)
    stop = max(start, M - margin)
    return EstimateTrace(T_u=T_u, samples=u, valid_range=(start, stop))


def estimate_values(coeffs: FilterCoefficients, values: np.ndarray,
                    block_len: int = 1 << 16, independent_blocks: bool = False,
                    kernels=None):
    """Smoothing pass over raw control values; returns (u, margin, max_mb).

    The filter is linear in ``values``; this entry point exists for
    superposition-style checks and internal reuse.
    """
    if kernels is None:
        kernels = _kernels
    values = np.asarray(values, dtype=float)
    M = values.shape[0]
    n = coeffs.n
    cf = np.ascontiguousarray(values @ coeffs.Bf.T)
    cb = np.ascontiguousarray(values @ coeffs.Bb.T)
    Af = np.ascontiguousarray(coeffs.Af)
    Ab = np.ascontiguousarray(coeffs.Ab)
    WT = np.ascontiguousarray(coeffs.W.T)

    mf = np.empty((M, n))
    m = np.zeros(n)
    kernels.filt_forward(Af, cf, m, mf)

    u = np.empty((M, coeffs.k))
    margin = _edge_margin(coeffs)
    max_mb = 0.0
    if not independent_blocks:
        mb = np.zeros(n)
        for b_end in range(M, 0, -block_len):
            a = max(0, b_end - block_len)
            max_mb = max(max_mb, kernels.filt_backward(
                Ab, cb[a:b_end], mf[a:b_end], WT, mb, u[a:b_end]))
    else:
        pad = 2 * margin
        for a in range(0, M, block_len):
            b_end = min(a + block_len, M)
            e = min(b_end + pad, M)
            mb = np.zeros(n)
            scratch = np.empty((e - a, coeffs.k))
            max_mb = max(max_mb, kernels.filt_backward(
                Ab, cb[a:e], mf[a:e], WT, mb, scratch))
            u[a:b_end] = scratch[:b_end - a]
    return u, margin, max_mb


def forward_messages(coeffs: FilterCoefficients, trace: ControlTrace,
                     kernels=None) -> np.ndarray:
    """Forward message sequence m_f(k), k = 0..M-1 (diagnostic/tests)."""
    if kernels is None:
        kernels = _kernels
    values, _ = _replicate_controls(trace, coeffs.T_u)
    cf = np.ascontiguousarray(values @ coeffs.Bf.T)
    mf = np.empty((values.shape[0], coeffs.n))
    kernels.filt_forward(np.ascontiguousarray(coeffs.Af), cf, np.zeros(coeffs.n), mf)
    return mf


def backward_taps(coeffs: FilterCoefficients, latency: int) -> np.ndarray:
    """FIR taps h_l = W^T Ab^l Bb for l = 0..latency, shape (L+1, k, n)."""
    taps = np.empty((latency + 1, coeffs.k, coeffs.Bb.shape[1]))
    P = coeffs.W.T.copy()
    for l in range(latency + 1):
        taps[l] = P @ coeffs.Bb
        P = P @ coeffs.Ab
    return taps


def mixed_truncation_bound(coeffs: FilterCoefficients, latency: int,
                           max_mb: float) -> float:
    """Rigorous bound on |u_batch - u_mixed|: ||Ab^(L+1)|| ||W|| max_k ||m_b(k)||."""
    AbL = np.linalg.matrix_power(coeffs.Ab, latency + 1)
    return float(np.linalg.norm(AbL, 2) * np.linalg.norm(coeffs.W, 2) * max_mb)


def default_latency(coeffs: FilterCoefficients) -> int:
    """Smallest L >= 1 with ||Ab^(L+1)||_2 < 1e-12."""
    return max(1, decay_length(coeffs.Ab) - 1)


def estimate_mixed(coeffs: FilterCoefficients, trace: ControlTrace,
                   latency: Optional[int] = None,
                   fir_forward_len: Optional[int] = None,
                   kernels=None) -> EstimateTrace:
    """Mixed IIR/FIR form: causal forward recursion plus an L-step lookahead FIR.

        u_hat(t_k) = -W^T m_f(k) + sum_{l=0}^{L} (W^T Ab^l Bb) s(t_{k+l})

    Requires the trace clock to equal T_u. With ``fir_forward_len`` the
    forward term is expanded as an FIR over past controls as well (pure-FIR
    variant). Lookahead past the end of the trace uses zero controls, so the
    final L samples match a batch run seeded with m_b(N) = 0.
    """
    if kernels is None:
        kernels = _kernels
    if latency is None:
        latency = default_latency(coeffs)
    if latency < 1:
        raise ValueError("latency must be >= 1")
    values, c = _replicate_controls(trace, coeffs.T_u)
    if c != 1:
        raise DimensionError("the mixed form requires T_u = T")
    M, n = values.shape
    taps = backward_taps(coeffs, latency)
    u = np.zeros((M, coeffs.k))
    for l in range(latency + 1):
        contrib = values[l:] @ taps[l].T
        u[:M - l] += contrib
    if fir_forward_len is None:
        mf = forward_messages(coeffs, trace, kernels=kernels)
        u -= mf @ coeffs.W
    else:
        # -W^T m_f(k) = -sum_{j>=1} W^T Af^(j-1) Bf s(t_{k-j}), truncated
        P = coeffs.W.T.copy()
        for j in range(1, fir_forward_len + 1):
            tap = P @ coeffs.Bf            # (k, n)
            u[j:] -= values[:M - j] @ tap.T
            P = P @ coeffs.Af
    margin = _edge_margin(coeffs)
    start = min(margin, M)
    stop = max(start, M - margin)
    return EstimateTrace(T_u=coeffs.T_u, samples=u, valid_range=(start, stop))


class StreamingMixedEstimator:
    """Push-based mixed IIR/FIR estimator with fixed lookahead latency.

    Feed control vectors with ``push``; each call returns the estimate for
    the period ``latency`` steps behind the newest control, or None while
    the pipeline fills. ``flush`` drains the tail with zero lookahead
    controls (matching the batch zero seeding).
    """

    def __init__(self, coeffs: FilterCoefficients, latency: int):
        if latency < 1:
            raise ValueError("latency must be >= 1")
        self.coeffs = coeffs
        self.latency = latency
        self.taps = backward_taps(coeffs, latency)   # (L+1, k, n)
        self.state = SmootherState(m_f=np.zeros(coeffs.n), m_b=np.zeros(coeffs.n))
        self._pending: list[np.ndarray] = []

    def push(self, s: np.ndarray):
        s = np.asarray(s, dtype=float).reshape(-1)
        self._pending.append(s)
        if len(self._pending) <= self.latency:
            return None
        return self._emit()

    def _emit(self):
        window = self._pending[: self.latency + 1]
        fir = np.zeros(self.coeffs.k)
        for l, sv in enumerate(window):
            fir += self.taps[l] @ sv
        u = -self.coeffs.W.T @ self.state.m_f + fir
        s0 = self._pending.pop(0)
        self.state.m_f = self.coeffs.Af @ self.state.m_f + self.coeffs.Bf @ s0
        return u

    def flush(self):
        out = []
        n_real = len(self._pending)
        for _ in range(n_real):
            while len(self._pending) <= self.latency:
                self._pending.append(np.zeros(self.coeffs.Bf.shape[1]))
            out.append(self._emit())
        self._pending.clear()
        return out


def estimate_parallel(pform: ParallelForm, trace: ControlTrace,
                      use_table: str = "auto", block_len: int = 1 << 18,
                      kernels=None, imag_tol: float = 1e-9) -> EstimateTrace:
    """Diagonalized smoother: n independent complex scalar recursions per direction.

    Binary traces can drive the recursions through the 2^n-entry lookup
    tables; ``use_table`` in {"auto", "always", "never"}. The imaginary
    residue of the recombined estimate must stay below ``imag_tol`` relative
    to its rms.
    """
    if kernels is None:
        kernels = _kernels
    n = pform.n
    if trace.n != n:
        raise DimensionError("trace control count does not match the parallel form")
    M = trace.length
    binary = trace.levels == 2
    if use_table == "always" and not (binary and pform.table_f is not None):
        raise CbconvError("lookup tables need binary controls and n <= table size limit")
    tables = (use_table in ("auto", "always")) and binary and pform.table_f is not None

    if tables:
        bits = trace.codes.astype(np.uint32)
        words = np.zeros(M, dtype=np.uint32)
        for l in range(n):
            words |= bits[:, l] << l
        fv_f = np.ascontiguousarray(pform.table_f[words])
        fv_b = np.ascontiguousarray(pform.table_b[words])
    else:
        values = trace.values()
        fv_f = np.ascontiguousarray(values @ pform.Qf_inv_Bf.T)
        fv_b = np.ascontiguousarray(values @ pform.Qb_inv_Bb.T)

    k = pform.Wf.shape[1]
    u_c = np.zeros((M, k), dtype=complex)
    lam_f = np.ascontiguousarray(pform.lambda_f)
    lam_b = np.ascontiguousarray(pform.lambda_b)
    out = np.empty((min(block_len, M), n), dtype=complex)
    # forward scan in carried blocks
    mf_state = np.zeros(n, dtype=complex)
    for a in range(0, M, block_len):
        e = min(a + block_len, M)
        blk = out[: e - a]
        _scan_with_state(kernels, lam_f, fv_f[a:e], blk, False, mf_state)
        u_c[a:e] += blk @ pform.Wf
    mb_state = np.zeros(n, dtype=complex)
    for e in range(M, 0, -block_len):
        a = max(0, e - block_len)
        blk = out[: e - a]
        _scan_with_state(kernels, lam_b, fv_b[a:e], blk, True, mb_state)
        u_c[a:e] += blk @ pform.Wb
    rms = np.sqrt(np.mean(np.abs(u_c) ** 2)) or 1.0
    imag = np.abs(u_c.imag).max()
    if imag > imag_tol * rms:
        raise CbconvError(f"imaginary residue {imag:.3e} exceeds {imag_tol} * rms")
    u = np.ascontiguousarray(u_c.real)
    margin_f = decay_length(np.diag(lam_f))
    margin_b = decay_length(np.diag(lam_b))
    margin = max(margin_f, margin_b)
    start = min(margin, M)
    stop = max(start, M - margin)
    return EstimateTrace(T_u=trace.T, samples=u, valid_range=(start, stop))


def _scan_with_state(kernels, lam, f, out, backward, state):
    """Run scan_complex on one block, carrying the recursion state across calls.

    The kernels scan from a zero state; a nonzero carried state is added via
    linearity as lam-powers times the state.
    """
    M = f.shape[0]
    kernels.scan_complex(lam, f, out, backward)
    if not backward:
        if np.any(state != 0):
            # m_k gains lam^k * m_0
            out += np.power(lam[None, :], np.arange(M)[:, None]) * state
        state[:] = lam * out[-1] + f[-1]
    else:
        if np.any(state != 0):
            # m_k gains lam^(M-k) * m_end
            out += np.power(lam[None, :], np.arange(M, 0, -1)[:, None]) * state
        state[:] = out[0]


def oracle_smoother(system: AnalogSystem, eta2: float, trace: ControlTrace,
                    delta_pow: int, cov_rtol: float = 1e-11,
                    max_cov_steps: int = 20_000_000) -> EstimateTrace:
    """Finite-step discrete-time Kalman smoother at step Delta = T / 2**delta_pow.

    Implements the per-step covariance and mean updates of the underlying
    statistical model directly (exp(A Delta) transport, Delta-scaled process
    noise and observation weight), runs the covariance recursions to steady
    state, composes the per-step mean maps into per-clock-period maps, and
    emits smoothed input estimates at the clock instants. Converges to the
    recursion filter as Delta -> 0; used as its independent reference.
    """
    if delta_pow < 4:
        raise ValueError("delta_pow must be >= 4")
    T = trace.T
    S = 1 << delta_pow
    delta = T / S
    A, B, C_T, Gamma = system.A, system.B, system.C_T, system.Gamma
    n = system.n
    C = C_T.T
    E = expm(A * delta)
    Einv = expm(-A * delta)
    Q = delta * (B @ B.T)
    Robs = eta2 / delta * np.eye(system.m)

    def fwd_step(V):
        V1 = E @ V @ E.T + Q
        K = V1 @ C @ np.linalg.inv(Robs + C.T @ V1 @ C)
        return V1 - K @ C.T @ V1, K, V1

    def bwd_step(V):
        K = V @ C @ np.linalg.inv(Robs + C.T @ V @ C)
        Va = V - K @ C.T @ V
        return Einv @ (Va + Q) @ Einv.T, K

    def run_to_ss(step):
        V = np.linalg.norm(B, 2) * np.sqrt(eta2) * np.eye(n)
        for i in range(max_cov_steps):
            out = step(V)
            Vn = 0.5 * (out[0] + out[0].T)
            d = np.linalg.norm(Vn - V, "fro")
            V = Vn
            if not np.isfinite(d):
                raise CbconvError("covariance recursion diverged; delta too coarse")
            if d <= cov_rtol * max(np.linalg.norm(V, "fro"), 1e-300):
                return V
        raise CbconvError("covariance recursion did not reach steady state")

    Vf = run_to_ss(fwd_step)
    Vb = run_to_ss(bwd_step)

    _, Kf, _ = fwd_step(Vf)
    Ff = (np.eye(n) - Kf @ C.T) @ E
    Gf = (np.eye(n) - Kf @ C.T) @ (Gamma * delta)
    _, Kb = bwd_step(Vb)
    Fb = Einv @ (np.eye(n) - Kb @ C.T)
    Gb = -Einv @ (Gamma * delta)

    def compose(F, G, p):
        # (F, G) -> (F^(2^p), sum_{j<2^p} F^j G) by doubling
        Fc, Gc = F, G
        for _ in range(p):
            Gc = Gc + Fc @ Gc
            Fc = Fc @ Fc
        return Fc, Gc

    Ff_per, Gf_per = compose(Ff, Gf, delta_pow)
    Fb_per, Gb_per = compose(Fb, Gb, delta_pow)

    Wbar = np.linalg.solve(Vf + Vb, B)

    values = trace.values()
    M = values.shape[0]
    u = np.empty((M, system.k))
    mf = np.zeros(n)
    mf_all = np.empty((M, n))
    for k in range(M):
        mf_all[k] = mf
        mf = Ff_per @ mf + Gf_per @ values[k]
    mb = np.zeros(n)
    for k in range(M - 1, -1, -1):
        mb = Fb_per @ mb + Gb_per @ values[k]
        u[k] = Wbar.T @ (mb - mf_all[k])
    # boundary margin: reuse the per-period forward map's decay
    margin = decay_length(Ff_per)
    start = min(margin, M)
    stop = max(start, M - margin)
    return EstimateTrace(T_u=T, samples=u, valid_range=(start, stop))


def oracle_covariances(system: AnalogSystem, eta2: float, T: float,
                       delta_pow: int, cov_rtol: float = 1e-11):
    """Steady-state (forward, backward) covariances of the finite-step smoother."""
    if delta_pow < 4:
        raise ValueError("delta_pow must be >= 4")
    S = 1 << delta_pow
    delta = T / S
    A, B, C_T = system.A, system.B, system.C_T
    n = system.n
    C = C_T.T
    E = expm(A * delta)
    Einv = expm(-A * delta)
    Q = delta * (B @ B.T)
    Robs = eta2 / delta * np.eye(system.m)

    def fwd_step(V):
        V1 = E @ V @ E.T + Q
        K = V1 @ C @ np.linalg.inv(Robs + C.T @ V1 @ C)
        return V1 - K @ C.T @ V1

    def bwd_step(V):
        K = V @ C @ np.linalg.inv(Robs + C.T @ V @ C)
        return Einv @ ((V - K @ C.T @ V) + Q) @ Einv.T

    def run(step):
        V = np.linalg.norm(B, 2) * np.sqrt(eta2) * np.eye(n)
        for _ in range(20_000_000):
            Vn = step(V)
            Vn = 0.5 * (Vn + Vn.T)
            d = np.linalg.norm(Vn - V, "fro")
            V = Vn
            if not np.isfinite(d):
                raise CbconvError("covariance recursion diverged; delta too coarse")
            if d <= cov_rtol * max(np.linalg.norm(V, "fro"), 1e-300):
                return V
        raise CbconvError("covariance recursion did not reach steady state")

    return run(fwd_step), run(bwd_step)
