"""Offline estimator design: Riccati solutions, discretized recursions, combination matrix.

Everything the streaming filter needs is precomputed here from (A, B, Gamma,
C_T, eta^2, T_u): the forward/backward Riccati solutions Vf and Vb, the
combination matrix W solving (Vf + Vb) W = B, and the discrete recursion
matrices

    Af = exp((A - Vf C C^T / eta^2) T_u),   Bf = int_0^Tu exp(...(Tu-t)) Gamma dt,
    Ab = exp(-(A + Vb C C^T / eta^2) T_u),  Bb = -int_0^Tu exp(...(Tu-t)) Gamma dt.

The Riccati equations are solved by a damped gradient-flow iteration with
the step chosen from the local stability bound; the solve runs in diagonally
equilibrated coordinates when the solution's dynamic range requires it. An
independent Hamiltonian eigenvector solve is provided for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import CareConvergenceError, DesignGateError, DimensionError, ParallelFormError
from .model import AnalogSystem

RESIDUAL_RTOL = 1e-10  # acceptance gate, relative to the equation's term scale
_ITER_RTOL = 5e-15     # iteration target (well below the gate)


def care_residual(A, B, C_T, eta2, V):
    """Residual A V + (A V)^T + B B^T - V C C^T V / eta^2 and its term scale."""
    C = C_T.T
    AV = A @ V
    quad = V @ (C @ (C.T @ V)) / eta2
    R = AV + AV.T + B @ B.T - quad
    scale = max(np.linalg.norm(B @ B.T, "fro"),
                2.0 * np.linalg.norm(AV, "fro"),
                np.linalg.norm(quad, "fro"))
    return R, np.linalg.norm(R, "fro"), scale


def _care_iterate(A, B, C_T, eta2, V0, max_iter, rtol):
    """Damped gradient-flow iteration for the filter-type CARE; returns (V, ok)."""
    n = A.shape[0]
    C = C_T.T
    CCt = C @ C.T
    V = V0.copy()
    R, rn, scale = care_residual(A, B, C_T, eta2, V)
    damping = 1.0
    for _ in range(max_iter):
        if rn <= rtol * max(scale, 1e-300):
            return V, True
        Acl = A - V @ CCt / eta2
        tau = damping * 0.45 / max(np.linalg.norm(Acl, 2), 1e-300)
        nV = max(np.linalg.norm(V, "fro"), 1e-300)
        if tau * rn > 0.25 * nV:
            tau = 0.25 * nV / rn  # limit the relative step
        Vn = V + tau * R
        Vn = 0.5 * (Vn + Vn.T)
        ev, Q = np.linalg.eigh(Vn)
        if ev[0] < 0.0:
            Vn = (Q * np.maximum(ev, 0.0)) @ Q.T  # stay in the PSD cone
            Vn = 0.5 * (Vn + Vn.T)
        Rn, rnn, scn = care_residual(A, B, C_T, eta2, Vn)
        if not np.isfinite(rnn):
            damping *= 0.5
            continue
        V, R, rn, scale = Vn, Rn, rnn, scn
        damping = min(1.0, damping * 1.02)
    return V, rn <= rtol * max(scale, 1e-300)


def care_solve(A, B, C_T, eta2, direction: str = "forward",
               max_iter: int = 60000, rtol: float = _ITER_RTOL) -> np.ndarray:
    """Solve the continuous-time algebraic Riccati equation of the smoother.

    ``direction="forward"`` solves A V + (A V)^T + B B^T - V C C^T V/eta^2 = 0;
    ``"backward"`` flips the sign of A. The iterate is restarted in scaled
    coordinates when the solution's dynamic range defeats a single pass.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0]:
        B = B.T
    C_T = np.atleast_2d(np.asarray(C_T, dtype=float))
    if direction == "backward":
        A = -A
    elif direction != "forward":
        raise ValueError("direction must be 'forward' or 'backward'")
    n = A.shape[0]
    normB = np.linalg.norm(B, 2)
    if normB == 0.0:
        return np.zeros((n, n))
    s = np.ones(n)
    V0s = normB * np.sqrt(eta2) * np.eye(n)
    V = None
    for _ in range(4):
        d = 1.0 / s
        As = (A * d[:, None]) * s[None, :]
        Bs = B * d[:, None]
        C_Ts = C_T * s[None, :]
        Vs, ok = _care_iterate(As, Bs, C_Ts, eta2, V0s, max_iter, rtol)
        V = (Vs * s[:, None]) * s[None, :]
        V = 0.5 * (V + V.T)
        if ok:
            break
        s = s * np.sqrt(np.maximum(np.diag(Vs), 1e-12))
        V0s = np.eye(n)
    _, rn, scale = care_residual(A, B, C_T, eta2, V)
    if rn > RESIDUAL_RTOL * max(scale, 1e-300):
        raise CareConvergenceError(
            f"CARE iteration did not converge: residual {rn:.3e} vs scale {scale:.3e}",
            residual=rn)
    ev = np.linalg.eigvalsh(V)
    if ev[0] < -1e-10 * max(ev[-1], 1e-300):
        raise CareConvergenceError(f"CARE solution indefinite: eigmin {ev[0]:.3e}")
    return V


def care_hamiltonian(A, B, C_T, eta2, direction: str = "forward",
                     scaling: np.ndarray | None = None) -> np.ndarray:
    """Independent CARE solve via the stable invariant subspace of the Hamiltonian.

    ``scaling`` optionally equilibrates the coordinates (diagonal entries);
    pass sqrt(diag V) from another route to condition large-dynamic-range
    problems.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0]:
        B = B.T
    C_T = np.atleast_2d(np.asarray(C_T, dtype=float))
    if direction == "backward":
        A = -A
    n = A.shape[0]
    if scaling is None:
        s = np.ones(n)
    else:
        s = np.asarray(scaling, dtype=float)
    d = 1.0 / s
    As = (A * d[:, None]) * s[None, :]
    Bs = B * d[:, None]
    C_Ts = C_T * s[None, :]
    H = np.block([[As.T, -C_Ts.T @ C_Ts / eta2],
                  [-Bs @ Bs.T, -As]])
    w, U = np.linalg.eig(H)
    sel = w.real < 0
    if sel.sum() != n:
        raise CareConvergenceError(
            f"Hamiltonian has {sel.sum()} stable eigenvalues, expected {n}")
    U1 = U[:n, sel]
    U2 = U[n:, sel]
    Vs = np.real(U2 @ np.linalg.inv(U1))
    Vs = 0.5 * (Vs + Vs.T)
    return (Vs * s[:, None]) * s[None, :]


def solve_w(Vf: np.ndarray, Vb: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Combination matrix W from (Vf + Vb) W = B (partial-pivoting solve)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != Vf.shape[0]:
        B = B.T
    S = Vf + Vb
    W = np.linalg.solve(S, B)
    resid = np.linalg.norm(S @ W - B)
    if resid > 1e-12 * max(np.linalg.norm(B), 1e-300):
        raise DesignGateError(f"(Vf+Vb) W = B residual too large: {resid:.3e}")
    return W


def discretize(A_cl: np.ndarray, Gamma: np.ndarray, T_u: float):
    """Exact discretization (state matrix, held-input matrix) over one step.

    Returns (exp(A_cl T_u), int_0^Tu exp(A_cl (Tu - t)) Gamma dt), the
    integral coming from the top-right block of the augmented exponential
    exp([[A_cl, Gamma], [0, 0]] T_u) -- no quadrature involved.
    """
    if T_u <= 0:
        raise ValueError("T_u must be positive")
    A_cl = np.asarray(A_cl, dtype=float)
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    n = A_cl.shape[0]
    m = Gamma.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_cl
    M[:n, n:] = Gamma
    E = expm(M * T_u)
    return np.ascontiguousarray(E[:n, :n]), np.ascontiguousarray(E[:n, n:])


@dataclass(frozen=True)
class FilterCoefficients:
    Af: np.ndarray
    Bf: np.ndarray
    Ab: np.ndarray
    Bb: np.ndarray
    W: np.ndarray
    Vf: np.ndarray
    Vb: np.ndarray
    T_u: float
    eta2: float

    @property
    def n(self) -> int:
        return self.Af.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def residuals(self, system: AnalogSystem):
        """(forward, backward) CARE residual norms, term-scale normalized."""
        _, rf, sf = care_residual(system.A, system.B, system.C_T, self.eta2, self.Vf)
        _, rb, sb = care_residual(-system.A, system.B, system.C_T, self.eta2, self.Vb)
        return rf / sf, rb / sb

    def spectral_radii(self):
        return (float(np.abs(np.linalg.eigvals(self.Af)).max()),
                float(np.abs(np.linalg.eigvals(self.Ab)).max()))


def design_filter(system: AnalogSystem, eta2: float, T_u: float) -> FilterCoefficients:
    """Compute all estimator matrices for a system at the given eta^2 and T_u.

    Gates: scale-relative CARE residuals <= 1e-10, exact symmetry after
    symmetrization, spectral radii of Af and Ab < 1.
    """
    A, B, C_T, Gamma = system.A, system.B, system.C_T, system.Gamma
    Vf = care_solve(A, B, C_T, eta2, "forward")
    Vb = care_solve(A, B, C_T, eta2, "backward")
    W = solve_w(Vf, Vb, B)
    C = C_T.T
    CCt = C @ C.T
    Af, Bf = discretize(A - Vf @ CCt / eta2, Gamma, T_u)
    Ab, Bb_pos = discretize(-(A + Vb @ CCt / eta2), Gamma, T_u)
    Bb = -Bb_pos
    coeffs = FilterCoefficients(Af=Af, Bf=Bf, Ab=Ab, Bb=Bb, W=W,
                                Vf=Vf, Vb=Vb, T_u=float(T_u), eta2=float(eta2))
    rf, rb = coeffs.residuals(system)
    if rf > RESIDUAL_RTOL or rb > RESIDUAL_RTOL:
        raise DesignGateError(f"CARE residual gate failed: {rf:.3e}, {rb:.3e}")
    sf, sb = coeffs.spectral_radii()
    if sf >= 1.0 or sb >= 1.0:
        raise DesignGateError(f"unstable recursion matrices: rho(Af)={sf}, rho(Ab)={sb}")
    return coeffs


@dataclass(frozen=True)
class ParallelForm:
    lambda_f: np.ndarray       # (n,) complex eigenvalues of Af
    lambda_b: np.ndarray       # (n,) complex eigenvalues of Ab
    Qf_inv_Bf: np.ndarray      # (n, n) complex
    Qb_inv_Bb: np.ndarray      # (n, n) complex
    Wf: np.ndarray             # (n, k) complex, -Qf^T W
    Wb: np.ndarray             # (n, k) complex, Qb^T W
    table_f: np.ndarray | None  # (2^n, n) complex lookup for binary controls
    table_b: np.ndarray | None

    @property
    def n(self) -> int:
        return self.lambda_f.shape[0]


def _binary_table(M: np.ndarray) -> np.ndarray:
    """Lookup table mapping each n-bit control word to M @ s.

    Bit l of the word set means s_l = +1 (else -1); bit 0 is control 1.
    """
    n = M.shape[1]
    words = np.arange(1 << n)
    bits = (words[:, None] >> np.arange(n)[None, :]) & 1
    s = 2.0 * bits - 1.0
    return s @ M.T


def parallelize(coeffs: FilterCoefficients, cond_limit: float = 1e8,
                table_max_n: int = 12) -> ParallelForm:
    """Diagonalize the recursions into n independent complex scalar channels.

    Emits 2^n-entry lookup tables for binary controls when n <= table_max_n.
    Raises ParallelFormError when an eigenvector matrix is too ill-conditioned.
    """
    lf, Qf = np.linalg.eig(coeffs.Af)
    lb, Qb = np.linalg.eig(coeffs.Ab)
    for name, Q in (("Af", Qf), ("Ab", Qb)):
        c = np.linalg.cond(Q)
        if not np.isfinite(c) or c > cond_limit:
            raise ParallelFormError(f"eigenvector matrix of {name} has cond {c:.2e}")
    Qf_inv_Bf = np.linalg.solve(Qf, coeffs.Bf.astype(complex))
    Qb_inv_Bb = np.linalg.solve(Qb, coeffs.Bb.astype(complex))
    Wf = -Qf.T @ coeffs.W.astype(complex)
    Wb = Qb.T @ coeffs.W.astype(complex)
    n = coeffs.n
    table_f = table_b = None
    if n <= table_max_n:
        table_f = _binary_table(Qf_inv_Bf)
        table_b = _binary_table(Qb_inv_Bb)
    return ParallelForm(lambda_f=lf, lambda_b=lb,
                        Qf_inv_Bf=Qf_inv_Bf, Qb_inv_Bb=Qb_inv_Bb,
                        Wf=Wf, Wb=Wb, table_f=table_f, table_b=table_b)
