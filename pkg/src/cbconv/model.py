"""Analog system descriptions: state-space container, integrator chains, transfer evaluation.

The analog side of the converter is a linear system

    dx/dt = A x + B u + Gamma s,      y = C_T x,

where s holds the clocked control signals. The chain constructor builds the
cascade-of-integrators topology (optionally with extra first-stage feedback
and multi-level control), and ``atf`` evaluates the uncontrolled system's
frequency response G(omega) = C_T (i omega I - A)^{-1} B.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, PoleError


def _as_readonly(a, dtype=float):
    out = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=dtype)))
    out.flags.writeable = False
    return out


class AnalogSystem:
    """Immutable state-space description of the analog filter under control.

    Parameters
    ----------
    A : (n, n) array
        State matrix, 1/seconds.
    B : (n, k) array
        Input matrix, 1/seconds.
    Gamma : (n, n) array
        Control matrix, 1/seconds. Column l couples control signal s_l.
    C_T : (m, n) array
        Readout selecting the control-bounded signals y = C_T x.
    state_bound : float
        Bound b that the digital control is meant to enforce on |x_l(t)|.
    input_bound : float
        Declared bound b_u on |u(t)|.
    """

    __slots__ = ("A", "B", "Gamma", "C_T", "state_bound", "input_bound", "_eigvals")

    def __init__(self, A, B, Gamma, C_T, state_bound=1.0, input_bound=1.0):
        A = _as_readonly(A)
        B = _as_readonly(B)
        Gamma = _as_readonly(Gamma)
        C_T = _as_readonly(C_T)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        if Gamma.shape != (n, n):
            raise DimensionError(f"Gamma must be {n}x{n}, got {Gamma.shape}")
        if C_T.shape[1] != n:
            raise DimensionError(f"C_T must have {n} columns, got {C_T.shape}")
        if not (state_bound > 0 and input_bound > 0):
            raise ValueError("bounds must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "C_T", C_T)
        object.__setattr__(self, "state_bound", float(state_bound))
        object.__setattr__(self, "input_bound", float(input_bound))
        object.__setattr__(self, "_eigvals", np.linalg.eigvals(A))

    def __setattr__(self, name, value):
        raise AttributeError("AnalogSystem is immutable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C_T.shape[0]

    @property
    def pole_frequencies(self):
        """Eigenvalues of A (poles of the uncontrolled system)."""
        return self._eigvals

    def __repr__(self):
        return (f"AnalogSystem(n={self.n}, k={self.k}, m={self.m}, "
                f"b={self.state_bound}, b_u={self.input_bound})")


def _broadcast(value, n, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DimensionError(f"{name} must be a scalar or length-{n} sequence")
    return arr


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of an integrator-chain converter.

    ``beta``, ``rho``, ``kappa`` broadcast from scalars to per-stage arrays.
    ``kappa_fb`` holds the extra first-stage feedback coefficients for
    controls 2..n (length n-1) and may be None.
    """

    n: int
    beta: Sequence[float] | float = 1.0
    rho: Sequence[float] | float = 0.0
    kappa: Sequence[float] | float = 1.0
    kappa_fb: Sequence[float] | None = None
    quantizer_bits: int = 1
    dither_amplitude: float = 0.0
    state_bound: float = 1.0
    input_bound: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("stage count n must be >= 1")
        if not (1 <= self.quantizer_bits <= 8):
            raise ValueError("quantizer_bits must be in 1..8")
        if self.dither_amplitude < 0:
            raise ValueError("dither_amplitude must be >= 0")
        beta = _broadcast(self.beta, self.n, "beta")
        rho = _broadcast(self.rho, self.n, "rho")
        kappa = _broadcast(self.kappa, self.n, "kappa")
        if np.any(rho < 0):
            raise ValueError("rho must be >= 0 per stage")
        if self.kappa_fb is not None:
            fb = np.asarray(self.kappa_fb, dtype=float)
            if fb.shape != (self.n - 1,):
                raise DimensionError("kappa_fb must have length n-1")
            object.__setattr__(self, "kappa_fb", tuple(fb))
        object.__setattr__(self, "beta", tuple(beta))
        object.__setattr__(self, "rho", tuple(rho))
        object.__setattr__(self, "kappa", tuple(kappa))

    @property
    def levels(self) -> int:
        return 1 << self.quantizer_bits

    def beta_array(self):
        return np.asarray(self.beta)

    def rho_array(self):
        return np.asarray(self.rho)

    def kappa_array(self):
        return np.asarray(self.kappa)


def build_chain(spec: ChainSpec, readout: str = "last_state") -> AnalogSystem:
    """Construct the integrator-chain state-space matrices.

    ``readout`` selects the control-bounded signals: ``"last_state"`` gives
    C_T = (0, ..., 0, 1); ``"all_states"`` gives C_T = I_n.
    """
    n = spec.n
    beta = spec.beta_array()
    rho = spec.rho_array()
    kappa = spec.kappa_array()
    A = np.zeros((n, n))
    for l in range(n):
        A[l, l] = -rho[l]
        if l > 0:
            A[l, l - 1] = beta[l]
    B = np.zeros((n, 1))
    B[0, 0] = beta[0]
    Gamma = np.diag(-kappa * beta)
    if spec.kappa_fb is not None:
        # extra feedback enters the first integrator's summing node with the
        # same sign as the local control
        Gamma[0, 1:] += -np.asarray(spec.kappa_fb)
    if readout == "last_state":
        C_T = np.zeros((1, n))
        C_T[0, -1] = 1.0
    elif readout == "all_states":
        C_T = np.eye(n)
    else:
        raise ValueError("readout must be 'last_state' or 'all_states'")
    return AnalogSystem(A, B, Gamma, C_T,
                        state_bound=spec.state_bound,
                        input_bound=spec.input_bound)


def dither_feedback_augment(spec: ChainSpec, coefficient: float | None = None) -> ChainSpec:
    """Return a copy of ``spec`` with the extra-feedback coefficients filled in.

    Defaults to the equal-coefficient choice beta / (n (n - 1)) for controls
    2..n unless ``coefficient`` overrides it. Requires n >= 2.
    """
    if spec.n < 2:
        raise ValueError("extra feedback needs at least two stages")
    if spec.kappa_fb is not None:
        return spec
    c = spec.beta[0] / (spec.n * (spec.n - 1)) if coefficient is None else coefficient
    from dataclasses import replace
    return replace(spec, kappa_fb=tuple(np.full(spec.n - 1, c)))


def atf(system: AnalogSystem, omega: float) -> np.ndarray:
    """Analog transfer function G(omega) = C_T (i omega I - A)^{-1} B, shape (m, k).

    Raises PoleError when i*omega coincides (numerically) with an eigenvalue
    of A; for undamped chains that is omega = 0.
    """
    lam = system.pole_frequencies
    scale = max(np.abs(lam).max(initial=0.0), abs(omega), 1e-300)
    if np.min(np.abs(1j * omega - lam)) <= 1e-14 * scale:
        raise PoleError(f"omega={omega} is a pole of the analog system")
    n = system.n
    M = 1j * omega * np.eye(n) - system.A
    try:
        X = np.linalg.solve(M, system.B.astype(complex))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise PoleError(f"resolvent singular at omega={omega}") from exc
    return system.C_T @ X


def atf_grid(system: AnalogSystem, omegas) -> np.ndarray:
    """Evaluate ``atf`` on an array of frequencies; shape (len(omegas), m, k)."""
    return np.stack([atf(system, w) for w in np.asarray(omegas, dtype=float)])


def source_atf(system: AnalogSystem, entry_vector, omega: float) -> np.ndarray:
    """Transfer from an additive disturbance dx/dt += entry_vector * z to y.

    Shape (m,). ``entry_vector`` is a length-n real vector.
    """
    v = np.asarray(entry_vector, dtype=complex).reshape(-1)
    if v.shape != (system.n,):
        raise DimensionError("entry_vector must have length n")
    lam = system.pole_frequencies
    scale = max(np.abs(lam).max(initial=0.0), abs(omega), 1e-300)
    if np.min(np.abs(1j * omega - lam)) <= 1e-14 * scale:
        raise PoleError(f"omega={omega} is a pole of the analog system")
    M = 1j * omega * np.eye(system.n) - system.A
    return (system.C_T @ np.linalg.solve(M, v)).reshape(-1)


@dataclass(frozen=True)
class StabilityVerdict:
    guaranteed: bool
    failing_stages: tuple[int, ...]
    gamma: tuple[float, ...]
    gamma_admissible: tuple[float, ...]

    def __bool__(self):
        return self.guaranteed


def check_stability(spec: ChainSpec, T: float, b: float | None = None) -> StabilityVerdict:
    """Per-stage guarantee check for the clocked binary/multi-level control.

    Stage l is guaranteed when |kappa_l| >= b and
    T |beta_l| (q |kappa_l| + b) <= b with q = 2^(1-N) for N-bit quantizers
    (q = 1 binary). Extra first-stage feedback consumes part of stage 1's
    margin: its |kappa_{1,l}| sum is added to the control term.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if b is None:
        b = spec.state_bound
    beta = spec.beta_array()
    kappa = spec.kappa_array()
    q = 2.0 ** (1 - spec.quantizer_bits)
    gamma = T * np.abs(beta)
    failing = []
    admissible = np.empty(spec.n)
    for l in range(spec.n):
        control = q * np.abs(kappa[l] * beta[l])
        if l == 0 and spec.kappa_fb is not None:
            control += q * np.sum(np.abs(spec.kappa_fb))
        # admissible gamma_l solves T|beta_l| (q|kappa_l| + b) = b with the
        # feedback folded into an effective kappa
        kappa_eff = control / max(np.abs(beta[l]), 1e-300)
        admissible[l] = b / (kappa_eff + b)
        ok = np.abs(kappa[l]) >= b and T * (control + np.abs(beta[l]) * b) <= b
        if not ok:
            failing.append(l + 1)
    return StabilityVerdict(
        guaranteed=not failing,
        failing_stages=tuple(failing),
        gamma=tuple(gamma),
        gamma_admissible=tuple(admissible),
    )


def gamma_max(quantizer_bits: int) -> float:
    """Largest per-stage gain-per-clock with guaranteed bounds at kappa = b."""
    return 1.0 / (2.0 ** (1 - quantizer_bits) + 1.0)


def homogeneous_chain_parameters(system: AnalogSystem):
    """Recover (beta, rho, n) when ``system`` is a homogeneous chain, else None."""
    A = system.A
    n = system.n
    if system.k != 1:
        return None
    sub = np.array([A[l, l - 1] for l in range(1, n)])
    diag = np.diag(A)
    off = A - np.diag(diag)
    for l in range(1, n):
        off[l, l - 1] = 0.0
    if np.any(off != 0.0):
        return None
    beta = system.B[0, 0]
    if n > 1 and not np.allclose(sub, beta, rtol=1e-12, atol=0.0):
        return None
    rho = -diag[0]
    if not np.allclose(diag, -rho, rtol=1e-12, atol=1e-300):
        return None
    return float(beta), float(rho), n
