"""Clocked-control simulation of the analog system.

Between clock ticks the state evolves exactly (matrix exponentials of the
augmented system); the controls are sampled-and-thresholded at the ticks.
Sinusoidal inputs are handled by zero-order-hold substeps at T/S resolution,
collapsed per period into a precomputed additive contribution, so the inner
loop is a single affine update per period regardless of S.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels
from .design import discretize
from .errors import (DimensionError, InputBoundError, SimulationDivergedError,
                     StabilityError)
from .model import AnalogSystem, ChainSpec, build_chain, check_stability

_SNAPSHOT_MAX = 1 << 16
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STAGE_SALT = np.uint64(0xD1B54A32D192ED03)


@dataclass(frozen=True)
class InputSignal:
    """Input waveform: zero, constant, or sine."""

    kind: str = "zero"
    amplitude: float = 0.0
    frequency_hz: float = 0.0
    phase: float = 0.0
    value: float = 0.0

    @classmethod
    def zero(cls):
        return cls(kind="zero")

    @classmethod
    def constant(cls, value: float):
        return cls(kind="constant", value=float(value))

    @classmethod
    def sine(cls, amplitude: float, frequency_hz: float, phase: float = 0.0):
        return cls(kind="sine", amplitude=float(amplitude),
                   frequency_hz=float(frequency_hz), phase=float(phase))

    @classmethod
    def parse(cls, text: str) -> "InputSignal":
        """Parse 'zero', 'constant:C', or 'sine:A,F_HZ[,PHASE]'."""
        head, _, rest = text.partition(":")
        head = head.strip().lower()
        if head == "zero":
            return cls.zero()
        if head == "constant":
            return cls.constant(float(rest))
        if head == "sine":
            parts = [float(p) for p in rest.split(",")]
            if len(parts) not in (2, 3):
                raise ValueError("sine input needs amplitude,frequency[,phase]")
            return cls.sine(*parts)
        raise ValueError(f"unknown input kind {head!r}")

    def spec_string(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return f"constant:{self.value!r}"
        return f"sine:{self.amplitude!r},{self.frequency_hz!r},{self.phase!r}"

    def peak(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return abs(self.value)
        return abs(self.amplitude)

    def sample(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "constant":
            return np.full_like(t, self.value)
        return self.amplitude * np.sin(2.0 * np.pi * self.frequency_hz * t + self.phase)


@dataclass
class ControlTrace:
    """Clocked control decisions as level codes in 0..levels-1.

    Code c maps to the control value -1 + 2c/(levels-1); binary traces use
    codes {0, 1} for {-1, +1}.
    """

    T: float
    codes: np.ndarray           # (M, n) uint8
    levels: int
    seed: int = 0
    config_hash: str = ""

    @property
    def n(self) -> int:
        return self.codes.shape[1]

    @property
    def length(self) -> int:
        return self.codes.shape[0]

    @property
    def duration(self) -> float:
        return self.length * self.T

    def values(self) -> np.ndarray:
        """Control values in [-1, +1], float64, shape (M, n)."""
        return self.codes.astype(np.float64) * (2.0 / (self.levels - 1)) - 1.0


@dataclass
class SimReport:
    max_abs_state: np.ndarray
    bound_violations: int
    input_bound_exceeded: bool = False
    state_snapshots: Optional[np.ndarray] = None
    snapshot_stride: int = 0


@dataclass(frozen=True)
class NoiseInjection:
    """White disturbance as per-substep state increments N(0, sigma2 * T/S)."""

    sigma2: float
    stage: int = 1


@dataclass(frozen=True)
class Mismatch:
    """Multiplicative gain perturbations applied to the propagation only.

    ``beta_pct``/``kappa_pct`` are fractional magnitudes (0.02 for 2%).
    Sampled mode draws per-stage factors uniform in +-pct once per run from
    the run seed; fixed mode applies 1+pct to every stage. Explicit factor
    arrays override both.
    """

    beta_pct: float = 0.0
    kappa_pct: float = 0.0
    sampled: bool = True
    beta_factors: Optional[tuple] = None
    kappa_factors: Optional[tuple] = None

    def factors(self, seed: int, n: int):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(0x6D69736D617463)))
        if self.beta_factors is not None:
            fb = np.asarray(self.beta_factors, dtype=float)
        elif self.sampled:
            fb = 1.0 + self.beta_pct * rng.uniform(-1.0, 1.0, size=n)
        else:
            fb = np.full(n, 1.0 + self.beta_pct)
        if self.kappa_factors is not None:
            fk = np.asarray(self.kappa_factors, dtype=float)
        elif self.sampled:
            fk = 1.0 + self.kappa_pct * rng.uniform(-1.0, 1.0, size=n)
        else:
            fk = np.full(n, 1.0 + self.kappa_pct)
        if fb.shape != (n,) or fk.shape != (n,):
            raise DimensionError("mismatch factor arrays must have length n")
        return fb, fk


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def keyed_uniform(seed: int, stage: int, k0: int, count: int) -> np.ndarray:
    """Counter-based uniforms in [-1, 1), keyed by (seed, stage, period index).

    The value for a given (seed, stage, period) never depends on run length
    or blocking, so traces are reproducible prefix-stable.
    """
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN
                     ^ (np.uint64(stage + 1) * _STAGE_SALT))
        idx = (np.arange(k0 + 1, k0 + count + 1, dtype=np.uint64)) * _GOLDEN
        vals = _mix64(key + idx)
    u01 = (vals >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return 2.0 * u01 - 1.0


def _dither_block(seed, n, k0, m, scale):
    out = np.empty((m, n))
    for stage in range(n):
        out[:, stage] = keyed_uniform(seed, stage, k0, m)
    out *= scale
    return np.ascontiguousarray(out)


def _period_matrices(system: AnalogSystem, T: float, substeps: int, need_substeps: bool):
    """One-period propagation matrices; substep-composed when required.

    Returns (Ad, Bd, Gd, Minp, Mnoise_base) where Minp (S, n) holds the
    per-substep held-input weights (None without substeps) and Mnoise_base
    (S, n, n) the propagation of a unit state increment applied at the end
    of each substep (None without substeps).
    """
    n, k = system.n, system.k
    BG = np.hstack([system.B, system.Gamma])
    if not need_substeps:
        Ad, M = discretize(system.A, BG, T)
        return Ad, M[:, :k], M[:, k:], None, None
    S = substeps
    Ad_s, M_s = discretize(system.A, BG, T / S)
    Bd_s, Gd_s = M_s[:, :k], M_s[:, k:]
    Ad = np.linalg.matrix_power(Ad_s, S)
    Gd = np.zeros_like(system.Gamma)
    P = np.eye(n)
    Minp = np.empty((S, n))
    Mprop = np.empty((S, n, n))
    # P walks Ad_s^j; weights are indexed so substep j propagates S-1-j more steps
    for j in range(S):
        Gd += P @ Gd_s
        P = P @ Ad_s
    P = np.eye(n)
    for j in range(S - 1, -1, -1):
        Minp[j] = (P @ Bd_s)[:, 0]
        Mprop[j] = P
        P = P @ Ad_s
    return np.ascontiguousarray(Ad), Bd_s, np.ascontiguousarray(Gd), Minp, Mprop


def simulate(system: AnalogSystem, T: float, periods: int, input_signal: InputSignal,
             seed: int = 0, spec: Optional[ChainSpec] = None,
             noise: Optional[NoiseInjection] = None,
             mismatch: Optional[Mismatch] = None,
             substeps: int = 64, x0=None,
             allow_unstable: bool = False, allow_input_overload: bool = False,
             record_states: bool = False, block_len: int = 1 << 14,
             kernels=None):
    """Run the controlled system for ``periods`` clock periods.

    Per period: sample the states at kT, quantize (with optional threshold
    dither) into the control codes, then propagate exactly to (k+1)T with
    the controls held. Returns (ControlTrace, SimReport).

    ``mismatch`` perturbs the propagation matrices only (requires ``spec``);
    the emitted trace means the same thing to a nominal estimator.
    """
    if periods < 1:
        raise ValueError("periods must be >= 1")
    if T <= 0:
        raise ValueError("T must be positive")
    if kernels is None:
        kernels = _kernels
    n = system.n
    b = system.state_bound

    if spec is not None:
        verdict = check_stability(spec, T)
        if not verdict.guaranteed and not allow_unstable:
            raise StabilityError(
                f"no stability guarantee for stages {verdict.failing_stages}; "
                "pass allow_unstable=True to run anyway")
        levels = spec.levels
        dither_amp = spec.dither_amplitude * b
    else:
        levels = 2
        dither_amp = 0.0

    overload = input_signal.peak() > system.input_bound * (1 + 1e-12)
    if overload and not allow_input_overload:
        raise InputBoundError(
            f"input peak {input_signal.peak()} exceeds bound {system.input_bound}")

    prop_system = system
    if mismatch is not None:
        if spec is None:
            raise ValueError("mismatch simulation needs the chain spec")
        fb, fk = mismatch.factors(seed, spec.n)
        actual = replace(spec,
                         beta=tuple(np.asarray(spec.beta) * fb),
                         kappa=tuple(np.asarray(spec.kappa) * fk))
        prop_system = build_chain(actual, readout="last_state")

    need_sub = (input_signal.kind == "sine") or (noise is not None)
    Ad, Bd, Gd, Minp, Mprop = _period_matrices(prop_system, T, substeps, need_sub)
    Ad = np.ascontiguousarray(Ad)
    Gd = np.ascontiguousarray(Gd)

    noise_rng = None
    Mnoise = None
    if noise is not None:
        if not 1 <= noise.stage <= n:
            raise DimensionError(f"noise stage must be in 1..{n}")
        noise_rng = np.random.Generator(
            np.random.Philox(key=np.uint64(seed) ^ np.uint64(0x7468726D6C)))
        # unit increment at the entry stage propagated to the period end
        Mnoise = np.ascontiguousarray(Mprop[:, :, noise.stage - 1])  # (S, n)
        noise_std = np.sqrt(noise.sigma2 * T / substeps)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(n).copy()
    codes = np.empty((periods, n), dtype=np.uint8)
    max_abs = np.zeros(n)
    zeros_blk = None

    snapshots = None
    stride = 0
    if record_states:
        stride = max(1, int(np.ceil(periods / _SNAPSHOT_MAX)))
        snapshots = np.empty((int(np.ceil(periods / stride)), n))

    violations = 0
    const_w = None
    if input_signal.kind == "constant":
        if need_sub:
            const_w = (Minp.sum(axis=0)) * input_signal.value
        else:
            const_w = (Bd @ np.array([[input_signal.value]]))[:, 0]
    S = substeps
    for a in range(0, periods, block_len):
        m = min(block_len, periods - a)
        # per-period additive contribution (held input + noise increments)
        if input_signal.kind == "sine":
            tt = (np.arange(a, a + m) * T)[:, None] + np.arange(S)[None, :] * (T / S)
            w = input_signal.sample(tt) @ Minp
        elif input_signal.kind == "constant":
            w = np.broadcast_to(const_w, (m, n)).copy()
        else:
            w = np.zeros((m, n))
        if noise is not None:
            w += (noise_rng.standard_normal((m, S)) * noise_std) @ Mnoise
        w = np.ascontiguousarray(w)
        if dither_amp > 0.0:
            dith = _dither_block(seed, n, a, m, dither_amp)
        else:
            if zeros_blk is None or zeros_blk.shape[0] < m:
                zeros_blk = np.zeros((m, n))
            dith = zeros_blk[:m]
        if record_states:
            # capture pre-update states on the decimation grid inside this block
            idx = np.arange(a, a + m)
            keep = idx[idx % stride == 0]
            # run sub-blocks so that kernel state is exact at capture points
            pos = a
            for kcap in list(keep) + [a + m]:
                if kcap > pos:
                    mm = kcap - pos
                    violations += kernels.sim_block(
                        Ad, Gd, w[pos - a:pos - a + mm], dith[pos - a:pos - a + mm],
                        b, levels, x, codes[pos:pos + mm], max_abs)
                    pos = kcap
                if kcap < a + m:
                    snapshots[kcap // stride] = x
        else:
            violations += kernels.sim_block(Ad, Gd, w, dith, b, levels, x,
                                            codes[a:a + m], max_abs)
        if np.max(max_abs) > 10.0 * b:
            raise SimulationDivergedError(
                f"state magnitude exceeded 10*b after ~{a + m} periods")

    trace = ControlTrace(T=float(T), codes=codes, levels=levels, seed=seed)
    report = SimReport(max_abs_state=max_abs, bound_violations=int(violations),
                       input_bound_exceeded=bool(overload),
                       state_snapshots=snapshots, snapshot_stride=stride)
    return trace, report


def replay(system: AnalogSystem, T: float, periods: int, input_signal: InputSignal,
           controls: Optional[np.ndarray] = None, substeps: int = 64,
           x0=None) -> np.ndarray:
    """Linear propagation with a fixed control sequence (no feedback loop).

    ``controls`` is an (M, n) float array of held control values, or None
    for the uncontrolled system. Returns the sampled states x(kT) for
    k = 0..M-1 (the values a simulator's quantizer would see).
    """
    n = system.n
    need_sub = input_signal.kind == "sine"
    Ad, Bd, Gd, Minp, _ = _period_matrices(system, T, substeps, need_sub)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(n).copy()
    out = np.empty((periods, n))
    S = substeps
    if input_signal.kind == "sine":
        tt = (np.arange(periods) * T)[:, None] + np.arange(S)[None, :] * (T / S)
        w = input_signal.sample(tt) @ Minp
    elif input_signal.kind == "constant":
        if need_sub:
            w = np.broadcast_to(Minp.sum(axis=0) * input_signal.value, (periods, n))
        else:
            w = np.broadcast_to((Bd @ np.array([[input_signal.value]]))[:, 0],
                                (periods, n))
    else:
        w = np.zeros((periods, n))
    for k in range(periods):
        out[k] = x
        x = Ad @ x + w[k]
        if controls is not None:
            x += Gd @ controls[k]
    return out
