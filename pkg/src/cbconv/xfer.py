"""Signal/noise transfer functions, bandwidth, and analytic noise predictions.

The estimation filter's frequency response is H = G^H (G G^H + eta^2 I)^-1.
For a scalar input this collapses to H = G^H / (||G||^2 + eta^2) and the
end-to-end response H G to the real low-pass ||G||^2 / (||G||^2 + eta^2).
The bandwidth edge omega_crit solves ||G(omega)|| = eta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError
from .model import AnalogSystem, atf, homogeneous_chain_parameters, source_atf


def ntf_from_g(G: np.ndarray, eta2: float) -> np.ndarray:
    """Noise transfer function H (k x m) from an ATF sample G (m x k)."""
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    m, k = G.shape
    if k == 1:
        # matrix-inversion-lemma form, exact for a column G
        g2 = float(np.real(np.vdot(G, G)))
        return G.conj().T / (g2 + eta2)
    return G.conj().T @ np.linalg.inv(G @ G.conj().T + eta2 * np.eye(m))


def ntf(system: AnalogSystem, eta2: float, omega: float) -> np.ndarray:
    """H(omega), shape (k, m)."""
    if eta2 <= 0:
        raise ValueError("eta2 must be positive")
    return ntf_from_g(atf(system, omega), eta2)


def stf(system: AnalogSystem, eta2: float, omega: float):
    """Signal transfer function H(omega) G(omega).

    Returns a float for scalar-input systems (the response is real there);
    a (k, k) complex matrix otherwise.
    """
    G = atf(system, omega)
    H = ntf_from_g(G, eta2)
    HG = H @ G
    if system.k == 1:
        val = complex(HG[0, 0])
        return float(val.real)
    return HG


@dataclass(frozen=True)
class TransferPoint:
    omega: float
    stf: object
    ntf: np.ndarray
    eta2: float


def transfer_grid(system: AnalogSystem, eta2: float, omegas) -> list[TransferPoint]:
    return [TransferPoint(float(w), stf(system, eta2, w), ntf(system, eta2, w), eta2)
            for w in np.asarray(omegas, dtype=float)]


def _gnorm(system: AnalogSystem, omega: float) -> float:
    return float(np.linalg.norm(atf(system, omega)))


def bandwidth(system: AnalogSystem, eta2: float, bracket=None,
              max_iter: int = 200) -> float:
    """Solve ||G(omega_crit)|| = eta by bisection on log omega.

    ``bracket`` defaults to [s*1e-6, s*1e3] with s = max(||A||_2, ||B||_2);
    requires ||G|| to cross eta inside it (monotone decrease suffices).
    """
    eta = np.sqrt(eta2)
    if bracket is None:
        s = max(np.linalg.norm(system.A, 2), np.linalg.norm(system.B, 2))
        if s <= 0:
            raise ValueError("cannot infer a frequency scale from A and B")
        bracket = (s * 1e-6, s * 1e3)
    lo, hi = (float(bracket[0]), float(bracket[1]))
    f_lo = _gnorm(system, lo) - eta
    f_hi = _gnorm(system, hi) - eta
    if f_lo < 0 or f_hi > 0:
        raise ValueError(f"bracket {bracket} does not enclose ||G|| = eta")
    llo, lhi = np.log(lo), np.log(hi)
    for _ in range(max_iter):
        mid = 0.5 * (llo + lhi)
        if _gnorm(system, np.exp(mid)) >= eta:
            llo = mid
        else:
            lhi = mid
        if lhi - llo <= 1e-15 * max(1.0, abs(llo) + abs(lhi)):
            break
    return float(np.exp(0.5 * (llo + lhi)))


def eta_from_osr(gamma: float, osr: float, n: int) -> float:
    """Design parameter eta for an n-stage chain at the given oversampling ratio."""
    if gamma <= 0 or osr <= 0 or n < 1:
        raise ValueError("gamma > 0, osr > 0, n >= 1 required")
    return ((gamma / np.pi) * osr) ** n


def osr_from_bandwidth(T: float, omega_crit: float) -> float:
    """OSR = (1/T) / (2 f_crit)."""
    return (1.0 / T) / (2.0 * omega_crit / (2.0 * np.pi))


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     rel_tol: float = 1e-8, max_depth: int = 40,
                     pre_grid: int = 16) -> float:
    """Adaptive Simpson quadrature with a log-spaced pre-grid on [a, b], 0 <= a < b.

    The pre-grid splits wide dynamic ranges before recursion; tolerance is
    relative to the accumulated integral estimate.
    """
    if not (b > a >= 0):
        raise ValueError("need 0 <= a < b")

    def simpson(x0, x2, f0, f2):
        x1 = 0.5 * (x0 + x2)
        f1 = f(x1)
        return x1, f1, (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f2, whole, x1, f1, depth, tol_abs):
        xl, fl, left = simpson(x0, x1, f0, f1)
        xr, fr, right = simpson(x1, x2, f1, f2)
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * tol_abs:
            return left + right + (left + right - whole) / 15.0
        return (recurse(x0, x1, f0, f1, left, xl, fl, depth + 1, tol_abs / 2)
                + recurse(x1, x2, f1, f2, right, xr, fr, depth + 1, tol_abs / 2))

    # log-spaced pre-grid (linear when a == 0 for the first cell)
    if a == 0.0:
        edges = np.concatenate([[0.0], np.geomspace(b * 1e-6, b, pre_grid)])
    else:
        edges = np.geomspace(a, b, pre_grid + 1)
    fe = [f(x) for x in edges]
    # first pass for a magnitude estimate
    coarse = 0.0
    cells = []
    for i in range(len(edges) - 1):
        x1, f1, whole = simpson(edges[i], edges[i + 1], fe[i], fe[i + 1])
        cells.append((edges[i], edges[i + 1], fe[i], fe[i + 1], whole, x1, f1))
        coarse += whole
    tol_abs = rel_tol * max(abs(coarse), 1e-300)
    total = 0.0
    for (x0, x2, f0, f2, whole, x1, f1) in cells:
        total += recurse(x0, x2, f0, f2, whole, x1, f1, 0, tol_abs / len(cells))
    return total


@dataclass
class NoisePrediction:
    band: tuple[float, float]
    S_N: float
    sigma2_y_B: float
    alpha: float | None = None
    contributions: list = field(default_factory=list)
    closed_form: float | None = None
    band_warning: bool = False


def sigma2_y_white(alpha: float, T: float, b: float) -> float:
    """White-model scale alpha * T * (2b)^2 / 12 for the bounded signals."""
    return alpha * T * (2.0 * b) ** 2 / 12.0


def predict_conversion_noise(system: AnalogSystem, eta2: float,
                             band: tuple[float, float], sigma2_y_B: float,
                             rel_tol: float = 1e-8) -> NoisePrediction:
    """In-band conversion-noise power (sigma^2/2pi) * int_B d omega / ||G||^2.

    ``band`` is two-sided, given as (omega_lo, omega_hi) with the integral
    running over [-omega_hi, -omega_lo] and [omega_lo, omega_hi]; pass
    omega_lo = 0 for the full low-pass band. For undamped homogeneous chains
    the analytic closed form is evaluated alongside the quadrature.
    """
    w_lo, w_hi = float(band[0]), float(band[1])
    if not (0 <= w_lo < w_hi):
        raise ValueError("band must satisfy 0 <= omega_lo < omega_hi")

    def integrand(w):
        if w == 0.0:
            # ||G|| -> inf at an undamped chain's DC pole: integrand -> 0
            try:
                g = _gnorm(system, 1e-300)
            except Exception:
                return 0.0
            return 1.0 / g**2 if np.isfinite(g) and g > 0 else 0.0
        return 1.0 / _gnorm(system, w) ** 2

    integral = adaptive_simpson(integrand, w_lo, w_hi, rel_tol=rel_tol)
    S_N = sigma2_y_B / (2.0 * np.pi) * 2.0 * integral  # both half-axes

    warn = _gnorm(system, w_hi) < np.sqrt(eta2) * (1.0 - 1e-12)

    closed = None
    chain = homogeneous_chain_parameters(system)
    if chain is not None and chain[1] == 0.0 and w_lo == 0.0:
        beta, _, n = chain
        closed = sigma2_y_B / (2.0 * np.pi) * (2.0 / (2 * n + 1)) \
            * w_hi ** (2 * n + 1) / beta ** (2 * n)
    return NoisePrediction(band=(w_lo, w_hi), S_N=S_N, sigma2_y_B=sigma2_y_B,
                           closed_form=closed, band_warning=warn)


def predict_snr(system: AnalogSystem, eta2: float, amplitude: float, n: int,
                gamma: float, osr: float, alpha: float = 1.0) -> float:
    """White-noise SNR estimate in dB for a sine of the given amplitude.

    SNR ~= alpha^-1 (3 A^2 / 2 b^2) (2n+1) (gamma/pi)^(2n) OSR^(2n+1).
    """
    b = system.state_bound
    if amplitude > b * (1 + 1e-12):
        raise ValueError("amplitude exceeds the state bound; prediction invalid")
    snr = (3.0 * amplitude**2 / (2.0 * b**2)) * (2 * n + 1) \
        * (gamma / np.pi) ** (2 * n) * osr ** (2 * n + 1) / alpha
    return 10.0 * np.log10(snr)


def thermal_noise_integrand(system: AnalogSystem, eta2: float,
                            entry_vector) -> Callable[[float], float]:
    """Integrand ||G^H G_z||^2 / (||G||^2 + eta^2)^2 for a disturbance source."""
    def f(w):
        if w == 0.0:
            return 0.0
        G = atf(system, w)
        Gz = source_atf(system, entry_vector, w)
        num_sqrt = np.abs(G.conj()[:, 0] @ Gz) if system.k == 1 else \
            np.linalg.norm(G.conj().T @ Gz)
        g2 = np.float64(np.real(np.sum(G.conj() * G)))
        # divide before squaring: |G^H Gz| and ||G||^2 both blow up toward a
        # DC pole while their ratio stays bounded
        r = np.float64(num_sqrt) / (g2 + eta2)
        if not np.isfinite(r):
            return 0.0
        return float(r * r)
    return f


def _stage_entry_vector(system: AnalogSystem, stage: int, scale: float = 1.0):
    """Entry vector scale * beta_l * e_l for a source at the given stage (1-based)."""
    n = system.n
    if not 1 <= stage <= n:
        raise DimensionError(f"stage must be in 1..{n}")
    beta_l = system.B[0, 0] if stage == 1 else system.A[stage - 1, stage - 2]
    v = np.zeros(n)
    v[stage - 1] = scale * beta_l
    return v


def predict_thermal_noise(system: AnalogSystem, eta2: float, source_entry_stage: int,
                          band: tuple[float, float], sigma2_z_B: float,
                          rel_tol: float = 1e-8) -> float:
    """In-band power contributed by a white disturbance entering one stage.

    The source is referred to the integrator input (entry gain beta_l), so a
    unit-lambda source at stage l has transfer (beta / i omega)^(n-l+1) on an
    undamped homogeneous chain. Multiple sources add: call per source and sum.
    """
    w_lo, w_hi = float(band[0]), float(band[1])
    v = _stage_entry_vector(system, source_entry_stage)
    f = thermal_noise_integrand(system, eta2, v)
    integral = adaptive_simpson(f, w_lo, w_hi, rel_tol=rel_tol)
    return sigma2_z_B / (2.0 * np.pi) * 2.0 * integral


def mismatch_lambda(nominal: float, actual: float) -> float:
    """Relative defect 1 - nominal/actual of a gain element."""
    return 1.0 - nominal / actual


@dataclass(frozen=True)
class MismatchInputModel:
    """White-model spectral scales driving the two mismatch error terms.

    ``sigma2_u``: in-band PSD level of the input; drives the STF-modification
    term. ``sigma2_s``: in-band PSD level of each control signal; drives the
    control-residue term (roughly T for clocked binary controls).
    """
    sigma2_u: float
    sigma2_s: float


def predict_mismatch_noise(system_nominal: AnalogSystem, system_actual: AnalogSystem,
                           eta2: float, band: tuple[float, float],
                           input_model: MismatchInputModel,
                           rel_tol: float = 1e-8) -> tuple[float, float]:
    """In-band powers of the two mismatch error terms (STF term, control term).

    Per-stage relative defects lambda are taken from the forward gains
    (beta) for the input path and from the control gains (kappa beta) for
    the control path; each stage contributes through the same source-ATF
    quadrature as thermal noise, evaluated on the nominal system.
    """
    if (system_nominal.n != system_actual.n) or (system_nominal.k != system_actual.k):
        raise DimensionError("systems must share dimensions")
    n = system_nominal.n
    w_lo, w_hi = float(band[0]), float(band[1])

    def forward_gain(sys_, l):
        return sys_.B[0, 0] if l == 1 else sys_.A[l - 1, l - 2]

    eps_g = 0.0
    eps_q = 0.0
    for l in range(1, n + 1):
        b_nom = forward_gain(system_nominal, l)
        b_act = forward_gain(system_actual, l)
        lam_g = mismatch_lambda(b_nom, b_act) if b_act != 0 else 0.0
        g_nom = system_nominal.Gamma[l - 1, l - 1]
        g_act = system_actual.Gamma[l - 1, l - 1]
        lam_q = mismatch_lambda(g_nom, g_act) if g_act != 0 else 0.0
        if lam_g != 0.0:
            v = _stage_entry_vector(system_nominal, l, scale=lam_g)
            f = thermal_noise_integrand(system_nominal, eta2, v)
            eps_g += input_model.sigma2_u / (2 * np.pi) * 2.0 \
                * adaptive_simpson(f, w_lo, w_hi, rel_tol=rel_tol)
        if lam_q != 0.0:
            v = _stage_entry_vector(system_nominal, l, scale=lam_q)
            f = thermal_noise_integrand(system_nominal, eta2, v)
            eps_q += input_model.sigma2_s / (2 * np.pi) * 2.0 \
                * adaptive_simpson(f, w_lo, w_hi, rel_tol=rel_tol)
    return eps_g, eps_q
