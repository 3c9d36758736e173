"""Spectral measurements on estimate traces: PSD, SNR/SNDR/SFDR, sweeps, peak checks.

PSDs are one-sided Welch densities normalized so that summing psd * df
recovers the signal variance. Tone power is integrated over the fundamental
+- a guard of bins; SNR excludes the first harmonics from the noise while
SNDR counts them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps
from scipy.ndimage import median_filter, percentile_filter

from .design import design_filter
from .errors import NoToneError
from .estimate import estimate_batch
from .model import ChainSpec, build_chain
from .sim import InputSignal, simulate
from .xfer import bandwidth, eta_from_osr, predict_snr

DEFAULT_SEGMENT = 1 << 14
DEFAULT_GUARD = 3
DEFAULT_SNDR_HARMONICS = 6


@dataclass
class SpectrumReport:
    freqs: np.ndarray
    psd: np.ndarray
    segment_length: int
    sample_rate: float
    band: Optional[tuple[float, float]] = None
    snr_db: Optional[float] = None
    sndr_db: Optional[float] = None
    sfdr_db: Optional[float] = None
    tone: Optional[tuple[float, float]] = None  # (hz, amplitude)

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def integrated_power(self, f_lo=0.0, f_hi=np.inf) -> float:
        sel = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        return float(self.psd[sel].sum() * self.df)


def psd(samples, sample_rate: float, segment_length: int = DEFAULT_SEGMENT,
        overlap: float = 0.5, window="hann") -> SpectrumReport:
    """Welch power spectral density of a sampled estimate.

    ``segment_length`` must be a power of two no larger than the sample
    count. ``window`` is any scipy window spec; ("kaiser", 38.0) is the
    high-dynamic-range choice for deep noise floors.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if segment_length & (segment_length - 1):
        raise ValueError("segment_length must be a power of two")
    if segment_length > x.size:
        raise ValueError("segment_length exceeds the sample count")
    noverlap = int(round(overlap * segment_length))
    f, p = sps.welch(x, fs=sample_rate, window=window, nperseg=segment_length,
                     noverlap=noverlap, detrend="constant", scaling="density")
    return SpectrumReport(freqs=f, psd=p, segment_length=segment_length,
                          sample_rate=sample_rate)


def _tone_interpolate(freqs, p, i):
    """Parabolic refinement of the peak location on log power."""
    if 0 < i < len(p) - 1 and p[i - 1] > 0 and p[i + 1] > 0 and p[i] > 0:
        la, lb, lc = np.log(p[i - 1]), np.log(p[i]), np.log(p[i + 1])
        denom = la - 2 * lb + lc
        if denom < 0:
            shift = 0.5 * (la - lc) / denom
            shift = float(np.clip(shift, -0.5, 0.5))
            return freqs[i] + shift * (freqs[1] - freqs[0])
    return freqs[i]


def snr_in_band(report: SpectrumReport, band: tuple[float, float],
                tone_guard_bins: int = DEFAULT_GUARD,
                harmonics_for_sndr: int = DEFAULT_SNDR_HARMONICS,
                require_tone: bool = True,
                min_prominence_db: float = 10.0) -> SpectrumReport:
    """Locate the fundamental inside ``band`` and compute SNR, SNDR, SFDR (dB).

    The tone is the most prominent in-band bin (parabolic-refined); its power
    integrates the guard window. Noise is the remaining in-band power, with
    the first ``harmonics_for_sndr`` harmonics excluded for SNR and included
    for SNDR. SFDR compares the tone against the largest remaining in-band
    spur (same guard width). Returns a completed copy of the report.
    """
    f, p = report.freqs, report.psd
    df = report.df
    f_lo, f_hi = band
    in_band = (f >= f_lo) & (f <= f_hi)
    if not np.any(in_band):
        raise ValueError("band contains no PSD bins")
    floor = median_filter(p, size=51, mode="nearest")
    pb = np.where(in_band, p, 0.0)
    i0 = int(np.argmax(pb))
    prominent = p[i0] > floor[i0] * 10 ** (min_prominence_db / 10.0)
    if not prominent:
        if require_tone:
            raise NoToneError("no tone rises above the in-band floor")
        noise = float(p[in_band].sum() * df)
        return replace(report, band=(float(f_lo), float(f_hi)), snr_db=None,
                       sndr_db=None, sfdr_db=None, tone=None)

    g = tone_guard_bins
    tone_sl = slice(max(i0 - g, 0), i0 + g + 1)
    tone_power = float(p[tone_sl].sum() * df)
    f_tone = _tone_interpolate(f, p, i0)
    amp = float(np.sqrt(2.0 * tone_power))

    base = in_band.copy()
    base[tone_sl] = False
    noise_sndr = float(p[base].sum() * df)

    mask_snr = base.copy()
    for h in range(2, harmonics_for_sndr + 2):
        ih = int(round(h * f_tone / df))
        if 0 <= ih < f.size:
            mask_snr[max(ih - g, 0): ih + g + 1] = False
    noise_snr = float(p[mask_snr].sum() * df)

    # largest non-tone spur, integrated over the same guard width
    spur_p = np.where(base, p, 0.0)
    isp = int(np.argmax(spur_p))
    spur_power = float(p[max(isp - g, 0): isp + g + 1].sum() * df) if spur_p[isp] > 0 else 0.0

    def db(x):
        return 10.0 * np.log10(x) if x > 0 else np.inf

    return replace(report, band=(float(f_lo), float(f_hi)),
                   snr_db=db(tone_power / noise_snr) if noise_snr else np.inf,
                   sndr_db=db(tone_power / noise_sndr) if noise_sndr else np.inf,
                   sfdr_db=db(tone_power / spur_power) if spur_power else np.inf,
                   tone=(float(f_tone), amp))


def tone_fit(samples, sample_rate: float, f0: float):
    """Least-squares sine fit at a known frequency: (amplitude, phase, offset).

    Leakage-free alternative to bin integration; use for precise amplitude
    recovery of a known test tone.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    t = np.arange(x.size) / sample_rate
    D = np.column_stack([np.sin(2 * np.pi * f0 * t), np.cos(2 * np.pi * f0 * t),
                         np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(D, x, rcond=None)
    amp = float(np.hypot(coef[0], coef[1]))
    phase = float(np.arctan2(coef[1], coef[0]))
    return amp, phase, float(coef[2])


def noise_floor(report: SpectrumReport, percentile: float = 20.0,
                window_bins: int = 51) -> np.ndarray:
    """Rolling-percentile floor estimate; robust to narrowband lines."""
    return percentile_filter(report.psd, percentile=percentile,
                             size=window_bins, mode="nearest")


def spectral_slope(report: SpectrumReport, f_lo: float, f_hi: float,
                   exclude_tone_hz: Optional[float] = None,
                   exclude_harmonics: int = 7, guard_bins: int = 6,
                   percentile: float = 20.0, n_bands: int = 24) -> float:
    """Noise-floor slope in dB/decade over [f_lo, f_hi].

    Fits the rolling-percentile floor against log10(f) after averaging into
    log-spaced bands (so high-frequency bins do not dominate), optionally
    excluding neighborhoods of a tone and its harmonics.
    """
    f = report.freqs
    floor = noise_floor(report, percentile=percentile)
    sel = (f >= f_lo) & (f <= f_hi)
    if exclude_tone_hz is not None:
        df = report.df
        for h in range(1, exclude_harmonics + 1):
            sel &= ~(np.abs(f - h * exclude_tone_hz) < guard_bins * df)
    lf = np.log10(f[sel])
    ld = 10.0 * np.log10(np.maximum(floor[sel], 1e-320))
    edges = np.linspace(lf[0], lf[-1], n_bands + 1)
    pts = []
    for i in range(n_bands):
        m = (lf >= edges[i]) & (lf < edges[i + 1])
        if np.any(m):
            pts.append((0.5 * (edges[i] + edges[i + 1]), float(ld[m].mean())))
    pts = np.asarray(pts)
    if pts.shape[0] < 3:
        raise ValueError("too few points for a slope fit")
    return float(np.polyfit(pts[:, 0], pts[:, 1], 1)[0])


def line_prominence_db(report: SpectrumReport, band: tuple[float, float],
                       median_bins: int = 51, skip_edge_bins: int = 5):
    """Largest narrowband line prominence over the local floor, in dB.

    Prominence integrates the 3 bins around each candidate (a windowed line
    occupies ~3 bins) against 3x the rolling-median floor. Returns
    (prominence_db, frequency_hz).
    """
    f, p = report.freqs, report.psd
    df = report.df
    med = median_filter(p, size=median_bins, mode="nearest")
    sel = (f >= max(band[0], skip_edge_bins * df)) & (f <= band[1])
    idx = np.flatnonzero(sel)
    idx = idx[(idx > 0) & (idx < f.size - 1)]
    if idx.size == 0:
        raise ValueError("band contains no interior PSD bins")
    line = p[idx - 1] + p[idx] + p[idx + 1]
    prom = 10.0 * np.log10(line / np.maximum(3.0 * med[idx], 1e-320))
    j = int(np.argmax(prom))
    return float(prom[j]), float(f[idx[j]])


@dataclass
class SweepPoint:
    amplitude: float
    snr_db: Optional[float]
    sndr_db: Optional[float]
    predicted_db: Optional[float]
    noise_power: float
    bound_violations: int


def snr_sweep(spec: ChainSpec, T: float, osr: float, amplitudes: Sequence[float],
              f0: float, periods: int, seed: int = 0,
              readout: str = "last_state", segment_length: int = DEFAULT_SEGMENT,
              alpha: float = 1.0, snap_f0_to_bin: bool = True) -> list[SweepPoint]:
    """Simulate + estimate + measure SNR per amplitude, beside the prediction.

    The tone is snapped to a PSD bin center by default so that the windowed
    tone energy stays inside the guard (coherent measurement). Points with
    amplitude above the input bound run with the overload flag; a point with
    no detectable tone reports the noise floor only.
    """
    amps = list(amplitudes)
    if sorted(amps) != amps:
        raise ValueError("amplitudes must be sorted ascending")
    n = spec.n
    gamma = T * abs(spec.beta[0])
    eta = eta_from_osr(gamma, osr, n)
    system = build_chain(spec, readout=readout)
    coeffs = design_filter(system, eta * eta, T)
    fs = 1.0 / T
    f_crit = bandwidth(system, eta * eta) / (2.0 * np.pi)
    f_use = round(f0 / (fs / segment_length)) * (fs / segment_length) \
        if snap_f0_to_bin else f0
    out = []
    for i, A in enumerate(amps):
        sig = InputSignal.sine(A, f_use)
        trace, rep = simulate(system, T, periods, sig, seed=seed + i, spec=spec,
                              allow_input_overload=True)
        est = estimate_batch(coeffs, trace)
        rpt = psd(est.valid_samples()[:, 0], fs, segment_length)
        band = (3 * rpt.df, f_crit)
        try:
            done = snr_in_band(rpt, band)
            snr_db, sndr_db = done.snr_db, done.sndr_db
        except NoToneError:
            snr_db = sndr_db = None
        try:
            pred = predict_snr(system, eta * eta, A, n, gamma, osr, alpha=alpha)
        except ValueError:
            pred = None
        out.append(SweepPoint(amplitude=float(A), snr_db=snr_db, sndr_db=sndr_db,
                              predicted_db=pred,
                              noise_power=rpt.integrated_power(*band),
                              bound_violations=rep.bound_violations))
    return out


def limit_cycle_check(spec_plain: ChainSpec, spec_fb: ChainSpec, T: float,
                      osr: float, u_const: float, periods: int, seed: int = 0,
                      segment_length: int = 1 << 16, x0=None):
    """Run both systems on a constant input and report the largest line prominence.

    Returns ((prom_plain_db, f_plain), (prom_fb_db, f_fb)). The estimator of
    each run uses that run's own control matrix (the extra feedback is known
    to the filter).
    """
    results = []
    for spec in (spec_plain, spec_fb):
        n = spec.n
        gamma = T * abs(spec.beta[0])
        eta = eta_from_osr(gamma, osr, n)
        system = build_chain(spec, readout="last_state")
        coeffs = design_filter(system, eta * eta, T)
        f_crit = bandwidth(system, eta * eta) / (2.0 * np.pi)
        trace, _ = simulate(system, T, periods, InputSignal.constant(u_const),
                            seed=seed, spec=spec, x0=x0)
        est = estimate_batch(coeffs, trace)
        rpt = psd(est.valid_samples()[:, 0], 1.0 / T, segment_length)
        results.append(line_prominence_db(rpt, (0.0, f_crit)))
    return tuple(results)


def in_band_error_power(samples, sample_rate: float, f_lo: float, f_hi: float,
                        segment_length: int = DEFAULT_SEGMENT,
                        window="hann") -> float:
    """Integrated PSD over [f_lo, f_hi] (convenience for noise comparisons)."""
    rpt = psd(samples, sample_rate, segment_length, window=window)
    return rpt.integrated_power(f_lo, f_hi)
