"""File formats: control traces (.cbt), filter coefficients, estimates, configs.

Trace files carry a single-line JSON header followed by the body. Text
bodies hold one line of space-separated level codes per period; packed
bodies (binary controls only) hold the codes as a little-endian bitstream,
bit k*n+l for period k, control l. Coefficient files are JSON with each
matrix stored as base64 row-major binary64 (bit-exact) plus a decimal
mirror for inspection.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .design import FilterCoefficients
from .errors import TraceFormatError
from .estimate import EstimateTrace
from .sim import ControlTrace

FORMAT_VERSION = 1


def config_hash(obj) -> str:
    """Stable 16-hex-digit digest of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(seed=None, cfg_hash=""):
    out = {"version": FORMAT_VERSION, "tool_version": __version__,
           "config_hash": cfg_hash}
    if seed is not None:
        out["seed"] = int(seed)
    return out


# ---------------------------------------------------------------- traces

def write_trace(path, trace: ControlTrace, encoding: str = "packed",
                cfg_hash: str = "") -> None:
    """Write a control trace; ``encoding`` is "packed" (binary only) or "text"."""
    if encoding not in ("packed", "text"):
        raise ValueError("encoding must be 'packed' or 'text'")
    if encoding == "packed" and trace.levels != 2:
        raise TraceFormatError("packed encoding requires binary controls")
    header = {"format": "cbt", **_provenance(trace.seed, cfg_hash or trace.config_hash),
              "T_seconds": trace.T, "n": trace.n, "levels": trace.levels,
              "length": trace.length, "encoding": encoding}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        if encoding == "packed":
            bits = trace.codes.reshape(-1).astype(np.uint8)
            fh.write(np.packbits(bits, bitorder="little").tobytes())
        else:
            buf = io.StringIO()
            np.savetxt(buf, trace.codes, fmt="%d", delimiter=" ")
            fh.write(buf.getvalue().encode())


def read_trace(path) -> ControlTrace:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(header_line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceFormatError(f"bad trace header in {path}") from exc
    if header.get("format") != "cbt":
        raise TraceFormatError(f"{path} is not a control-trace file")
    M, n = int(header["length"]), int(header["n"])
    levels = int(header["levels"])
    if header["encoding"] == "packed":
        total_bits = M * n
        expected = (total_bits + 7) // 8
        if len(body) < expected:
            raise TraceFormatError(f"trace body truncated: {len(body)} < {expected} bytes")
        bits = np.unpackbits(np.frombuffer(body[:expected], dtype=np.uint8),
                             bitorder="little")[:total_bits]
        codes = bits.reshape(M, n).astype(np.uint8)
    elif header["encoding"] == "text":
        codes = np.loadtxt(io.BytesIO(body), dtype=np.uint8, ndmin=2)
        if codes.shape != (M, n):
            raise TraceFormatError(f"trace body shape {codes.shape} != ({M}, {n})")
        if codes.size and codes.max() >= levels:
            raise TraceFormatError("level code out of range")
    else:
        raise TraceFormatError(f"unknown trace encoding {header['encoding']!r}")
    return ControlTrace(T=float(header["T_seconds"]), codes=codes, levels=levels,
                        seed=int(header.get("seed", 0)),
                        config_hash=header.get("config_hash", ""))


# ---------------------------------------------------------- coefficients

def _encode_matrix(M: np.ndarray):
    M = np.ascontiguousarray(M, dtype=np.float64)
    return {"shape": list(M.shape),
            "b64": base64.b64encode(M.tobytes()).decode(),
            "decimal": [[repr(float(x)) for x in row] for row in M]}


def _decode_matrix(obj) -> np.ndarray:
    shape = tuple(obj["shape"])
    raw = base64.b64decode(obj["b64"])
    return np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()


def write_coefficients(path, coeffs: FilterCoefficients, cfg_hash: str = "",
                       gates: dict | None = None) -> None:
    doc = {"format": "cbcoeffs", **_provenance(cfg_hash=cfg_hash),
           "eta2": coeffs.eta2, "T_u": coeffs.T_u,
           "n": coeffs.n, "k": coeffs.k,
           "matrices": {name: _encode_matrix(getattr(coeffs, name))
                        for name in ("Af", "Bf", "Ab", "Bb", "W", "Vf", "Vb")}}
    if gates:
        doc["gates"] = gates
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_coefficients(path) -> FilterCoefficients:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "cbcoeffs":
        raise TraceFormatError(f"{path} is not a coefficients file")
    m = {name: _decode_matrix(doc["matrices"][name])
         for name in ("Af", "Bf", "Ab", "Bb", "W", "Vf", "Vb")}
    return FilterCoefficients(T_u=float(doc["T_u"]), eta2=float(doc["eta2"]), **m)


# ------------------------------------------------------------- estimates

def write_estimates(path, est: EstimateTrace, binary: bool = False,
                    trim_to_valid: bool = True) -> None:
    """CSV (t_seconds, u_hat_1..k) or raw little-endian binary64 sample stream."""
    a, b = est.valid_range if trim_to_valid else (0, est.length)
    samples = est.samples[a:b]
    times = (np.arange(a, b)) * est.T_u
    if binary:
        with open(path, "wb") as fh:
            fh.write(samples.astype("<f8").tobytes())
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds"] + [f"u_hat_{i+1}" for i in range(samples.shape[1])])
        for t, row in zip(times, samples):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_estimates(path, binary: bool = False, k: int = 1,
                   T_u: float | None = None) -> EstimateTrace:
    if binary:
        raw = np.fromfile(path, dtype="<f8")
        if k < 1 or raw.size % k:
            raise TraceFormatError("binary estimate stream length not divisible by k")
        samples = raw.reshape(-1, k)
        if T_u is None:
            raise TraceFormatError("binary estimate streams need T_u")
        return EstimateTrace(T_u=T_u, samples=samples,
                             valid_range=(0, samples.shape[0]))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t_seconds":
        raise TraceFormatError(f"{path} is not an estimates CSV")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    if data.shape[0] < 2:
        raise TraceFormatError("estimates file too short")
    T_u = float(data[1, 0] - data[0, 0])
    return EstimateTrace(T_u=T_u, samples=data[:, 1:],
                         valid_range=(0, data.shape[0]))


# ----------------------------------------------------------------- misc

def write_report(path, report: dict, cfg_hash: str = "") -> None:
    doc = {**_provenance(cfg_hash=cfg_hash), **report}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def write_psd_csv(path, freqs, psd_vals) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_hz", "psd"])
        for f, p in zip(freqs, psd_vals):
            w.writerow([repr(float(f)), repr(float(p))])


def write_transfer_csv(path, points) -> None:
    """CSV with columns omega_rad_s, stf_mag, ntf_mag_1..m."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        m = points[0].ntf.shape[1] if points else 0
        w.writerow(["omega_rad_s", "stf_mag"] + [f"ntf_mag_{i+1}" for i in range(m)])
        for pt in points:
            stf_mag = abs(pt.stf) if np.isscalar(pt.stf) else float(np.linalg.norm(pt.stf))
            ntf_mags = np.abs(np.asarray(pt.ntf)).reshape(-1)
            w.writerow([repr(float(pt.omega)), repr(float(stf_mag))]
                       + [repr(float(v)) for v in ntf_mags])
