"""Bundled pipeline configurations.

"desk-nN" is the bench-scale setup used throughout the docs and tests:
beta = 10/s, kappa = 1.05, T = 1/21.5 s, b = 1, OSR = 32, full-scale
0.1 Hz sine. "hw-nominal" carries the nominal component values of a
discrete-parts prototype (beta = 6250/s, kappa = 1.25, T = 54 us, n = 5,
equal extra-feedback coefficients beta/20) and is meant for simulation-only
studies at those constants.
"""

from __future__ import annotations

import copy

_DESK_BASE = {
    "system": {
        "n": 5,
        "beta": 10.0,
        "rho": 0.0,
        "kappa": 1.05,
        "kappa_fb": None,
        "quantizer_bits": 1,
        "dither_amplitude": 0.0,
        "state_bound": 1.0,
        "input_bound": 1.0,
    },
    "control": {"T": 1.0 / 21.5},
    "design": {"osr": 32.0},
    "input": {"kind": "sine", "amplitude": 1.0, "frequency_hz": 0.1, "phase": 0.0},
    "run": {"periods": 1 << 16, "seed": 1, "T_u": None},
}


def _desk(n):
    cfg = copy.deepcopy(_DESK_BASE)
    cfg["system"]["n"] = n
    return cfg


def _hw_nominal():
    cfg = copy.deepcopy(_DESK_BASE)
    cfg["system"].update({
        "n": 5,
        "beta": 6250.0,
        "kappa": 1.25,
        "kappa_fb": [312.5, 312.5, 312.5, 312.5],
    })
    cfg["control"]["T"] = 54e-6
    cfg["input"] = {"kind": "sine", "amplitude": 1.0, "frequency_hz": 72.4,
                    "phase": 0.0}
    return cfg


PRESETS = {
    **{f"desk-n{n}": _desk(n) for n in range(1, 6)},
    "hw-nominal": _hw_nominal(),
}


def get_preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
