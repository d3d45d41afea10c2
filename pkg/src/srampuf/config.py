"""Run configuration for the command-line pipeline.

A configuration is a JSON object with the sections below; every key is
optional and unknown keys are rejected.  ``SRAMPUF_CONFIG`` names a default
file used when ``--config`` is not given.

.. code-block:: json

    {
      "seed": 0,
      "rows": 256, "cols": 64,
      "device": {"vdd": 1.2, "vth_n": 0.4, "...": "see DeviceConfig"},
      "mismatch": {"sigma_vth_n": 0.01837, "sigma_vth_p": 0.01837},
      "ramp": {"shape": "step", "ramp_time": 1e-9, "hold_time": 5e-8},
      "integrator": {"dt": 1e-12, "settle_voltage": 0.001, "settle_rate": 1e4},
      "noise": {"sigma_init": 0.002},
      "n_trials": 1000,
      "tolerance": 5e-5,
      "fit": {"objective": "pairs"},
      "output_dir": "out"
    }
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .device import DeviceConfig
from .dynamics import IntegratorSpec, RampSpec
from .errors import MalformedError
from .separatrix import DEFAULT_TOLERANCE
from .startup import DEFAULT_HIGH, DEFAULT_LOW, DEFAULT_TRIALS, NoiseSpec
from .variation import MismatchSpec

CONFIG_ENV = "SRAMPUF_CONFIG"

# Output of `srampuf calibrate` at the default seed, geometry and device.
CALIBRATED_SIGMA_VTH = 0.018374579439252334
CALIBRATED_SIGMA_INIT = 0.002


@dataclass(frozen=True)
class HistogramOptions:
    sd_bins: int = 120
    sd_range: tuple[float, float] = (-0.12, 0.12)
    sup_bins: int = 100
    exceedance_max: float = 0.1
    exceedance_step: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "sd_range", tuple(float(v) for v in self.sd_range))
        if self.sd_bins < 1 or self.sup_bins < 1:
            raise ValueError("bin counts must be >= 1")
        if len(self.sd_range) != 2 or not self.sd_range[0] < self.sd_range[1]:
            raise ValueError("sd_range must be (lo, hi) with lo < hi")
        if not (self.exceedance_max > 0 and self.exceedance_step > 0):
            raise ValueError("exceedance grid must be positive")


@dataclass(frozen=True)
class FitOptions:
    objective: str = "pairs"
    probabilities: tuple[float, ...] = (0.99, 0.98, 0.95)

    def __post_init__(self):
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if self.objective not in ("pairs", "histogram"):
            raise ValueError(f"unknown fit objective {self.objective!r}")
        if not all(0.5 < p < 1 for p in self.probabilities):
            raise ValueError("probabilities must lie in (0.5, 1)")


@dataclass(frozen=True)
class CalibrationTargets:
    half_width: float = 0.04
    window_fraction: float = 0.906
    fraction_b: float = 0.08
    ratio_p_to_n: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    rows: int = 256
    cols: int = 64
    device: DeviceConfig = field(default_factory=DeviceConfig)
    mismatch: MismatchSpec = field(
        default_factory=lambda: MismatchSpec(CALIBRATED_SIGMA_VTH, CALIBRATED_SIGMA_VTH))
    ramp: RampSpec = field(default_factory=RampSpec)
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(CALIBRATED_SIGMA_INIT))
    n_trials: int = DEFAULT_TRIALS
    tolerance: float = DEFAULT_TOLERANCE
    region_low: float = DEFAULT_LOW
    region_high: float = DEFAULT_HIGH
    histogram: HistogramOptions = field(default_factory=HistogramOptions)
    fit: FitOptions = field(default_factory=FitOptions)
    calibration: CalibrationTargets = field(default_factory=CalibrationTargets)
    output_dir: str = "out"

    def __post_init__(self):
        if not 0 <= self.seed < 2**63:
            raise ValueError("seed must lie in [0, 2**63)")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 <= self.region_low < self.region_high <= 1:
            raise ValueError("need 0 <= region_low < region_high <= 1")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        d = asdict(self)
        d["device"] = self.device.to_dict()
        return d

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


_SECTIONS = {
    "mismatch": MismatchSpec,
    "ramp": RampSpec,
    "integrator": IntegratorSpec,
    "noise": NoiseSpec,
    "histogram": HistogramOptions,
    "fit": FitOptions,
    "calibration": CalibrationTargets,
}


def _section(cls, data, name, path):
    if not isinstance(data, dict):
        raise MalformedError(f"section {name!r} must be an object", path)
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise MalformedError(f"unknown keys in {name!r}: {sorted(unknown)}", path)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise MalformedError(f"section {name!r}: {exc}", path) from exc


def config_from_dict(data: dict, path=None) -> RunConfig:
    if not isinstance(data, dict):
        raise MalformedError("configuration must be a JSON object", path)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise MalformedError(f"unknown configuration keys {sorted(unknown)}", path)
    kw = {}
    for key, value in data.items():
        if key == "device":
            if not isinstance(value, dict):
                raise MalformedError("section 'device' must be an object", path)
            kw[key] = DeviceConfig.from_dict(value, path)
        elif key in _SECTIONS:
            kw[key] = _section(_SECTIONS[key], value, key, path)
        else:
            kw[key] = value
    for key in ("seed", "rows", "cols", "n_trials"):
        if key in kw and (isinstance(kw[key], bool) or not isinstance(kw[key], int)):
            raise MalformedError(f"{key!r} must be an integer", path)
    try:
        return RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise MalformedError(str(exc), path) from exc


def load_config(path=None) -> RunConfig:
    """Read a configuration file; ``None`` falls back to ``$SRAMPUF_CONFIG`` or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedError(exc.msg, path, exc.lineno) from exc
    return config_from_dict(data, path)


def write_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config.to_dict(), indent=1) + "\n")
    return path
