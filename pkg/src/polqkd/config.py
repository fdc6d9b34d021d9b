"""Flat ``key = value`` configuration files.

One setting per line, dotted keys for sections, ``#`` starts a comment::

    scenario = QBER_RUN
    seed = 3
    clock.frequency_hz = 1      # 1 Hz run
    drift.sigma_rad_per_sqrt_s = 0

Every key has a default (see :data:`KEYS`); unknown keys are rejected.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from polqkd.devices import ChannelSpec, DetectorSpec, DriftProcess, ModulatorSpec, SourceSpec
from polqkd.errors import InvalidParameter
from polqkd.optics import PowerLevel
from polqkd.protocol import ClassifierThresholds, SessionConfig
from polqkd.timing import ClockSpec


class Scenario(enum.Enum):
    PULSE_TRAIN = "pulse-train"
    VOLTAGE_SWEEP = "voltage-sweep"
    PHASE_MOD_CW = "phase-mod-cw"
    PULSED_RANDOM = "pulsed-random"
    GATING_DEMO = "gating-demo"
    KEY_RUN = "key-run"
    QBER_RUN = "qber-run"

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        norm = text.strip().upper().replace("-", "_")
        try:
            return cls[norm]
        except KeyError:
            raise ValueError(text) from None


class ConfigError(InvalidParameter):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    accepted: str = ""


def _int(text: str) -> int:
    return int(text, 0)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise ValueError(text)
    return value


def _str(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _frac(x):
    return 0 < x < 1


KEYS = {
    "scenario": Key(Scenario.parse, Scenario.QBER_RUN, None,
                    "one of " + ", ".join(s.name for s in Scenario)),
    "output_dir": Key(_str, "out"),
    "seed": Key(_u64, 0, None, "unsigned 64-bit integer"),
    "duration_s": Key(float, 300.0, _pos, "> 0"),
    "v_pi": Key(float, 4.0, _pos, "> 0"),
    "qber_sample_fraction": Key(float, 0.1, _frac, "(0, 1)"),
    "qber_window_s": Key(float, 30.0, _pos, "> 0"),
    "bin_width_s": Key(float, 0.01, _pos, "> 0"),
    "sample_offset_s": Key(float, None, _nonneg, ">= 0 and < one clock period"),
    "clock.frequency_hz": Key(float, 10.0, _pos, "> 0"),
    "clock.amplitude_v": Key(float, 4.0, _pos, "> 0"),
    "clock.duty": Key(float, 0.5, _frac, "(0, 1)"),
    "channel.length_km": Key(float, 5.0, _nonneg, ">= 0"),
    "channel.alpha_db_per_km": Key(float, 0.141, _nonneg, ">= 0"),
    "channel.reference_length_km": Key(float, 5.0, _nonneg, ">= 0"),
    "drift.t_stable_s": Key(float, 150.0, _nonneg, ">= 0"),
    "drift.sigma_rad_per_sqrt_s": Key(float, 2.0e-2, _nonneg, ">= 0"),
    "drift.theta_max": Key(float, math.pi / 4, _pos, "> 0"),
    "detector.signal_rate_h": Key(float, 2.0e4, _pos, "> detector.leak_rate_v"),
    "detector.leak_rate_v": Key(float, 7.5e3, _pos, "between detector.dark_rate and detector.signal_rate_h"),
    "detector.dark_rate": Key(float, 2.5e3, _nonneg, ">= 0 and < detector.leak_rate_v"),
    "modulator.extinction_db": Key(float, 30.0, _pos, "> 0"),
    "modulator.gate_open_fraction": Key(float, None, _frac, "(0, 1), equal to 1 - clock.duty"),
    "thresholds.t_signal": Key(_int, None, _nonneg, "integer >= 0, < thresholds.t_hv"),
    "thresholds.t_hv": Key(_int, None, _pos, "integer > thresholds.t_signal"),
    "source.cw_power_dbm": Key(float, 0.0),
    "source.wavelength_nm": Key(float, 1550.0, _pos, "> 0"),
    "pulse_train.duration_s": Key(float, 1.0, _pos, "> 0"),
    "pulse_train.evoa_db": Key(float, 21.55, _nonneg, ">= 0"),
    "pulse_train.short_length_m": Key(float, 1.0, _nonneg, ">= 0"),
    "pulse_train.counts_per_uw": Key(float, 2.0e5, _pos, "> 0"),
    "sweep.v_start": Key(float, 0.0),
    "sweep.v_stop": Key(float, 8.0),
    "sweep.v_step": Key(float, 0.1, _pos, "> 0"),
    "sweep.v_offset": Key(float, 0.0),
    "sweep.theta_rad": Key(float, 0.0),
    "sweep.peak_rate": Key(float, 3.1e4, _pos, "> 0"),
    "sweep.dwell_s": Key(float, 1.0, _pos, "> 0"),
    "phase_mod.duration_s": Key(float, 2.0, _pos, "> 0"),
    "phase_mod.peak_rate": Key(float, 4.5e4, _pos, "> detector.dark_rate"),
    "pulsed.duration_s": Key(float, 5.0, _pos, "> pulsed.mcss_start_s"),
    "pulsed.mcss_start_s": Key(float, 1.2, _nonneg, ">= 0"),
    "gating.duration_s": Key(float, 0.9, _pos, "> 0"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    session: SessionConfig
    scenario: Scenario
    output_dir: Path
    source: SourceSpec = field(default_factory=SourceSpec)
    params: dict = field(default_factory=dict)

    def param(self, key: str):
        return self.params[key]

    def with_seed(self, seed: int) -> "ScenarioConfig":
        import dataclasses

        return dataclasses.replace(self, session=dataclasses.replace(self.session, seed=seed))


def parse_text(text: str, origin: str = "<config>") -> dict:
    """Raw ``key -> string value`` pairs from config text."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"{origin}:{lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(key, f"{origin}:{lineno}: unknown key")
        if key in values:
            raise ConfigError(key, f"{origin}:{lineno}: duplicate key")
        values[key] = value
    return values


def build_config(raw: dict, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Typed, validated configuration from raw string values plus overrides.

    ``overrides`` holds already-typed values (e.g. from command-line flags)
    and wins over the file.
    """
    v = {}
    for key, spec in KEYS.items():
        if key in raw:
            try:
                value = spec.parse(raw[key])
            except ValueError:
                raise ConfigError(key, f"cannot parse {raw[key]!r}; accepted: {spec.accepted or 'any'}") from None
        else:
            value = spec.default
        v[key] = value
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        if value is not None:
            v[key] = value
    for key, spec in KEYS.items():
        value = v[key]
        if value is not None and spec.check is not None and not spec.check(value):
            raise ConfigError(key, f"value {value!r} out of range; accepted: {spec.accepted}")

    def make(key, factory, **kw):
        try:
            return factory(**kw)
        except InvalidParameter as exc:
            raise ConfigError(key, str(exc)) from None

    clock = make("clock", ClockSpec, frequency_hz=v["clock.frequency_hz"],
                 amplitude_v=v["clock.amplitude_v"], duty=v["clock.duty"])
    open_fraction = v["modulator.gate_open_fraction"]
    if open_fraction is None:
        open_fraction = 1.0 - clock.duty
    elif abs(open_fraction - (1.0 - clock.duty)) > 1e-12:
        raise ConfigError("modulator.gate_open_fraction",
                          f"{open_fraction} does not match 1 - clock.duty = {1.0 - clock.duty}")
    drift = DriftProcess(v["drift.t_stable_s"], v["drift.sigma_rad_per_sqrt_s"], v["drift.theta_max"])
    channel = ChannelSpec(v["channel.length_km"], v["channel.alpha_db_per_km"], drift,
                          v["channel.reference_length_km"])
    detector = make("detector", DetectorSpec, signal_rate_h=v["detector.signal_rate_h"],
                    leak_rate_v=v["detector.leak_rate_v"], dark_rate=v["detector.dark_rate"])
    modulator = make("modulator.gate_open_fraction", ModulatorSpec,
                     extinction_db=v["modulator.extinction_db"], gate_open_fraction=open_fraction)
    t_sig, t_hv = v["thresholds.t_signal"], v["thresholds.t_hv"]
    if (t_sig is None) != (t_hv is None):
        raise ConfigError("thresholds", "set both thresholds.t_signal and thresholds.t_hv, or neither")
    thresholds = None if t_sig is None else make("thresholds", ClassifierThresholds,
                                                 t_signal=t_sig, t_hv=t_hv)
    session = make(
        "session", SessionConfig,
        duration_s=v["duration_s"], clock=clock, channel=channel, detector=detector,
        modulator=modulator, v_pi=v["v_pi"], thresholds=thresholds,
        qber_sample_fraction=v["qber_sample_fraction"], seed=v["seed"],
        bin_width_s=v["bin_width_s"], sample_offset_s=v["sample_offset_s"],
        qber_window_s=v["qber_window_s"],
    )
    source = SourceSpec(PowerLevel(v["source.cw_power_dbm"]), v["source.wavelength_nm"])
    if v["pulsed.duration_s"] <= v["pulsed.mcss_start_s"]:
        raise ConfigError("pulsed.duration_s", "must exceed pulsed.mcss_start_s")
    if v["phase_mod.peak_rate"] <= detector.dark_rate:
        raise ConfigError("phase_mod.peak_rate", "must exceed detector.dark_rate")
    if v["sweep.v_stop"] < v["sweep.v_start"]:
        raise ConfigError("sweep.v_stop", "must be >= sweep.v_start")
    params = {k: val for k, val in v.items() if k.split(".")[0] in
              ("pulse_train", "sweep", "phase_mod", "pulsed", "gating")}
    return ScenarioConfig(session, v["scenario"], Path(v["output_dir"]), source, params)


def load_config(path=None, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Read a config file (``None`` means all defaults)."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        raw = parse_text(path.read_text(), str(path))
    return build_config(raw, overrides)
