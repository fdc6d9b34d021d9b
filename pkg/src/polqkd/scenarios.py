"""Bench scenarios.  Each writes CSVs plus ``summary.txt`` into the
output directory and returns the summary as an ordered dict."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path

import numpy as np

from polqkd.config import Scenario, ScenarioConfig
from polqkd.devices import ChannelSpec, DriftProcess, im_transmission
from polqkd.optics import (
    PowerLevel,
    apply_attenuation,
    fiber_loss_db,
    pbs_h_probability,
    pbs_v_probability,
    phase_for_voltage,
)
from polqkd.protocol import (
    Decision,
    SessionConfig,
    alice_run,
    channel_bin_counts,
    pulse_rates,
    _streams,
    run_session,
)
from polqkd.timing import (
    PS_PER_S,
    Channel,
    channel_timestamps,
    gate_by_mcss,
    mcss_edges,
    seconds_to_ps,
    ttu_bin,
    write_tags_bin,
    write_tags_csv,
)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_summary(out: Path, summary: dict) -> None:
    (out / "summary.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in summary.items()))


def _bin_times(n_bins: int, width_s: float) -> np.ndarray:
    return np.arange(n_bins) * width_s


def pulse_train(cfg: ScenarioConfig, out: Path) -> dict:
    """Gated pulses at the detector for a short patch cord and the full link.

    Optical power is followed through the link budget (source, modulator
    gate, attenuator, fiber) and converted to counts with a fixed
    counts-per-microwatt factor.
    """
    s = cfg.session
    p = cfg.params
    rng = _streams(s.seed)["detector"]
    after_evoa = apply_attenuation(cfg.source.cw_power, p["pulse_train.evoa_db"])
    links = {
        "short": p["pulse_train.short_length_m"] / 1000.0,
        "long": s.channel.length_km,
    }
    width = s.bin_width_s
    n_bins = int(round(p["pulse_train.duration_s"] / width))
    times = _bin_times(n_bins, width)
    mid = times + width / 2
    gate = np.array([im_transmission(t, s.clock, s.modulator) for t in mid])
    is_open = gate == 1.0
    counts, peaks, powers = {}, {}, {}
    for name, km in links.items():
        at_det = apply_attenuation(after_evoa, fiber_loss_db(km, s.channel.alpha_db_per_km))
        powers[name] = at_det
        rate = s.detector.dark_rate + p["pulse_train.counts_per_uw"] * at_det.uw * gate
        counts[name] = rng.poisson(rate * width)
        peaks[name] = counts[name][is_open].mean() / width if is_open.any() else 0.0
    level = s.clock.level(np.rint(mid * PS_PER_S).astype(np.int64))
    _write_csv(
        out / "pulse_train.csv",
        ["time_s", "mcss_v", "im_transmission", "counts_short", "counts_long"],
        zip(times, level, gate, counts["short"], counts["long"]),
    )
    return {
        "scenario": Scenario.PULSE_TRAIN.name,
        "short_length_km": links["short"],
        "long_length_km": links["long"],
        "power_after_evoa_dbm": after_evoa.value_dbm,
        "power_short_dbm": powers["short"].value_dbm,
        "power_long_dbm": powers["long"].value_dbm,
        "peak_rate_short_cps": peaks["short"],
        "peak_rate_long_cps": peaks["long"],
        "peak_ratio_long_short": peaks["long"] / peaks["short"],
    }


def voltage_sweep(cfg: ScenarioConfig, out: Path) -> dict:
    """H and V arm intensities against phase-modulator voltage (CW light)."""
    s = cfg.session
    p = cfg.params
    start, stop, step = p["sweep.v_start"], p["sweep.v_stop"], p["sweep.v_step"]
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    volts = np.round(start + step * np.arange(n), 12)
    phi = phase_for_voltage(volts, s.v_pi, p["sweep.v_offset"])
    peak = p["sweep.peak_rate"]
    h = peak * pbs_h_probability(phi, p["sweep.theta_rad"])
    v = peak * pbs_v_probability(phi, p["sweep.theta_rad"])
    dwell = p["sweep.dwell_s"]
    rng = _streams(s.seed)["detector"]
    measured = rng.poisson((h + s.detector.dark_rate) * dwell) / dwell
    _write_csv(
        out / "voltage_sweep.csv",
        ["voltage_v", "phi_rad", "h_rate_cps", "v_rate_cps", "h_measured_cps"],
        zip(volts, phi, h, v, measured),
    )
    return {
        "scenario": Scenario.VOLTAGE_SWEEP.name,
        "points": n,
        "h_max_at_v": float(volts[np.argmax(h)]),
        "h_min_at_v": float(volts[np.argmin(h)]),
        "open_gate_total_cps": peak,
    }


def _random_schedule(session: SessionConfig, rngs):
    bits = rngs["key"].integers(0, 2, size=session.n_cycles).tolist()
    return alice_run(bits, session)


def phase_mod_cw(cfg: ScenarioConfig, out: Path) -> dict:
    s = dataclasses.replace(cfg.session, duration_s=cfg.params["phase_mod.duration_s"],
                            channel=ChannelSpec(drift=DriftProcess(sigma_rad_per_sqrt_s=0.0)))
    rngs = _streams(s.seed)
    schedule, pulses = _random_schedule(s, rngs)
    # intensity modulator off; V light reaches only the other PBS arm
    dark = s.detector.dark_rate
    phis = np.array([pu.phi for pu in pulses])
    rates = dark + (cfg.params["phase_mod.peak_rate"] - dark) * pbs_h_probability(phis)
    counts = channel_bin_counts(rates, s, rngs["detector"], open_fraction=1.0)
    width = s.bin_width_s
    times = _bin_times(counts.size, width)
    cycle = np.minimum((times * s.clock.frequency_hz + 1e-9).astype(int), len(schedule) - 1)
    volts = schedule.voltages[cycle]
    _write_csv(out / "phase_mod_cw.csv", ["time_s", "voltage_v", "counts", "rate_cps"],
               zip(times, volts, counts, counts / width))
    return {
        "scenario": Scenario.PHASE_MOD_CW.name,
        "mean_rate_at_0v_cps": float(counts[volts == 0].mean() / width) if (volts == 0).any() else float("nan"),
        "mean_rate_at_vpi_cps": float(counts[volts != 0].mean() / width) if (volts != 0).any() else float("nan"),
    }


def pulsed_random(cfg: ScenarioConfig, out: Path) -> dict:
    """Random H/V pulses, clock switched on part-way through the record."""
    p = cfg.params
    start_s, total_s = p["pulsed.mcss_start_s"], p["pulsed.duration_s"]
    s = dataclasses.replace(cfg.session, duration_s=total_s - start_s)
    rngs = _streams(s.seed)
    width = s.bin_width_s
    n_pre = int(round(start_s / width))
    pre = rngs["detector"].poisson(np.full(n_pre, s.detector.dark_rate * width))
    schedule, pulses = _random_schedule(s, rngs)
    post = channel_bin_counts(pulse_rates(pulses, np.zeros(len(pulses)), s), s, rngs["detector"])
    counts = np.concatenate([pre, post])
    times = _bin_times(counts.size, width)
    rel = np.rint((times[n_pre:] + width / 2 - n_pre * width) * PS_PER_S).astype(np.int64)
    mcss = np.concatenate([np.zeros(n_pre), s.clock.level(rel)])
    cycle = rel // s.clock.period_ps
    in_key = cycle < len(schedule)
    pm = np.concatenate([np.zeros(n_pre), np.where(in_key, schedule.voltages[np.minimum(cycle, len(schedule) - 1)], 0.0)])
    _write_csv(out / "pulsed_random.csv", ["time_s", "mcss_v", "pm_voltage_v", "counts", "rate_cps"],
               zip(times, mcss, pm, counts, counts / width))
    open_bins = np.concatenate([np.zeros(n_pre, bool), (mcss[n_pre:] == 0) & in_key])
    h_bins = open_bins & (pm == 0)
    v_bins = open_bins & (pm != 0)
    dark_bins = ~open_bins
    return {
        "scenario": Scenario.PULSED_RANDOM.name,
        "frequency_hz": s.clock.frequency_hz,
        "cycles": len(schedule),
        "mean_rate_h_cps": float(counts[h_bins].mean() / width) if h_bins.any() else float("nan"),
        "mean_rate_v_cps": float(counts[v_bins].mean() / width) if v_bins.any() else float("nan"),
        "mean_rate_dark_cps": float(counts[dark_bins].mean() / width),
    }


def gating_demo(cfg: ScenarioConfig, out: Path) -> dict:
    """Short run showing every TTU bin and the one retained per cycle."""
    s = dataclasses.replace(cfg.session, duration_s=cfg.params["gating.duration_s"])
    report = run_session(s, emit_tags=True)
    tags = report.tag_stream
    write_tags_csv(out / "tags.csv", tags)
    write_tags_bin(out / "tags.bin", tags)
    samples = ttu_bin(channel_timestamps(tags, Channel.H_DETECTOR), s.bin_width_s, (0.0, s.duration_s))
    edges = mcss_edges(s.duration_s, s.clock)
    gated = gate_by_mcss(samples, edges, s.offset_ps)
    kept = {g.bin_start_ps: k for k, g in enumerate(gated) if g is not None}
    _write_csv(
        out / "bins.csv",
        ["time_s", "counts", "mcss_v", "retained", "cycle"],
        (
            (x.bin_start_s, x.counts, float(s.clock.level(x.bin_start_ps)),
             int(x.bin_start_ps in kept), kept.get(x.bin_start_ps, ""))
            for x in samples
        ),
    )
    _write_csv(
        out / "retained.csv",
        ["cycle", "time_s", "count", "decision", "alice_bit"],
        (
            (r.cycle, gated[r.cycle].bin_start_s if gated[r.cycle] else "", "" if r.count is None else r.count,
             r.decision.name, r.alice_bit)
            for r in report.per_cycle_log
        ),
    )
    return {
        "scenario": Scenario.GATING_DEMO.name,
        "bins": len(samples),
        "retained": sum(g is not None for g in gated),
        "tag_events": int(tags.size),
    }


def _session_summary(report) -> dict:
    final = report.final_qber
    return {
        "bits_delivered": report.n_cycles,
        "erasures": report.erasures,
        "revealed": len(report.revealed_indices),
        "usable_key_length": report.usable_key_length,
        "key_errors": report.key_errors,
        "final_qber": "undefined" if final is None else final,
    }


def key_run(cfg: ScenarioConfig, out: Path) -> dict:
    report = run_session(cfg.session)
    report.write_cycle_log(out / "cycle_log.csv")
    h_level = cfg.session.detector.signal_rate_h * cfg.session.bin_width_s
    _write_csv(
        out / "key_trace.csv",
        ["bit_index", "normalized_count", "alice_bit", "bob_decision"],
        (
            (r.cycle, "" if r.count is None else r.count / h_level, r.alice_bit, r.decision.name)
            for r in report.per_cycle_log
        ),
    )
    return {"scenario": Scenario.KEY_RUN.name, **_session_summary(report)}


def qber_run(cfg: ScenarioConfig, out: Path) -> dict:
    report = run_session(cfg.session)
    report.write_cycle_log(out / "cycle_log.csv")
    report.write_qber_series(out / "qber.csv")
    stable = [c for t, c, _ in report.qber_series if t <= cfg.session.channel.drift.t_stable_s]
    return {
        "scenario": Scenario.QBER_RUN.name,
        **_session_summary(report),
        "qber_at_t_stable": stable[-1] if stable else "undefined",
        "max_abs_theta_rad": max(abs(r.theta_rad) for r in report.per_cycle_log),
    }


RUNNERS = {
    Scenario.PULSE_TRAIN: pulse_train,
    Scenario.VOLTAGE_SWEEP: voltage_sweep,
    Scenario.PHASE_MOD_CW: phase_mod_cw,
    Scenario.PULSED_RANDOM: pulsed_random,
    Scenario.GATING_DEMO: gating_demo,
    Scenario.KEY_RUN: key_run,
    Scenario.QBER_RUN: qber_run,
}


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> dict:
    """Run ``cfg.scenario`` and write its files into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = RUNNERS[cfg.scenario](cfg, out)
    summary = {"scenario": summary.pop("scenario"), "seed": cfg.session.seed, **summary}
    _write_summary(out, summary)
    return summary


def run_all(cfg: ScenarioConfig, out_dir=None) -> dict:
    """Every scenario, each into its own subdirectory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    return {
        sc: run_scenario(dataclasses.replace(cfg, scenario=sc), out / sc.value)
        for sc in Scenario
    }
