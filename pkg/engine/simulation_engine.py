"""
Simulation Engine
Runs simulated measurements end to end (transmitter, channel, receiver DSP, both
estimator chains, per-frame security metrics) and writes the run's CSV outputs.
"""
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from collectors.txgen import DualPolWaveform, build_waveform, generate_symbols, rrc_taps
from config.experiment import from_dict, set_dotted
from config.settings import SWEEP_PARAMETERS, SWEEP_MEASUREMENTS
from engine.channel import apply_channel, detect, evolve_channel
from engine.security import frame_metrics
from models.estimator_ref import PhaseUkfConfig, cma_weights_frame, reference_chain
from models.estimator_ukf import compensate, configure_from_pilot, run_ukf
from pipelines.dsp import (
    BandPlan, SymbolRecord, apply_calibration, calibrate_snu, estimate_frequency_offset,
    find_timing_offset, isolate_bands, matched_filter_downsample, noise_floor, normalize_channels,
    pilot_power, power_spectrum, segment_frames,
)
from utils.csv_io import (
    FRAMES_COLUMNS, HISTOGRAM_COLUMNS, SUMMARY_COLUMNS, SWEEP_COLUMNS, read_csv, write_csv,
)
from utils.errors import ConfigError, CvqkdError
from utils.seeding import measurement_seeds

logger = logging.getLogger(__name__)

CHAINS = ("ukf", "cma")


@dataclass
class MeasurementResult:
    measurement: int
    frames: list = field(default_factory=list)
    spectra: pd.DataFrame = None
    trace: pd.DataFrame = None
    estimates: pd.DataFrame = None
    cma_weights: pd.DataFrame = None
    freq_offset: float = float("nan")
    v_el: float = float("nan")
    error: str = None
    elapsed: float = 0.0

    @property
    def ok(self):
        return self.error is None


@dataclass
class RunSummary:
    """Per-frame metrics of a run and the aggregates derived from them"""

    frames: pd.DataFrame
    summary: pd.DataFrame
    histogram: pd.DataFrame
    n_measurements: int

    def positive_key_counts(self):
        ok = self.summary[self.summary["status"] == "ok"]
        return {chain: int((ok[ok["chain"] == chain]["mean_skf"] > 0).sum()) for chain in CHAINS}

    def mean_i_ab(self):
        return {chain: float(self.frames[self.frames["chain"] == chain]["i_ab"].mean()) for chain in CHAINS}

    def xi_by_chain(self):
        return {chain: self.frames[self.frames["chain"] == chain]["xi_hat"].to_numpy() for chain in CHAINS}

    def failed(self):
        return sorted(set(self.summary[self.summary["status"] == "failed"]["measurement"]))


def _calibrate(cfg, seed, detected):
    """Balance the y detector and rescale to SNU using LO-only and dark records"""
    n = cfg.dsp.calibration_samples
    blank = DualPolWaveform(np.zeros(n, dtype=complex), np.zeros(n, dtype=complex), cfg.tx.sample_rate)
    shot = detect(blank, cfg.noise, seed, lo_on=True)
    dark = detect(blank, cfg.noise, seed + 1, lo_on=False)

    bandwidth = min(cfg.dsp.normalize_bandwidth, cfg.tx.sample_rate / 2)
    record = calibrate_snu(shot.x, dark.x)
    balanced = normalize_channels(detected, bandwidth, reference=shot)
    return apply_calibration(balanced, record), record


def _symbols(stream, taps, sps, n_symbols):
    timing = find_timing_offset(stream, taps, sps)
    return matched_filter_downsample(stream, taps, sps, timing)[:n_symbols]


def process_measurement(cfg, m):
    """
    One simulated measurement through both estimator chains

    Args:
        cfg: validated ExperimentConfig
        m: measurement index

    Returns:
        MeasurementResult (error set instead of raising on pipeline failures)
    """
    start_time = datetime.now()
    result = MeasurementResult(m)
    seeds = measurement_seeds(cfg.master_seed, m)
    tx, dsp = cfg.tx, cfg.dsp
    try:
        symbols = generate_symbols(cfg.symbols_per_measurement, tx.modulation_variance, seeds["symbols"])
        waveform = build_waveform(symbols, tx)

        trace = evolve_channel(len(waveform), cfg.dynamics, tx.sample_rate, seeds["channel"])
        received = apply_channel(waveform, trace)
        band = (tx.signal_center_freq + cfg.dynamics.freq_offset, tx.signal_bandwidth)
        detected = detect(received, cfg.noise, seeds["detector"],
                          transmittance=cfg.dynamics.transmittance, signal_band=band)

        detected, calibration = _calibrate(cfg, seeds["calibration"], detected)
        result.v_el = calibration.electronic_noise_snu

        result.freq_offset = estimate_frequency_offset(
            detected, tx.pilot_freq, dsp.search_bw, dsp.peak_threshold_db)
        plan = BandPlan.from_config(tx, dsp, result.freq_offset)
        pilot, quantum = isolate_bands(detected, plan)

        noise_var = noise_floor(detected, nperseg=dsp.spectrum_segment)
        ukf_cfg = configure_from_pilot(cfg.ukf, pilot, plan.pilot_freq, noise_var,
                                       p_sig=pilot_power(pilot, noise_var, plan))
        logger.debug("measurement %d: offset %.1f Hz, p_sig %.4g, r_meas %.4g, v_el %.4g",
                     m, result.freq_offset, ukf_cfg.p_sig, ukf_cfg.r_meas, result.v_el)

        track = run_ukf(pilot, ukf_cfg)
        reference = reference_chain(pilot, quantum, cfg.cma, PhaseUkfConfig.from_joint(ukf_cfg),
                                    cfg.frame_length, tx.samples_per_symbol)
        streams = {"ukf": compensate(quantum, track), "cma": reference.stream}

        taps = rrc_taps(tx.rrc_rolloff, tx.rrc_span, tx.samples_per_symbol)
        params = cfg.security.params(tx.modulation_variance, cfg.noise.trusted_loss_tau, result.v_el)
        for chain in CHAINS:
            rx = _symbols(streams[chain], taps, tx.samples_per_symbol, len(symbols))
            record = SymbolRecord(symbols.symbols, rx, cfg.frame_length)
            for f, frame in enumerate(segment_frames(record)):
                metrics = frame_metrics(frame, params)
                result.frames.append({
                    "measurement": m, "frame": f, "chain": chain,
                    "t_hat": metrics.t_hat, "xi_hat": metrics.xi_hat, "i_ab": metrics.i_ab,
                    "chi_be": metrics.chi_be, "skf": metrics.skf,
                })

        spectra = power_spectrum(detected, dsp.spectrum_segment)
        spectra.insert(0, "measurement", m)
        result.spectra = spectra

        if cfg.write_trace:
            truth = trace.to_frame(cfg.trace_decimation)
            idx = truth["sample"].to_numpy()
            truth.insert(0, "measurement", m)
            truth["theta_ukf"] = np.interp(idx, track.index, track.rotation_angle())
            truth["phi_ukf"] = np.interp(idx, track.index, track.phi)
            result.trace = truth

            estimates = track.to_frame(max(1, cfg.trace_decimation // track.decimation))
            estimates.insert(0, "measurement", m)
            result.estimates = estimates
            weights = cma_weights_frame(reference.trajectory, reference.trajectory_stride)
            weights.insert(0, "measurement", m)
            result.cma_weights = weights
    except Exception as e:
        if isinstance(e, CvqkdError):
            logger.error("measurement %d failed: %s", m, e)
        else:
            logger.exception("measurement %d failed unexpectedly", m)
        result.frames = []
        result.trace = result.estimates = result.cma_weights = None
        result.error = f"{type(e).__name__}: {e}"

    result.elapsed = (datetime.now() - start_time).total_seconds()
    return result


def summarize(results, frames, n_measurements, bins):
    """summary.csv rows and the shared-bin excess-noise histogram"""
    rows = []
    for res in results:
        for chain in CHAINS:
            sub = frames[(frames["measurement"] == res.measurement) & (frames["chain"] == chain)]
            rows.append({
                "measurement": res.measurement,
                "chain": chain,
                "status": "ok" if res.ok else "failed",
                "n_frames": len(sub),
                "mean_t_hat": sub["t_hat"].mean() if len(sub) else np.nan,
                "mean_xi_hat": sub["xi_hat"].mean() if len(sub) else np.nan,
                "median_xi_hat": sub["xi_hat"].median() if len(sub) else np.nan,
                "mean_i_ab": sub["i_ab"].mean() if len(sub) else np.nan,
                "mean_chi_be": sub["chi_be"].mean() if len(sub) else np.nan,
                "mean_skf": sub["skf"].mean() if len(sub) else np.nan,
                "freq_offset_hz": res.freq_offset,
                "v_el": res.v_el,
                "error": res.error or "",
            })
    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    hist_rows = []
    if len(frames):
        edges = np.histogram_bin_edges(frames["xi_hat"].to_numpy(), bins=bins)
        for chain in CHAINS:
            counts, _ = np.histogram(frames[frames["chain"] == chain]["xi_hat"].to_numpy(), bins=edges)
            hist_rows += [
                {"chain": chain, "bin_left": lo, "bin_right": hi, "count": int(c)}
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            ]
    histogram = pd.DataFrame(hist_rows, columns=HISTOGRAM_COLUMNS)
    return RunSummary(frames, summary, histogram, n_measurements)


class SimulationEngine:
    """Runs the configured measurements and writes the run outputs"""

    def __init__(self, cfg, verbose=True):
        self.cfg = cfg
        self.verbose = verbose
        self.output_dir = Path(cfg.output_dir)

    def _say(self, text):
        if self.verbose:
            print(text)

    def run_measurements(self):
        """Results ordered by measurement index, whatever the completion order"""
        indices = range(self.cfg.n_measurements)
        if self.cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=self.cfg.workers) as pool:
                results = list(pool.map(process_measurement, [self.cfg] * len(indices), indices))
        else:
            results = [process_measurement(self.cfg, m) for m in indices]

        for res in results:
            if res.ok:
                self._say(f"  ✓ Measurement {res.measurement}: {len(res.frames) // len(CHAINS)} frames "
                          f"per chain ({res.elapsed:.1f}s)")
            else:
                self._say(f"  ✗ Measurement {res.measurement}: {res.error}")
        return sorted(results, key=lambda r: r.measurement)

    def write_outputs(self, run, results):
        write_csv(run.frames, self.output_dir / "frames.csv")
        write_csv(run.summary, self.output_dir / "summary.csv")
        write_csv(run.histogram, self.output_dir / "histogram.csv")
        spectra = [r.spectra for r in results if r.spectra is not None]
        write_csv(pd.concat(spectra, ignore_index=True) if spectra else pd.DataFrame(),
                  self.output_dir / "spectra.csv")
        for name, attr in (("trace.csv", "trace"), ("estimates.csv", "estimates"),
                           ("cma_weights.csv", "cma_weights")):
            tables = [getattr(r, attr) for r in results if getattr(r, attr) is not None]
            if tables:
                write_csv(pd.concat(tables, ignore_index=True), self.output_dir / name)
        with open(self.output_dir / "config.json", "w", encoding="utf-8") as handle:
            json.dump(self.cfg.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        self._say(f"  → Wrote outputs to {self.output_dir}")

    def print_summary(self, run):
        self._say(f"\n{'chain':<6}{'frames':>8}{'mean xi [mSNU]':>16}{'median xi':>12}"
                  f"{'mean I(A:B)':>13}{'SKF>0':>8}")
        counts = run.positive_key_counts()
        for chain in CHAINS:
            sub = run.frames[run.frames["chain"] == chain]
            self._say(f"{chain:<6}{len(sub):>8}{1e3 * sub['xi_hat'].mean():>16.3f}"
                      f"{1e3 * sub['xi_hat'].median():>12.3f}{sub['i_ab'].mean():>13.4f}"
                      f"{counts[chain]:>5}/{run.n_measurements}")

    def run(self, write=True):
        """
        Execute every measurement

        Args:
            write: write CSV outputs to cfg.output_dir

        Returns:
            RunSummary
        """
        start_time = datetime.now()
        self._say("=" * 60)
        self._say("SIMULATION ENGINE STARTED")
        self._say(f"profile={self.cfg.profile} measurements={self.cfg.n_measurements} "
                  f"symbols={self.cfg.symbols_per_measurement} workers={self.cfg.workers}")
        self._say("=" * 60)

        self._say("\n[1/2] Running measurements...")
        results = self.run_measurements()
        rows = [row for res in results for row in res.frames]
        frames = pd.DataFrame(rows, columns=FRAMES_COLUMNS)
        run = summarize(results, frames, self.cfg.n_measurements, self.cfg.histogram_bins)

        if write:
            self._say("\n[2/2] Writing outputs...")
            self.write_outputs(run, results)
        self.print_summary(run)

        self._say("\n" + "=" * 60)
        self._say(f"SIMULATION COMPLETE ({(datetime.now() - start_time).total_seconds():.1f}s)")
        self._say("=" * 60)
        return run


@dataclass
class ComparisonReport:
    table: pd.DataFrame
    ukf_better_fraction: float
    deltas: dict


def compare(frames_csv):
    """
    Chain-by-chain comparison of a frames.csv

    Returns:
        ComparisonReport with per-chain statistics, the fraction of frames where the
        joint UKF has lower excess noise than the CMA chain, and UKF - CMA deltas
    """
    frames = read_csv(frames_csv)
    if frames.empty:
        raise CvqkdError(f"{frames_csv} contains no frames")
    missing = set(FRAMES_COLUMNS) - set(frames.columns)
    if missing:
        raise CvqkdError(f"{frames_csv} is missing columns {sorted(missing)}")

    per_measurement = frames.groupby(["chain", "measurement"])["skf"].mean()
    rows = []
    for chain in CHAINS:
        sub = frames[frames["chain"] == chain]
        skf = per_measurement[chain] if chain in per_measurement.index.get_level_values(0) else pd.Series(dtype=float)
        rows.append({
            "chain": chain,
            "frames": len(sub),
            "mean_xi_hat": sub["xi_hat"].mean(),
            "median_xi_hat": sub["xi_hat"].median(),
            "mean_i_ab": sub["i_ab"].mean(),
            "positive_key_measurements": int((skf > 0).sum()),
            "measurements": int(skf.size),
        })
    table = pd.DataFrame(rows)

    paired = frames.pivot_table(index=["measurement", "frame"], columns="chain", values="xi_hat")
    paired = paired.dropna(subset=[c for c in CHAINS if c in paired.columns])
    if all(c in paired.columns for c in CHAINS) and len(paired):
        better = float((paired["ukf"] < paired["cma"]).mean())
    else:
        better = float("nan")

    by_chain = table.set_index("chain")
    deltas = {
        col: float(by_chain.loc["ukf", col] - by_chain.loc["cma", col])
        for col in ("mean_xi_hat", "median_xi_hat", "mean_i_ab")
    }
    return ComparisonReport(table, better, deltas)


def sweep(cfg, parameter, values, output_dir=None, verbose=True):
    """
    Re-run a reduced experiment for each value of one whitelisted parameter

    Returns:
        sweep DataFrame (one row per value and chain), also written to sweep.csv
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError("sweep.parameter",
                          f"unknown parameter {parameter!r}; valid: {', '.join(SWEEP_PARAMETERS)}")
    rows = []
    for value in values:
        data = cfg.to_dict()
        set_dotted(data, SWEEP_PARAMETERS[parameter], value)
        data["n_measurements"] = min(cfg.n_measurements, SWEEP_MEASUREMENTS)
        point = from_dict(data)
        if verbose:
            print(f"\n→ {parameter} = {value}")
        run = SimulationEngine(point, verbose=verbose).run(write=False)
        counts = run.positive_key_counts()
        for chain in CHAINS:
            sub = run.frames[run.frames["chain"] == chain]
            rows.append({
                "parameter": parameter, "value": value, "chain": chain,
                "mean_xi_hat": sub["xi_hat"].mean(), "mean_i_ab": sub["i_ab"].mean(),
                "mean_skf": sub["skf"].mean(), "positive_key_measurements": counts[chain],
            })
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    write_csv(table, Path(output_dir or cfg.output_dir) / "sweep.csv")
    return table
