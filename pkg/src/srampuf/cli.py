"""Command-line front end: ``srampuf <command> [options]``.

Commands
--------
population  sample a mismatch population and sweep its SD
startup     emulate (or ingest) start-up statistics for a memory array
fit         fit single and double logistic maps from SD to SUP1
thresholds  SD thresholds and reliable-cell percentages per probability
metrics     uniqueness, uniformity, bit aliasing and reliability of responses
calibrate   tune sigma_vth and sigma_init to the distribution targets

Exit status: 0 success, 2 usage, 3 malformed input, 4 no convergence,
5 I/O failure, 6 empty or inconsistent input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics, plotting, startup, transfer, variation
from .config import RunConfig, load_config, write_config
from .errors import IO_ERROR_EXIT, SrampufError
from .separatrix import read_sd_csv, sd_values, write_sd_csv
from .startup import NoiseSpec
from .variation import MismatchSpec

log = logging.getLogger("srampuf")

REPORT_THRESHOLDS = (0.03, 0.04, 0.05)


# --------------------------------------------------------------------------
# helpers


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, n_trials=args.trials)
    if args.sigma_vth is not None:
        ratio = (cfg.mismatch.sigma_vth_p / cfg.mismatch.sigma_vth_n
                 if cfg.mismatch.sigma_vth_n > 0 else 1.0)
        cfg = replace(cfg, mismatch=MismatchSpec(args.sigma_vth, args.sigma_vth * ratio))
    if args.noise_sigma is not None:
        cfg = replace(cfg, noise=NoiseSpec(args.noise_sigma))
    if args.tol is not None:
        cfg = replace(cfg, tolerance=args.tol)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _population(cfg: RunConfig):
    nominal = cfg.device.nominal_cell()
    return variation.sample_population(nominal, cfg.mismatch, cfg.n_cells, cfg.seed)


def _sd_summary(sd) -> dict:
    return {
        "n_cells": int(sd.size),
        "mean_volts": float(np.mean(sd)),
        "std_volts": float(np.std(sd)),
        "fraction_within_0.04": variation.window_fraction(sd, 0.04),
        "exceedance": {f"{t:g}": variation.exceedance(sd, t) for t in REPORT_THRESHOLDS},
    }


def _exceedance_grid(cfg: RunConfig) -> np.ndarray:
    h = cfg.histogram
    n = int(round(h.exceedance_max / h.exceedance_step))
    return np.arange(n + 1) * h.exceedance_step


# --------------------------------------------------------------------------
# commands


def cmd_population(args) -> int:
    cfg, out = _resolve(args)
    env = cfg.device.environment()
    pop = _population(cfg)
    log.info("SD sweep over %d cells", len(pop))
    records = variation.sd_sweep(pop, env, cfg.ramp, cfg.integrator, cfg.tolerance, args.workers)
    sd = sd_values(records)
    variation.write_population_csv(pop, out / "population.csv")
    write_sd_csv(records, out / "sd.csv")
    hist = variation.make_histogram(sd, cfg.histogram.sd_bins, cfg.histogram.sd_range)
    variation.write_histogram_csv(hist, out / "sd_histogram.csv")
    grid = _exceedance_grid(cfg)
    variation.write_exceedance_csv(sd, grid, out / "exceedance.csv")
    summary = _sd_summary(sd)
    summary["unconverged"] = sum(not r.converged for r in records)
    _write_json(summary, out / "population_summary.json")
    plotting.sd_histogram(hist, out / "sd_histogram.png")
    plotting.exceedance(grid, variation.exceedance_curve(sd, grid), out / "exceedance.png")
    print(f"within +/-0.04 V: {100 * summary['fraction_within_0.04']:.1f}%  "
          f"std(SD) = {1e3 * summary['std_volts']:.2f} mV")
    return 0


def _startup_outputs(cfg, out, dataset, bits=None, mask_p=None):
    startup.write_counts_csv(dataset, out / "startup_counts.csv")
    if bits is not None:
        startup.write_bitmap(bits, dataset.rows, dataset.cols, out / "startup_bitmap.txt")
    hist = startup.sup_histogram(dataset, cfg.histogram.sup_bins)
    variation.write_histogram_csv(hist, out / "sup_histogram.csv")
    startup.spatial_map(dataset, out / "spatial_map.csv")
    report = startup.region_report(dataset, cfg.region_low, cfg.region_high)
    if mask_p is not None:
        mask = metrics.select_mask(dataset, mask_p)
        metrics.write_mask_json(mask, out / "mask.json")
        report["mask_p_threshold"] = mask_p
        report["mask_selected_fraction"] = mask.selected_count / len(mask)
    _write_json(report, out / "startup_report.json")
    plotting.sup_histogram(hist, out / "sup_histogram.png", cfg.region_low, cfg.region_high)
    plotting.spatial_map(dataset.sup1.reshape(dataset.rows, dataset.cols),
                         out / "spatial_map.png")
    print(f"A0 {100 * report['fraction_A0']:.1f}%  B {100 * report['fraction_B']:.1f}%  "
          f"A1 {100 * report['fraction_A1']:.1f}%  mean BER {report['mean_ber']:.4f}")
    return report


def cmd_startup(args) -> int:
    cfg, out = _resolve(args)
    if args.ingest:
        dataset = startup.ingest_dataset(args.ingest, args.rows, args.cols)
        _startup_outputs(cfg, out, dataset, dataset.bits if args.bitmap else None, args.mask_p)
    else:
        env = cfg.device.environment()
        pop = _population(cfg)
        log.info("shortcut bounds from an SD sweep of %d cells", len(pop))
        records = variation.sd_sweep(pop, env, cfg.ramp, cfg.integrator, cfg.tolerance,
                                     args.workers)
        log.info("emulating %d trials per cell", cfg.n_trials)
        dataset = startup.simulate_dataset(pop, env, cfg.rows, cfg.cols, cfg.ramp, cfg.noise,
                                           cfg.n_trials, cfg.seed, cfg.integrator, args.workers,
                                           keep_bits=args.bitmap, sd_records=records)
        _startup_outputs(cfg, out, dataset, dataset.bits, args.mask_p)
    if args.reads:
        chip = args.chip_id or f"chip{cfg.seed}"
        reads = metrics.sample_responses(dataset, args.reads, cfg.seed, chip)
        metrics.write_response_file(reads, out / f"{chip}.txt")
    return 0


def _overlay(cfg, sd, sup, fits):
    bins = cfg.histogram.sup_bins
    edges = np.linspace(0.0, 1.0, bins + 1)
    measured = np.histogram(sup, bins=bins, range=(0.0, 1.0))[0] / sup.size
    predicted = {name: np.histogram(transfer.evaluate(f.model, sd), bins=bins,
                                    range=(0.0, 1.0))[0] / sd.size
                 for name, f in fits.items()}
    return edges, measured, predicted


def cmd_fit(args) -> int:
    cfg, out = _resolve(args)
    records = read_sd_csv(args.sd)
    sd = sd_values(records)
    dataset = startup.ingest_dataset(args.sup)
    sup = dataset.sup1
    pairs = transfer.quantile_pairs(sd, sup)
    objective = args.objective or cfg.fit.objective
    fits = {"single": transfer.fit_single(pairs, objective=objective),
            "double": transfer.fit_double(pairs, objective=objective)}
    for name, f in fits.items():
        transfer.write_model_json(f, out / f"model_{name}.json")
    xs, ys = pairs[:, 0], pairs[:, 1]
    with (out / "fit_curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sd_volts", "sup1_paired", "sup1_single", "sup1_double"])
        f1 = transfer.evaluate(fits["single"].model, xs)
        f2 = transfer.evaluate(fits["double"].model, xs)
        for row in zip(xs, ys, f1, f2):
            w.writerow([repr(float(v)) for v in row])
    edges, measured, predicted = _overlay(cfg, sd, sup, fits)
    with (out / "fit_overlay.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "measured", "single", "double"])
        for k in range(len(measured)):
            w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])),
                        repr(float(measured[k])), repr(float(predicted["single"][k])),
                        repr(float(predicted["double"][k]))])
    summary = {name: dict(f.to_dict(), converged=f.converged, flat=f.flat,
                          slope_at_zero=transfer.slope_at_zero(f.model))
               for name, f in fits.items()}
    summary["objective"] = objective
    summary["n_pairs"] = int(len(pairs))
    _write_json(summary, out / "fit_summary.json")
    plotting.transfer_curves(xs, ys, {n: f.model for n, f in fits.items()},
                             out / "fit_curves.png")
    centers = 0.5 * (edges[:-1] + edges[1:])
    plotting.overlay_histogram(centers, measured, predicted, out / "fit_overlay.png")
    d = fits["double"].model
    print(f"single: k = {fits['single'].model.k:.1f} /V  residual {fits['single'].residual:.4g}")
    print(f"double: m = {d.m:.4f}  k1 = {d.k1:.1f} /V  k2 = {d.k2:.1f} /V  "
          f"residual {fits['double'].residual:.4g}")
    return 0


def cmd_thresholds(args) -> int:
    cfg, out = _resolve(args)
    model = (transfer.read_model_json(args.model) if args.model
             else transfer.REFERENCE_DOUBLE)
    probs = args.p if args.p else cfg.fit.probabilities
    records = read_sd_csv(args.sd)
    rows = transfer.threshold_table(records, model, probs, cfg.device.vdd)
    transfer.write_threshold_csv(rows, out / "thresholds.csv")
    for p, th, pct in rows:
        print(f"p = {p:g}: SD_th = {th:.4f} V, {pct:.1f}% of cells")
    return 0


def cmd_metrics(args) -> int:
    _, out = _resolve(args)
    chips = {}
    for path in args.responses:
        chip_id, reads = metrics.read_response_file(path)
        if chip_id in chips:
            raise SrampufError(f"duplicate chip id {chip_id!r}")
        chips[chip_id] = reads
    mask = metrics.read_mask_json(args.mask) if args.mask else None
    report = metrics.metric_report(chips, mask)
    metrics.write_report_json(report, out / "metrics.json")
    for name in ("uniqueness", "bit_aliasing", "reliability", "uniformity"):
        v = report[name]["value"]
        shown = v if isinstance(v, str) else f"{v:.2f}%"
        print(f"{name}: {shown} (ideal {report[name]['ideal']:g}%)")
    return 0


def cmd_calibrate(args) -> int:
    cfg, out = _resolve(args)
    env = cfg.device.environment()
    tg = cfg.calibration
    nominal = cfg.device.nominal_cell()
    log.info("calibrating sigma_vth on %d cells", cfg.n_cells)
    cal_vth = variation.calibrate_sigma_vth(
        nominal, env, cfg.n_cells, cfg.seed, tg.half_width, tg.window_fraction,
        tg.ratio_p_to_n, sigma0=cfg.mismatch.sigma_vth_n or 0.02, ramp=cfg.ramp,
        solver=cfg.integrator, tol=cfg.tolerance, workers=args.workers)
    mismatch = MismatchSpec(cal_vth.sigma_vth, cal_vth.sigma_vth * tg.ratio_p_to_n)
    cfg = replace(cfg, mismatch=mismatch)
    pop = _population(cfg)
    records = variation.sd_sweep(pop, env, cfg.ramp, cfg.integrator, cfg.tolerance,
                                 args.workers)
    log.info("calibrating sigma_init with %d trials per cell", cfg.n_trials)
    cal_noise = startup.calibrate_sigma_init(
        pop, records, env, tg.fraction_b, cfg.n_trials, cfg.seed,
        sigma0=cfg.noise.sigma_init or 2e-3, ramp=cfg.ramp, solver=cfg.integrator,
        workers=args.workers, low=cfg.region_low, high=cfg.region_high)
    cfg = replace(cfg, noise=NoiseSpec(cal_noise.sigma_init))
    write_config(cfg, out / "calibrated_config.json")
    sd = sd_values(records)
    report = {
        "sigma_vth_n": mismatch.sigma_vth_n,
        "sigma_vth_p": mismatch.sigma_vth_p,
        "sigma_init": cal_noise.sigma_init,
        "fraction_within_half_width": cal_vth.fraction,
        "fraction_B": cal_noise.fraction_b,
        "sd_summary": _sd_summary(sd),
        "sigma_vth_history": [list(h) for h in cal_vth.evaluations],
        "sigma_init_history": [list(h) for h in cal_noise.evaluations],
    }
    _write_json(report, out / "calibration.json")
    write_sd_csv(records, out / "sd.csv")
    print(f"sigma_vth = {1e3 * mismatch.sigma_vth_n:.3f} mV "
          f"({100 * cal_vth.fraction:.1f}% within +/-{tg.half_width} V)")
    print(f"sigma_init = {1e3 * cal_noise.sigma_init:.3f} mV "
          f"(B region {100 * cal_noise.fraction_b:.1f}%)")
    return 0


# --------------------------------------------------------------------------
# parser


def _probability(text: str) -> float:
    p = float(text)
    if not 0.5 < p < 1.0:
        raise argparse.ArgumentTypeError("probability must lie in (0.5, 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: $SRAMPUF_CONFIG)")
    common.add_argument("--seed", type=int, help="master seed for all random streams")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--workers", type=int, default=1, help="worker threads")
    common.add_argument("--trials", type=int, help="power-up trials per cell")
    common.add_argument("--sigma-vth", type=float, help="n-channel threshold sigma in V")
    common.add_argument("--noise-sigma", type=float, help="initial-condition noise sigma in V")
    common.add_argument("--tol", type=float, help="SD bisection tolerance in V")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="srampuf", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("population", parents=[common], help="SD sweep of a mismatch population")
    p.set_defaults(func=cmd_population)

    p = sub.add_parser("startup", parents=[common], help="start-up statistics")
    p.add_argument("--ingest", help="measured counts CSV or bitmap file")
    p.add_argument("--rows", type=int, help="rows of an ingested counts file")
    p.add_argument("--cols", type=int, help="columns of an ingested counts file")
    p.add_argument("--bitmap", action="store_true", help="also write the per-trial bitmap")
    p.add_argument("--mask-p", type=_probability, help="write a reliable-cell mask")
    p.add_argument("--reads", type=int, default=0, help="write this many sampled responses")
    p.add_argument("--chip-id", help="chip id of the sampled responses")
    p.set_defaults(func=cmd_startup)

    p = sub.add_parser("fit", parents=[common], help="fit SD -> SUP1 transfer functions")
    p.add_argument("sd", help="SD CSV")
    p.add_argument("sup", help="start-up counts CSV or bitmap")
    p.add_argument("--objective", choices=("pairs", "histogram"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("thresholds", parents=[common], help="SD threshold table")
    p.add_argument("sd", help="SD CSV")
    p.add_argument("--model", help="model JSON (default: reference double logistic)")
    p.add_argument("--p", type=_probability, nargs="+", help="target probabilities")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("metrics", parents=[common], help="PUF quality metrics")
    p.add_argument("responses", nargs="+", help="response files, one per chip")
    p.add_argument("--mask", help="mask JSON applied to every response")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate sigma_vth and sigma_init")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except SrampufError as exc:
        print(f"srampuf: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"srampuf: I/O error: {exc}", file=sys.stderr)
        return IO_ERROR_EXIT
    except ValueError as exc:
        print(f"srampuf: {exc}", file=sys.stderr)
        return 6
