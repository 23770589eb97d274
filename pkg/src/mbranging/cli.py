"""Command-line entry point: ``mbranging {simulate,raf,combine,metrics,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 algorithm
infeasibility.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .combine import RangeGrid, SpbpConfig, bp_combine, find_lobes, pslr, raf
from .estimators import BackprojectionRanger, OmpRanger, SpbpRanger
from .exceptions import InvalidArgumentError, NoCandidateError
from .io import (
    ALGORITHMS,
    CfrDataset,
    ConfigError,
    DataError,
    build_hardware,
    csv_text,
    detections_csv,
    load_scenario,
    profile_csv,
    read_csv_columns,
    read_dataset,
    to_db,
    write_dataset,
    write_text_atomic,
)
from .metrics import (
    DetectionSet,
    PeakDetectConfig,
    align_rigid,
    coherence_sweep,
    empw,
    mpc,
    nearest_peak,
    nmpm,
    ospa,
    subband_profiles,
)
from .preproc import DEFAULT_OVERSAMPLING, calibrate, estimate_cfr
from .subband import (
    OfdmParams,
    Subband,
    SubbandPlan,
    gpp_fr3_allocations,
    nominal_resolution,
    plan_from_allocations,
    sweep_duration,
    total_aperture,
)
from .synth import rx_symbols, simulate_sweep

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4


class Infeasible(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _say(msg: str) -> None:
    print(msg, flush=True)


def _calibrated(ds: CfrDataset):
    hw = ds.hardware_response()
    try:
        return [[calibrate(c, hw) for c in sweep] for sweep in ds.sweeps]
    except InvalidArgumentError as exc:
        raise DataError(f"cannot calibrate dataset: {exc}") from None


def _settings(args):
    """Merge scenario sections (if any) with command-line overrides."""
    sc = load_scenario(args.scenario) if getattr(args, "scenario", None) else None
    grid = sc.grid if sc else RangeGrid(0.5, 3.0, 5e-4)
    if getattr(args, "grid", None):
        try:
            grid = RangeGrid(*args.grid)
        except InvalidArgumentError as exc:
            raise ConfigError(f"--grid: {exc}") from None
    peaks = sc.peaks if sc else PeakDetectConfig()
    try:
        peaks = PeakDetectConfig(
            args.threshold_db if args.threshold_db is not None else peaks.threshold_db,
            args.min_separation if args.min_separation is not None else peaks.min_separation,
            args.exclusion if args.exclusion is not None else peaks.exclusion,
        )
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    algorithm = getattr(args, "algorithm", None) or (sc.algorithm if sc else "bp")
    return sc, grid, peaks, algorithm


def _estimator(name, sc, grid, peaks, threads):
    sep = peaks.min_separation
    common = dict(threshold_db=peaks.threshold_db, min_separation=sep, exclusion=peaks.exclusion)
    oversampling = sc.oversampling if sc else DEFAULT_OVERSAMPLING
    if name == "bp":
        return BackprojectionRanger(grid, oversampling, **common)
    if name == "spbp":
        cfg = sc.spbp if sc else SpbpConfig()
        return SpbpRanger(grid, oversampling, mainlobe=cfg.mainlobe, r_max=cfg.r_max,
                          min_cardinality=cfg.min_cardinality, min_coverage=cfg.min_coverage,
                          seed=cfg.seed, n_jobs=threads, **common)
    if name == "omp":
        cfg = sc.omp if sc else None
        return OmpRanger(cfg.grid if cfg else None, cfg.max_atoms if cfg else 10,
                         cfg.residual_threshold if cfg else 1e-3, **common)
    raise ConfigError(f"unknown algorithm {name!r}")


def _run_estimator(est, sweeps):
    try:
        est.fit(sweeps)
        return est.predict(sweeps), est.combined_profile(sweeps)
    except NoCandidateError as exc:
        raise Infeasible(str(exc)) from None
    except InvalidArgumentError as exc:
        raise Infeasible(f"{type(est).__name__}: {exc}") from None


def _plan_from_args(args) -> SubbandPlan:
    if args.scenario:
        return load_scenario(args.scenario).plan
    ofdm = OfdmParams(args.subcarrier_spacing)
    try:
        if args.allocations:
            gran = None if args.granularity == "exact" else float(args.granularity)
            return plan_from_allocations(gpp_fr3_allocations(), args.allocations, gran, ofdm)
        if args.subbands:
            bands = []
            for spec in args.subbands:
                f, b = (float(v) for v in spec.split(":"))
                bands.append(Subband(f, b))
            return SubbandPlan(tuple(bands), ofdm)
    except ValueError:
        raise ConfigError("--subbands entries are CARRIER:BANDWIDTH in Hz") from None
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError("give a plan with --scenario, --allocations or --subbands")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    plan = sc.plan
    hw = build_hardware(sc.hardware, plan)
    sweeps = simulate_sweep(sc.scene, plan, hw, sc.clock, sc.noise, sc.snapshots, args.threads)
    estimated = []
    for sweep in sweeps:
        row = []
        for cfr in sweep:
            pilots = plan.ofdm.pilot_symbols(cfr.n_subcarriers)
            row.append(estimate_cfr(rx_symbols(cfr, pilots), pilots, template=cfr))
        estimated.append(row)
    ds = CfrDataset(estimated, sc.hardware, sc.seeds, sc.note, plan.t_switch)
    write_dataset(args.out, ds)
    res = nominal_resolution(total_aperture(plan))
    _say(f"wrote {args.out}: K={plan.K} snapshots={sc.snapshots}")
    _say(f"sweep_duration_s={sweep_duration(plan):.6g} nominal_resolution_m={res:.6g}")
    return EXIT_OK


def cmd_raf(args) -> int:
    plan = _plan_from_args(args)
    res = nominal_resolution(total_aperture(plan))
    mainlobe = args.mainlobe if args.mainlobe is not None else SpbpConfig().resolved_mainlobe(plan)
    step = args.step if args.step is not None else min(1e-3, res / 8)
    grid = RangeGrid.symmetric(args.r_max, step)
    psi = raf(plan, grid)
    db = to_db(psi.magnitude)
    write_text_atomic(args.out, csv_text("raf", ("range_m", "raf_db"), zip(psi.ranges, db)))
    lobes = find_lobes(psi, args.r_max)[: args.lobes]
    _say(f"K={plan.K} aperture_hz={total_aperture(plan):.6g} nominal_resolution_m={res:.6g}")
    _say(f"pslr_db={pslr(psi, mainlobe, args.r_max):.4f} mainlobe_m={mainlobe:.6g}")
    for r, level in lobes:
        _say(f"lobe range_m={r:.6g} level_db={level:.4f}")
    if args.report:
        write_text_atomic(args.report, csv_text("lobes", ("range_m", "level_db"), lobes))
    return EXIT_OK


def cmd_combine(args) -> int:
    sc, grid, peaks, algorithm = _settings(args)
    ds = read_dataset(args.dataset)
    sweeps = _calibrated(ds)
    est = _estimator(algorithm, sc, grid, peaks, args.threads)
    det, profile = _run_estimator(est, sweeps)
    write_text_atomic(args.out, profile_csv(profile))
    if args.detections:
        write_text_atomic(args.detections, detections_csv(det.ranges, det.magnitudes))
    _say(f"algorithm={algorithm} snapshots={ds.n_snapshots} detections={len(det)}")
    for r in det.ranges:
        _say(f"detection range_m={r:.6g}")
    truth = args.truth if args.truth else (sc.truth if sc else ())
    if truth:
        if len(det) < len(truth):
            _say(f"under-detection: {len(det)} of {len(truth)} targets")
        elif len(det) > len(truth):
            _say(f"over-detection: {len(det)} for {len(truth)} targets")
    if algorithm == "omp":
        res = est.solve(sweeps)
        _say(f"omp atoms={res.ranges.size} residual_fraction={res.residual_fraction:.4g}")
    return EXIT_OK


def _target_metrics(sweeps, grid, oversampling, peak_ranges):
    """Per-snapshot MPC/NMPM/EMPW at each peak, averaged over snapshots."""
    out = []
    for r0 in peak_ranges:
        if r0 is None:
            out.append((np.nan, np.nan, np.nan))
            continue
        vals = []
        for sweep in sweeps:
            profs = subband_profiles(sweep, grid, oversampling)
            combined = bp_combine(profs)
            r = nearest_peak(combined, r0)
            vals.append((mpc(profs, r), nmpm(combined, profs, r), empw(combined, r)))
        out.append(tuple(np.mean(vals, axis=0)))
    return out


def cmd_metrics(args) -> int:
    sc, grid, peaks, algorithm = _settings(args)
    truth = tuple(args.truth) if args.truth else (sc.truth if sc else ())
    mu = args.mu if args.mu is not None else (sc.mu if sc else None)
    if not truth:
        raise ConfigError("ground truth is required (--truth or [truth] ranges)")
    if mu is None:
        raise ConfigError("cutoff is required (--mu or [truth] d_trg)")

    with open(args.input, encoding="utf-8", errors="replace") as fh:
        first = fh.readline().strip()
    sweeps = None
    if first.startswith("#mbranging-cfr"):
        ds = read_dataset(args.input)
        sweeps = _calibrated(ds)
        det, _ = _run_estimator(_estimator(algorithm, sc, grid, peaks, args.threads), sweeps)
    else:
        cols = read_csv_columns(args.input)
        if "range_m" not in cols:
            raise DataError(f"{args.input}: no range_m column")
        det = DetectionSet(cols["range_m"], np.ones_like(cols["range_m"]), "file")

    aligned, shift = align_rigid(det, truth, mu)
    dist = ospa(aligned, truth, mu, 1.0)
    rows = []
    if sweeps is not None:
        matched = []
        for t in truth:
            near = [r for r in det.ranges if abs(r + shift - t) <= mu]
            matched.append(min(near, key=lambda r: abs(r + shift - t)) if near else None)
        oversampling = sc.oversampling if sc else DEFAULT_OVERSAMPLING
        for t, (m, n, e) in zip(truth, _target_metrics(sweeps, grid, oversampling, matched)):
            rows += [("mpc", t, m, "ratio"), ("nmpm", t, n, "dB"), ("empw", t, e, "m")]
    rows += [
        ("ospa", "", dist, "m"),
        ("detected_count", "", len(det), "count"),
        ("true_count", "", len(truth), "count"),
        ("alignment_shift", "", shift, "m"),
    ]
    text = csv_text("metrics", ("quantity", "target_m", "value", "unit"),
                    [(q, float(t) if t != "" else "", v if isinstance(v, int) else float(v), u)
                     for q, t, v, u in rows])
    write_text_atomic(args.out, text)
    _say(f"ospa_m={dist:.6g} detected={len(det)} truth={len(truth)} shift_m={shift:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    b_tot = tuple(args.b_tot) if args.b_tot else sc.b_tot
    if not b_tot:
        raise ConfigError("B_tot list is required (--b-tot or [sweep] b_tot)")
    hw = build_hardware(sc.hardware, sc.plan)
    sweeps = simulate_sweep(sc.scene, sc.plan, hw, sc.clock, sc.noise, sc.snapshots, args.threads)
    sweeps = [[calibrate(c, hw) for c in s] for s in sweeps]
    reference = None
    if args.at_truth:
        if len(sc.truth) != 1:
            raise ConfigError("--at-truth needs exactly one [truth] range")
        reference = sc.truth[0]
    try:
        report = coherence_sweep(sweeps, sc.plan, b_tot, sc.grid, sc.peaks, sc.oversampling,
                                 reference_range=reference)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from None
    text = csv_text("coherence", ("carrier_hz", "b_tot_hz", "mpc", "nmpm_db", "empw_m"), report.rows)
    write_text_atomic(args.out, text)
    _say(f"wrote {args.out}: {len(report.rows)} rows, smoothed={report.smoothed}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_detection_args(p) -> None:
    p.add_argument("--scenario", help="TOML scenario supplying grid/detection/algorithm settings")
    p.add_argument("--grid", nargs=3, type=float, metavar=("R_MIN", "R_MAX", "STEP"))
    p.add_argument("--threshold-db", type=float)
    p.add_argument("--min-separation", type=float)
    p.add_argument("--exclusion", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbranging", description="Multiband OFDM ranging toolkit.")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (output does not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a CFR dataset from a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("raf", help="ideal range ambiguity function and lobe report")
    p.add_argument("--scenario")
    p.add_argument("--allocations", nargs="+", metavar="LABEL")
    p.add_argument("--granularity", default="0.5e9", help="tile width in Hz, or 'exact'")
    p.add_argument("--subbands", nargs="+", metavar="F:B")
    p.add_argument("--subcarrier-spacing", type=float, default=10e6)
    p.add_argument("--mainlobe", type=float, help="main-lobe half-width in m")
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--step", type=float)
    p.add_argument("--lobes", type=int, default=5, help="number of lobes to report")
    p.add_argument("--report", help="optional lobes CSV")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_raf)

    p = sub.add_parser("combine", help="multiband range profile and detections")
    p.add_argument("dataset")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    _add_detection_args(p)
    p.add_argument("--truth", nargs="+", type=float)
    p.add_argument("--detections", help="detections CSV output")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("metrics", help="coherence metrics and OSPA against ground truth")
    p.add_argument("input", help="CFR dataset or detections CSV")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    _add_detection_args(p)
    p.add_argument("--truth", nargs="+", type=float)
    p.add_argument("--mu", type=float, help="OSPA cutoff in m")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="coherence metrics versus carrier and total bandwidth")
    p.add_argument("scenario")
    p.add_argument("--b-tot", nargs="+", type=float, help="total bandwidths in Hz")
    p.add_argument("--at-truth", action="store_true",
                   help="evaluate MPC/NMPM at the single [truth] range instead of the detected peak")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
