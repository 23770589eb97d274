"""Scenario files, the CFR dataset format and CSV writers.

Scenarios are TOML. A CFR dataset is a text file::

    #mbranging-cfr v1
    #meta {"K": ..., "subbands": [...], ...}
    snapshot,subband,subcarrier,real,imag
    0,0,0,0.123...,-0.456...

with one row per complex sample written as the shortest decimal that
round-trips (at most 17 significant digits), so write/read is bit-exact.
"""

from __future__ import annotations

import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .combine import OmpConfig, RangeGrid, RangeProfile, SpbpConfig
from .exceptions import InvalidArgumentError
from .metrics import DB_FLOOR, PeakDetectConfig
from .scene import Isotropic, PhaseDrift, RandomPhase, ScatteringCenter, Scene
from .subband import (
    OfdmParams,
    Subband,
    SubbandPlan,
    gpp_fr3_allocations,
    make_contiguous_sweep,
    plan_from_allocations,
)
from .synth import MEASURED, Cfr, ClockModel, HardwareResponse, NoiseModel

DATASET_MAGIC = "#mbranging-cfr v1"
DATASET_COLUMNS = "snapshot,subband,subcarrier,real,imag"
ALGORITHMS = ("bp", "omp", "spbp")


class ConfigError(InvalidArgumentError):
    """Bad scenario or command-line configuration."""


class DataError(InvalidArgumentError):
    """Unreadable or inconsistent data file."""


# --------------------------------------------------------------------------
# atomic text output


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    # shortest decimal that round-trips; never more than 17 significant digits
    return repr(float(x))


def to_db(values) -> np.ndarray:
    mag = np.abs(np.asarray(values))
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag)
    return np.maximum(db, DB_FLOOR)


def csv_text(kind: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Versioned CSV: ``# mbranging-<kind> v1``, a header naming units, rows."""
    lines = [f"# mbranging-{kind} v1", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def profile_csv(profile: RangeProfile, peak: float | None = None) -> str:
    """``range_m,magnitude_db``; normalised to ``peak`` when given."""
    mag = profile.magnitude
    ref = peak if peak is not None else 1.0
    db = to_db(mag / ref) if ref > 0 else to_db(mag)
    return csv_text("profile", ("range_m", "magnitude_db"), zip(profile.ranges, db))


def detections_csv(ranges, magnitudes) -> str:
    return csv_text("detections", ("range_m", "magnitude_db"), zip(np.asarray(ranges, float), to_db(magnitudes)))


def read_csv_columns(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read one of our CSV outputs back as ``{column: float array}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not lines or not lines[0].startswith("# mbranging-"):
        raise DataError(f"{path}:1: missing '# mbranging-<kind> v1' line")
    header = lines[1].split(",") if len(lines) > 1 else []
    cols: list[list[float]] = [[] for _ in header]
    for lineno, ln in enumerate(lines[2:], start=3):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
        for c, p in zip(cols, parts):
            try:
                c.append(float(p))
            except ValueError:
                raise DataError(f"{path}:{lineno}: not a number: {p!r}") from None
    return {h: np.array(c, dtype=float) for h, c in zip(header, cols)}


# --------------------------------------------------------------------------
# CFR dataset


@dataclass
class CfrDataset:
    """Snapshots of per-subband CFRs plus the metadata needed to process them."""

    sweeps: list[list[Cfr]]
    hardware: dict = field(default_factory=lambda: {"kind": "identity"})
    seeds: dict = field(default_factory=dict)
    note: str = ""
    t_switch: float = 10e-3

    @property
    def n_snapshots(self) -> int:
        return len(self.sweeps)

    @property
    def plan(self) -> SubbandPlan:
        ref = self.sweeps[0]
        bands = tuple(Subband(c.carrier, c.bandwidth) for c in ref)
        return SubbandPlan(bands, OfdmParams(ref[0].subcarrier_spacing), self.t_switch)

    def hardware_response(self) -> HardwareResponse:
        return build_hardware(self.hardware, self.plan)

    def meta(self) -> dict:
        ref = self.sweeps[0]
        return {
            "K": len(ref),
            "subbands": [
                {"carrier": c.carrier, "bandwidth": c.bandwidth, "n_subcarriers": c.n_subcarriers}
                for c in ref
            ],
            "subcarrier_spacing": ref[0].subcarrier_spacing,
            "snapshots": self.n_snapshots,
            "seeds": self.seeds,
            "state": ref[0].state,
            "hardware": self.hardware,
            "t_switch": self.t_switch,
            "note": self.note,
        }


def dataset_text(ds: CfrDataset) -> str:
    lines = [DATASET_MAGIC, "#meta " + json.dumps(ds.meta(), sort_keys=True), DATASET_COLUMNS]
    for s, sweep in enumerate(ds.sweeps):
        for k, cfr in enumerate(sweep):
            for i, v in enumerate(cfr.samples):
                lines.append(f"{s},{k},{i},{_fmt(v.real)},{_fmt(v.imag)}")
    return "\n".join(lines) + "\n"


def write_dataset(path: str | os.PathLike, ds: CfrDataset) -> None:
    write_text_atomic(path, dataset_text(ds))


def read_dataset(path: str | os.PathLike) -> CfrDataset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not lines or lines[0].strip() != DATASET_MAGIC:
        raise DataError(f"{path}:1: not a CFR dataset (expected {DATASET_MAGIC!r})")
    if len(lines) < 3 or not lines[1].startswith("#meta "):
        raise DataError(f"{path}:2: missing '#meta' header")
    try:
        meta = json.loads(lines[1][len("#meta "):])
        bands = meta["subbands"]
        spacing = float(meta["subcarrier_spacing"])
        n_snap = int(meta["snapshots"])
        state = meta.get("state", MEASURED)
        counts = [int(b["n_subcarriers"]) for b in bands]
        if int(meta["K"]) != len(bands):
            raise ValueError("K does not match the subband list")
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}:2: bad metadata: {exc}") from None
    if lines[2].strip() != DATASET_COLUMNS:
        raise DataError(f"{path}:3: expected column header {DATASET_COLUMNS!r}")

    expected = n_snap * sum(counts)
    body = [ln for ln in lines[3:] if ln.strip()]
    if len(body) != expected:
        raise DataError(f"{path}: {len(body)} samples, header promises {expected}")
    values = np.empty(expected, dtype=complex)
    pos = 0
    for s in range(n_snap):
        for k, n in enumerate(counts):
            for i in range(n):
                lineno = 4 + pos
                parts = body[pos].split(",")
                try:
                    if len(parts) != 5 or (int(parts[0]), int(parts[1]), int(parts[2])) != (s, k, i):
                        raise ValueError("out-of-order or malformed row")
                    values[pos] = complex(float(parts[3]), float(parts[4]))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                pos += 1

    sweeps = []
    pos = 0
    try:
        for s in range(n_snap):
            sweep = []
            for k, (b, n) in enumerate(zip(bands, counts)):
                sweep.append(Cfr(k, float(b["carrier"]), float(b["bandwidth"]), spacing,
                                 values[pos:pos + n], state))
                pos += n
            sweeps.append(sweep)
    except InvalidArgumentError as exc:
        raise DataError(f"{path}:2: {exc}") from None
    return CfrDataset(sweeps, meta.get("hardware", {"kind": "identity"}),
                      meta.get("seeds", {}), meta.get("note", ""), float(meta.get("t_switch", 10e-3)))


# --------------------------------------------------------------------------
# scenarios


def build_hardware(params: dict, plan: SubbandPlan) -> HardwareResponse:
    kind = params.get("kind", "identity")
    if kind == "identity":
        return HardwareResponse.identity(plan)
    if kind == "ripple":
        return HardwareResponse.ripple(
            plan,
            ripple_db=float(params.get("ripple_db", 1.0)),
            phase_ripple_deg=float(params.get("phase_ripple_deg", 25.0)),
            seed=int(params["seed"]),
            n_components=int(params.get("n_components", 4)),
        )
    raise InvalidArgumentError(f"unknown hardware kind {kind!r}")


@dataclass
class Scenario:
    scene: Scene
    plan: SubbandPlan
    hardware: dict
    clock: ClockModel
    noise: NoiseModel
    snapshots: int
    grid: RangeGrid
    peaks: PeakDetectConfig
    algorithm: str
    spbp: SpbpConfig
    omp: OmpConfig
    oversampling: int
    truth: tuple[float, ...]
    mu: float | None
    b_tot: tuple[float, ...]
    note: str = ""

    @property
    def seeds(self) -> dict:
        out = {"noise": self.noise.seed, "pilot": self.plan.ofdm.pilot_seed}
        if "seed" in self.hardware:
            out["hardware"] = self.hardware["seed"]
        return out


class _Locator:
    """Maps a key path like ("targets", 1, "range") to a 1-based line number."""

    _header = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
    _key = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")

    def __init__(self, text: str):
        self.entries: dict[tuple, int] = {}
        counts: dict[str, int] = {}
        section: tuple = ()
        for lineno, line in enumerate(text.splitlines(), start=1):
            m = self._header.match(line)
            if m:
                name = m.group(2)
                if m.group(1) == "[[":
                    idx = counts.get(name, 0)
                    counts[name] = idx + 1
                    section = (name, idx)
                else:
                    section = tuple(name.split("."))
                self.entries.setdefault(section, lineno)
                continue
            m = self._key.match(line)
            if m:
                self.entries.setdefault(section + (m.group(1),), lineno)

    def line(self, path: tuple) -> int | None:
        while path:
            if path in self.entries:
                return self.entries[path]
            path = path[:-1]
        return None


class _Section:
    """Typed access to one TOML table, reporting errors with line numbers."""

    def __init__(self, data: dict, path: tuple, source: str, loc: _Locator):
        if not isinstance(data, dict):
            raise ConfigError(self._where(source, loc, path) + f"'{'.'.join(map(str, path))}' must be a table")
        self.data, self.path, self.source, self.loc = data, path, source, loc
        self.used: set[str] = set()

    @staticmethod
    def _where(source, loc, path) -> str:
        line = loc.line(tuple(path))
        return f"{source}:{line}: " if line else f"{source}: "

    def error(self, key: str | None, msg: str) -> ConfigError:
        path = self.path + ((key,) if key else ())
        return ConfigError(self._where(self.source, self.loc, path) + msg)

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind, default=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise self.error(None, f"missing required key '{key}'")
            return default
        value = self.data[key]
        try:
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                return float(value)
            if kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
                return value
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            if kind is list:
                if not isinstance(value, list):
                    raise TypeError
                return value
        except TypeError:
            raise self.error(key, f"'{key}' must be {kind.__name__}") from None
        return value

    def sub(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key, {}), self.path + (key,), self.source, self.loc)

    def check_unknown(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise self.error(extra[0], f"unknown key '{extra[0]}'")


def _floats(sec: _Section, key: str, value) -> list[float]:
    try:
        out = [float(v) for v in value]
        if any(isinstance(v, bool) for v in value):
            raise TypeError
    except (TypeError, ValueError):
        raise sec.error(key, f"'{key}' must be a list of numbers") from None
    return out


def _parse_plan(sec: _Section) -> SubbandPlan:
    ofdm = OfdmParams(
        sec.get("subcarrier_spacing", float, 10e6),
        sec.get("pilot_seed", int, 0),
    )
    t_switch = sec.get("t_switch", float, 10e-3)
    modes = [m for m in ("subbands", "sweep", "allocations") if sec.has(m)]
    if len(modes) != 1:
        raise sec.error(None, "[plan] needs exactly one of 'subbands', 'sweep', 'allocations'")
    mode = modes[0]
    try:
        if mode == "subbands":
            raw = sec.get("subbands", list)
            bands = []
            for item in raw:
                pair = _floats(sec, "subbands", item)
                if len(pair) != 2:
                    raise sec.error("subbands", "each subband is [carrier_hz, bandwidth_hz]")
                bands.append(Subband(*pair))
            plan = SubbandPlan(tuple(bands), ofdm, t_switch)
        elif mode == "sweep":
            sw = sec.sub("sweep")
            plan = make_contiguous_sweep(
                sw.get("start", float, required=True),
                sw.get("bandwidth", float, required=True),
                sw.get("count", int, required=True),
                ofdm,
                t_switch,
            )
            sw.check_unknown()
        else:
            labels = sec.get("allocations", list)
            gran = sec.get("granularity", object, 0.5e9)
            if gran == "exact":
                gran = None
            elif isinstance(gran, bool) or not isinstance(gran, (int, float)):
                raise sec.error("granularity", "'granularity' must be a number or \"exact\"")
            plan = plan_from_allocations(gpp_fr3_allocations(), labels, gran, ofdm, t_switch)
    except ConfigError:
        raise
    except InvalidArgumentError as exc:
        raise sec.error(mode, str(exc)) from None
    sec.check_unknown()
    return plan


def _parse_target(sec: _Section) -> ScatteringCenter:
    model = sec.get("model", str, "isotropic")
    rcs = sec.get("rcs", float, 1.0)
    phase = sec.get("phase", float, 0.0)
    rng = sec.get("range", float, required=True)
    try:
        if model == "isotropic":
            m = Isotropic(rcs, phase)
        elif model == "phase_drift":
            m = PhaseDrift(rcs, phase, sec.get("drift_rate", float, 0.0),
                           sec.get("reference_frequency", float, 0.0))
        elif model == "random_phase":
            seed = sec.get("seed", int, required=True)
            m = RandomPhase(rcs, seed, sec.get("phase_std", float, 0.0), phase)
        else:
            raise sec.error("model", f"unknown model {model!r} (isotropic, phase_drift, random_phase)")
        center = ScatteringCenter(rng, m)
    except ConfigError:
        raise
    except InvalidArgumentError as exc:
        raise sec.error(None, str(exc)) from None
    sec.check_unknown()
    return center


def _grid(sec: _Section, default=(0.5, 3.0, 5e-4)) -> RangeGrid:
    r_min = sec.get("r_min", float, default[0])
    r_max = sec.get("r_max", float, default[1])
    step = sec.get("step", float, default[2])
    sec.check_unknown()
    try:
        return RangeGrid(r_min, r_max, step)
    except InvalidArgumentError as exc:
        raise sec.error(None, str(exc)) from None


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Build a :class:`Scenario` from TOML text; errors carry ``source:line``."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = m.group(1) if m else None
        where = f"{source}:{line}: " if line else f"{source}: "
        raise ConfigError(where + str(exc)) from None
    loc = _Locator(text)
    root = _Section(data, (), source, loc)
    note = root.get("note", str, "")

    if not root.has("plan"):
        raise ConfigError(f"{source}: missing [plan] table")
    plan = _parse_plan(root.sub("plan"))

    raw_targets = root.get("targets", list, [])
    centers = []
    for i, t in enumerate(raw_targets):
        centers.append(_parse_target(_Section(t, ("targets", i), source, loc)))

    sc = root.sub("scene")
    try:
        scene = Scene(
            tuple(centers),
            sc.get("gain_tx", float, 1.0),
            sc.get("gain_rx", float, 1.0),
            sc.get("amplitude_frequency", float, None),
        )
    except InvalidArgumentError as exc:
        raise sc.error(None, str(exc)) from None
    sc.check_unknown()

    hw = root.sub("hardware")
    kind = hw.get("kind", str, "identity")
    hardware: dict = {"kind": kind}
    if kind == "ripple":
        hardware.update(
            ripple_db=hw.get("ripple_db", float, 1.0),
            phase_ripple_deg=hw.get("phase_ripple_deg", float, 25.0),
            seed=hw.get("seed", int, required=True),
            n_components=hw.get("n_components", int, 4),
        )
    elif kind != "identity":
        raise hw.error("kind", f"unknown hardware kind {kind!r} (identity, ripple)")
    hw.check_unknown()

    ck = root.sub("clock")
    try:
        clock = ClockModel(
            ck.get("alpha0_dbc_hz", float, -math.inf),
            ck.get("lo_frequency", float, 10e6),
            ck.get("timing_offset", float, 0.0),
            ck.get("cfo", float, 0.0),
        )
    except InvalidArgumentError as exc:
        raise ck.error(None, str(exc)) from None
    ck.check_unknown()

    nz = root.sub("noise")
    snr = nz.get("snr_db", float, None)
    stochastic = snr is not None or math.isfinite(clock.alpha0_dbc_hz)
    seed = nz.get("seed", int, None)
    if stochastic and seed is None:
        raise nz.error(None, "[noise] seed is required when noise or phase noise is enabled")
    noise = NoiseModel(snr, 0 if seed is None else seed)
    nz.check_unknown()

    sim = root.sub("simulation")
    snapshots = sim.get("snapshots", int, 1)
    if snapshots < 1:
        raise sim.error("snapshots", "'snapshots' must be >= 1")
    sim.check_unknown()

    grid = _grid(root.sub("grid"))

    det = root.sub("detection")
    try:
        peaks = PeakDetectConfig(
            det.get("threshold_db", float, 10.0),
            det.get("min_separation", float, None),
            det.get("exclusion", float, 0.3),
        )
    except InvalidArgumentError as exc:
        raise det.error(None, str(exc)) from None
    oversampling = det.get("oversampling", int, 16)
    det.check_unknown()

    alg = root.sub("algorithm")
    name = alg.get("name", str, "bp")
    if name not in ALGORITHMS:
        raise alg.error("name", f"unknown algorithm {name!r} (bp, omp, spbp)")
    sp = alg.sub("spbp")
    try:
        spbp = SpbpConfig(
            sp.get("mainlobe", float, None),
            sp.get("r_max", float, 1.0),
            sp.get("min_cardinality", int, 2),
            sp.get("min_coverage", float, 0.5),
            sp.get("seed", int, 0),
        )
    except InvalidArgumentError as exc:
        raise sp.error(None, str(exc)) from None
    sp.check_unknown()
    om = alg.sub("omp")
    omp_grid = _grid(om.sub("grid")) if om.has("grid") else None
    try:
        omp = OmpConfig(omp_grid, om.get("max_atoms", int, 10), om.get("residual_threshold", float, 1e-3))
    except InvalidArgumentError as exc:
        raise om.error(None, str(exc)) from None
    om.check_unknown()
    alg.check_unknown()

    tr = root.sub("truth")
    truth = tuple(_floats(tr, "ranges", tr.get("ranges", list, [])))
    mu = tr.get("d_trg", float, None)
    if mu is not None and not mu > 0:
        raise tr.error("d_trg", "'d_trg' must be positive")
    tr.check_unknown()

    swp = root.sub("sweep")
    b_tot = tuple(_floats(swp, "b_tot", swp.get("b_tot", list, [])))
    swp.check_unknown()
    root.check_unknown()

    return Scenario(scene, plan, hardware, clock, noise, snapshots, grid, peaks, name,
                    spbp, omp, oversampling, truth, mu, b_tot, note)


def load_scenario(path: str | os.PathLike) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text, os.fspath(path))

