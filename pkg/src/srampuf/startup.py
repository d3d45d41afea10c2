"""Start-up probability statistics: emulation, ingestion, regions and BER.

Noise model: each power-up starts from (0, 0) plus an independent Gaussian
offset on each node (standard deviation ``sigma_init``), clamped to
[0, vdd].  A trial whose transient does not settle is repeated with a fresh
offset, up to ``max_retries`` times; after that it is scored by the sign of
``v_q - v_qb`` at the end of the hold time (a tie scores '0').  The
offset for attempt ``a`` of trial ``t`` in cell ``c`` is a pure function of
``(seed, c, t, a)``.

Shortcut
--------
The latch is a competitive system: raising either node only ever pulls
the other node's current downwards.  Its flow therefore preserves the
order ``(v_q, -v_qb)``, so any start that is "deeper" in a basin than a
start already known to land there lands there too.  The SD search leaves,
per cell, the largest axis voltage ``u`` that did not flip the cell away
from its bias.  For an S1-biased cell every start with ``v_q <= u`` (and
``v_qb >= 0``, which the clamp guarantees) therefore settles in S1 without
being integrated; S0-biased cells mirror this on ``v_qb``.  Only the
remaining trials are simulated.  ``shortcut=False`` integrates every trial.

File formats
------------
Counts CSV::

    cell_id,n_ones,n_trials
    0,990,1000

Bitmap (one line per cell, one character per trial)::

    rows cols trials
    0110...

Spatial map CSV: ``rows`` lines of ``cols`` comma-separated SUP1 values.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from . import rng
from .device import CellEnvironment, CellInstance
from .dynamics import DEFAULT_INTEGRATOR, DEFAULT_RAMP, IntegratorSpec, RampSpec, kernel_args, run_kernel
from .errors import EmptySetError, MalformedError
from .separatrix import DEFAULT_TOLERANCE, sd_batch
from .variation import Histogram, Population, make_histogram

DEFAULT_TRIALS = 1000
DEFAULT_LOW = 0.09
DEFAULT_HIGH = 0.91
MAX_RETRIES = 10


@dataclass(frozen=True)
class NoiseSpec:
    sigma_init: float = 0.0

    def __post_init__(self):
        if self.sigma_init < 0:
            raise ValueError("sigma_init must be >= 0")


@dataclass(frozen=True)
class StartupRecord:
    cell_id: int
    n_trials: int
    n_ones: int
    n_zeros: int
    sup1: float
    sup0: float
    retries_exhausted: int = 0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.n_ones < 0 or self.n_zeros < 0 or self.n_ones + self.n_zeros != self.n_trials:
            raise ValueError("n_ones + n_zeros must equal n_trials")

    @classmethod
    def from_counts(cls, cell_id: int, n_ones: int, n_trials: int,
                    retries_exhausted: int = 0) -> "StartupRecord":
        if n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not 0 <= n_ones <= n_trials:
            raise ValueError(f"n_ones = {n_ones} outside [0, {n_trials}]")
        n_zeros = n_trials - n_ones
        return cls(int(cell_id), int(n_trials), int(n_ones), int(n_zeros),
                   n_ones / n_trials, n_zeros / n_trials, int(retries_exhausted))


@dataclass
class StartupDataset:
    rows: int
    cols: int
    records: list
    source: str = "simulated"
    bits: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.records) != self.rows * self.cols:
            raise ValueError(f"{len(self.records)} records for a {self.rows}x{self.cols} array")
        for k, r in enumerate(self.records):
            if r.cell_id != k:
                raise ValueError(f"record {k} has cell_id {r.cell_id}")
        if self.source not in ("simulated", "measured"):
            raise ValueError(f"unknown source {self.source!r}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sup1(self) -> np.ndarray:
        return np.array([r.sup1 for r in self.records], dtype=float)

    @property
    def n_ones(self) -> np.ndarray:
        return np.array([r.n_ones for r in self.records], dtype=np.int64)

    @property
    def n_trials(self) -> np.ndarray:
        return np.array([r.n_trials for r in self.records], dtype=np.int64)

    def retries_exhausted(self) -> int:
        return int(sum(r.retries_exhausted for r in self.records))

    @classmethod
    def from_counts(cls, n_ones, n_trials, rows: int, cols: int,
                    source: str = "simulated", bits=None, exhausted=None) -> "StartupDataset":
        n_ones = np.asarray(n_ones)
        n_trials = np.broadcast_to(np.asarray(n_trials), n_ones.shape)
        exhausted = np.zeros(n_ones.shape, dtype=np.int64) if exhausted is None else exhausted
        records = [StartupRecord.from_counts(k, int(a), int(b), int(e))
                   for k, (a, b, e) in enumerate(zip(n_ones, n_trials, exhausted))]
        return cls(rows, cols, records, source, bits)


# --------------------------------------------------------------------------
# emulation kernels


@nb.njit(cache=True, nogil=True)
def _one_trial(p, cid, trial, sigma, seed, max_retries,
               vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, bias, safe):
    """Returns (bit, exhausted).  ``safe < 0`` disables the order shortcut."""
    vq = 0.0
    vqb = 0.0
    for attempt in range(max_retries + 1):
        z0, z1 = rng.normal_pair(seed, rng.STREAM_STARTUP_NOISE, cid,
                                 trial * (max_retries + 1) + attempt)
        q0 = min(max(sigma * z0, 0.0), vdd)
        qb0 = min(max(sigma * z1, 0.0), vdd)
        if safe >= 0.0:
            if bias == 1 and q0 <= safe:
                return 1, False
            if bias == 0 and qb0 <= safe:
                return 0, False
        label, vq, vqb, _ = run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps,
                                       q0, qb0, sv, sr)
        if label != 2:
            return label, False
    return (1 if vq < vqb else 0), True


@nb.njit(cache=True, nogil=True)
def _sup_rows(packed, cell_ids, bias, safe, sigma, n_trials, seed, max_retries,
              vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr,
              start, stop, n_ones, exhausted, bits, keep_bits):
    for c in range(start, stop):
        p = packed[c]
        cid = cell_ids[c]
        b = bias[c]
        u = safe[c]
        ones = 0
        ex = 0
        if sigma == 0.0:
            # every attempt of every trial replays the same deterministic transient
            bit, fail = _one_trial(p, cid, 0, 0.0, seed, 0, vdd, kind, ramp_time,
                                   ramp_steps, dt, n_steps, sv, sr, b, u)
            ones = bit * n_trials
            ex = n_trials if fail else 0
            if keep_bits:
                for t in range(n_trials):
                    bits[c, t] = bit
        else:
            for t in range(n_trials):
                bit, fail = _one_trial(p, cid, t, sigma, seed, max_retries, vdd, kind,
                                       ramp_time, ramp_steps, dt, n_steps, sv, sr, b, u)
                ones += bit
                if fail:
                    ex += 1
                if keep_bits:
                    bits[c, t] = bit
        n_ones[c] = ones
        exhausted[c] = ex


def shortcut_bounds(sd_records) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell (bias, largest non-flipping axis voltage) from SD records."""
    bias = np.array([int(r.bias) for r in sd_records], dtype=np.int64)
    safe = np.array([r.no_flip_voltage if r.bias != 2 else -1.0 for r in sd_records])
    return bias, safe


def _run_sup(packed, cell_ids, env, ramp, solver, noise, n_trials, seed, workers,
             keep_bits=False, max_retries=MAX_RETRIES, shortcut=True, sd_records=None):
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    packed = np.ascontiguousarray(packed, dtype=np.float64)
    cell_ids = np.ascontiguousarray(cell_ids, dtype=np.int64)
    n = packed.shape[0]
    if shortcut and noise.sigma_init > 0:
        if sd_records is None:
            sd_records = sd_batch(packed, env, ramp, solver, DEFAULT_TOLERANCE,
                                  cell_ids=cell_ids, workers=workers)
        if len(sd_records) != n:
            raise ValueError("need one SD record per cell")
        bias, safe = shortcut_bounds(sd_records)
    else:
        bias = np.full(n, 2, dtype=np.int64)
        safe = np.full(n, -1.0)
    n_ones = np.zeros(n, dtype=np.int64)
    exhausted = np.zeros(n, dtype=np.int64)
    bits = np.zeros((n, n_trials) if keep_bits else (1, 1), dtype=np.uint8)
    args = (float(noise.sigma_init), int(n_trials), rng._check_seed(seed), int(max_retries),
            *kernel_args(env, ramp, solver), solver.settle_voltage, solver.settle_rate)
    size = max(1, -(-n // (4 * max(1, workers))))
    spans = [(s, min(n, s + size)) for s in range(0, n, size)]

    def work(span):
        _sup_rows(packed, cell_ids, bias, safe, *args, span[0], span[1], n_ones, exhausted, bits, keep_bits)

    if workers <= 1:
        for span in spans:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, spans))
    return n_ones, exhausted, (bits if keep_bits else None)


def simulate_sup(cell: CellInstance, env: CellEnvironment,
                 ramp: RampSpec = DEFAULT_RAMP, noise: NoiseSpec = NoiseSpec(),
                 n_trials: int = DEFAULT_TRIALS, seed: int = 0,
                 solver: IntegratorSpec = DEFAULT_INTEGRATOR,
                 shortcut: bool = True) -> StartupRecord:
    """Emulate ``n_trials`` noisy power-ups of one cell."""
    ones, ex, _ = _run_sup(cell.packed()[None, :], [cell.cell_id], env, ramp, solver,
                           noise, n_trials, seed, 1, shortcut=shortcut)
    return StartupRecord.from_counts(cell.cell_id, int(ones[0]), n_trials, int(ex[0]))


def simulate_dataset(population: Population, env: CellEnvironment, rows: int, cols: int,
                     ramp: RampSpec = DEFAULT_RAMP, noise: NoiseSpec = NoiseSpec(),
                     n_trials: int = DEFAULT_TRIALS, seed: int = 0,
                     solver: IntegratorSpec = DEFAULT_INTEGRATOR, workers: int = 1,
                     keep_bits: bool = False, shortcut: bool = True,
                     sd_records=None) -> StartupDataset:
    """Emulated start-up statistics for a whole memory array.

    Cell ``k`` of the population sits at row ``k // cols``, column ``k % cols``.
    ``sd_records`` (from :func:`~srampuf.variation.sd_sweep` with the same
    environment, ramp and solver) saves recomputing the shortcut bounds.
    """
    if len(population) != rows * cols:
        raise ValueError(f"population of {len(population)} cells does not fill {rows}x{cols}")
    ones, ex, bits = _run_sup(population.packed(), population.cell_ids, env, ramp, solver,
                              noise, n_trials, seed, workers, keep_bits,
                              shortcut=shortcut, sd_records=sd_records)
    return StartupDataset.from_counts(ones, n_trials, rows, cols, "simulated", bits, ex)


# --------------------------------------------------------------------------
# analysis


def classify_regions(dataset, low: float = DEFAULT_LOW,
                     high: float = DEFAULT_HIGH) -> tuple[float, float, float]:
    """Fractions of cells in A0 (sup1 <= low), B, and A1 (sup1 >= high)."""
    if not 0 <= low < high <= 1:
        raise ValueError("need 0 <= low < high <= 1")
    sup1 = _sup1_array(dataset)
    if sup1.size == 0:
        raise EmptySetError("dataset has no cells")
    n = sup1.size
    a0 = np.count_nonzero(sup1 <= low)
    a1 = np.count_nonzero(sup1 >= high)
    return a0 / n, (n - a0 - a1) / n, a1 / n


def cell_ber(record: StartupRecord) -> float:
    if record.n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    return min(record.sup1, record.sup0)


def mean_ber(dataset) -> float:
    records = dataset.records if isinstance(dataset, StartupDataset) else dataset
    if len(records) and isinstance(records[0], StartupRecord):
        return float(np.mean([cell_ber(r) for r in records]))
    sup1 = _sup1_array(dataset)
    if sup1.size == 0:
        raise EmptySetError("dataset has no cells")
    return float(np.mean(np.minimum(sup1, 1.0 - sup1)))


def _sup1_array(dataset) -> np.ndarray:
    if isinstance(dataset, StartupDataset):
        return dataset.sup1
    if len(dataset) and isinstance(dataset[0], StartupRecord):
        return np.array([r.sup1 for r in dataset], dtype=float)
    return np.asarray(dataset, dtype=float)


def sup_histogram(dataset, n_bins: int = 100) -> Histogram:
    return make_histogram(_sup1_array(dataset), n_bins, (0.0, 1.0))


def region_report(dataset: StartupDataset, low: float = DEFAULT_LOW,
                  high: float = DEFAULT_HIGH) -> dict:
    a0, b, a1 = classify_regions(dataset, low, high)
    return {
        "n_cells": len(dataset),
        "rows": dataset.rows,
        "cols": dataset.cols,
        "source": dataset.source,
        "n_trials_min": int(dataset.n_trials.min()),
        "n_trials_max": int(dataset.n_trials.max()),
        "low": low,
        "high": high,
        "fraction_A0": a0,
        "fraction_B": b,
        "fraction_A1": a1,
        "mean_ber": mean_ber(dataset),
        "retries_exhausted": dataset.retries_exhausted(),
    }


# --------------------------------------------------------------------------
# calibration of the noise magnitude


@dataclass(frozen=True)
class NoiseCalibration:
    sigma_init: float
    fraction_b: float
    evaluations: list


def calibrate_sigma_init(population: Population, sd_records, env: CellEnvironment,
                         target_b: float = 0.08, n_trials: int = DEFAULT_TRIALS,
                         seed: int = 0, sigma0: float = 2e-3,
                         ramp: RampSpec = DEFAULT_RAMP,
                         solver: IntegratorSpec = DEFAULT_INTEGRATOR, workers: int = 1,
                         low: float = DEFAULT_LOW, high: float = DEFAULT_HIGH,
                         fraction_tol: float = 0.003, max_evals: int = 12) -> NoiseCalibration:
    """Find ``sigma_init`` whose emulated B-region mass is ``target_b``.

    ``sd_records`` must come from an SD sweep of ``population`` under the same
    environment, ramp and solver.  The B mass grows roughly in proportion to
    sigma, which drives the update, with geometric bisection once a bracket
    exists.
    """
    if len(sd_records) != len(population):
        raise ValueError("need one SD record per cell")
    packed = population.packed()
    ids = population.cell_ids
    n = len(population)
    history = []
    lo = hi = None
    sigma = sigma0
    best = None
    for _ in range(max_evals):
        ones, _, _ = _run_sup(packed, ids, env, ramp, solver, NoiseSpec(sigma), n_trials,
                              seed, workers, sd_records=sd_records)
        sup1 = ones / n_trials
        frac = np.count_nonzero((sup1 > low) & (sup1 < high)) / n
        history.append((sigma, frac))
        if best is None or abs(frac - target_b) < abs(best[1] - target_b):
            best = (sigma, frac)
        if abs(frac - target_b) <= fraction_tol:
            break
        if frac < target_b:
            lo = sigma if lo is None else max(lo, sigma)
        else:
            hi = sigma if hi is None else min(hi, sigma)
        proposal = sigma * target_b / frac if frac > 0 else 4 * sigma
        if lo is not None and hi is not None and not lo < proposal < hi:
            proposal = math.sqrt(lo * hi)
        sigma = proposal
    return NoiseCalibration(best[0], best[1], history)


# --------------------------------------------------------------------------
# persistence


def write_counts_csv(dataset: StartupDataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "n_ones", "n_trials"])
        for r in dataset.records:
            w.writerow([r.cell_id, r.n_ones, r.n_trials])
    return path


def write_bitmap(bits: np.ndarray, rows: int, cols: int, path) -> Path:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2 or bits.shape[0] != rows * cols:
        raise ValueError("bits must have one row per cell")
    path = Path(path)
    lines = [f"{rows} {cols} {bits.shape[1]}"]
    lut = np.array([ord("0"), ord("1")], dtype=np.uint8)
    for row in bits:
        lines.append(lut[row].tobytes().decode("ascii"))
    path.write_text("\n".join(lines) + "\n")
    return path


def ingest_dataset(path, rows: int | None = None, cols: int | None = None) -> StartupDataset:
    """Read a measured (or exported) start-up dataset.

    Counts files carry no geometry: pass ``rows``/``cols`` or get a single
    column.  Bitmap files carry their own geometry, which must agree with
    ``rows``/``cols`` when those are given.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise
    except UnicodeDecodeError as exc:
        raise MalformedError("not a text file", path) from exc
    lines = text.splitlines()
    first = next((k for k, ln in enumerate(lines) if ln.strip()), None)
    if first is None:
        raise MalformedError("empty file", path, 1)
    if lines[first].strip().startswith("cell_id"):
        return _ingest_counts(path, lines, first, rows, cols)
    return _ingest_bitmap(path, lines, first, rows, cols)


def _ingest_counts(path, lines, first, rows, cols):
    header = [h.strip() for h in lines[first].split(",")]
    if header != ["cell_id", "n_ones", "n_trials"]:
        raise MalformedError("expected header cell_id,n_ones,n_trials", path, first + 1)
    found = {}
    for k in range(first + 1, len(lines)):
        line = lines[k].strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedError("expected 3 fields", path, k + 1)
        try:
            cid, ones, trials = (int(v) for v in parts)
        except ValueError as exc:
            raise MalformedError(f"non-integer field ({exc})", path, k + 1) from exc
        if trials < 1:
            raise MalformedError("n_trials must be >= 1", path, k + 1)
        if not 0 <= ones <= trials:
            raise MalformedError(f"n_ones = {ones} violates 0 <= n_ones <= n_trials = {trials}",
                                 path, k + 1)
        if cid in found:
            raise MalformedError(f"duplicate cell_id {cid}", path, k + 1)
        found[cid] = (ones, trials, k + 1)
    n = len(found)
    if n == 0:
        raise MalformedError("no data rows", path, first + 1)
    if sorted(found) != list(range(n)):
        missing = sorted(set(range(n)) - set(found))
        raise MalformedError(f"cell ids must be 0..{n - 1}; missing {missing[:5]}", path)
    rows, cols = _geometry(path, n, rows, cols)
    records = [StartupRecord.from_counts(cid, found[cid][0], found[cid][1]) for cid in range(n)]
    return StartupDataset(rows, cols, records, "measured")


def _ingest_bitmap(path, lines, first, rows, cols):
    head = lines[first].split()
    try:
        r, c, trials = (int(v) for v in head)
    except ValueError as exc:
        raise MalformedError("expected header 'rows cols trials'", path, first + 1) from exc
    if r < 1 or c < 1 or trials < 1:
        raise MalformedError("rows, cols and trials must be >= 1", path, first + 1)
    if (rows is not None and rows != r) or (cols is not None and cols != c):
        raise MalformedError(f"file geometry {r}x{c} differs from requested {rows}x{cols}",
                             path, first + 1)
    body = [(k, lines[k].strip()) for k in range(first + 1, len(lines)) if lines[k].strip()]
    if len(body) != r * c:
        raise MalformedError(f"expected {r * c} cell lines, found {len(body)}", path,
                             body[-1][0] + 1 if body else first + 1)
    bits = np.empty((r * c, trials), dtype=np.uint8)
    for cid, (k, line) in enumerate(body):
        if len(line) != trials or set(line) - {"0", "1"}:
            raise MalformedError(f"expected {trials} characters of 0/1", path, k + 1)
        bits[cid] = np.frombuffer(line.encode("ascii"), dtype=np.uint8) - ord("0")
    return StartupDataset.from_counts(bits.sum(axis=1), trials, r, c, "measured", bits)


def _geometry(path, n, rows, cols):
    if rows is None and cols is None:
        return n, 1
    if rows is None:
        rows = n // cols if cols else 0
    if cols is None:
        cols = n // rows if rows else 0
    if rows * cols != n:
        raise MalformedError(f"{n} cells do not fill a {rows}x{cols} array", path)
    return rows, cols


def spatial_map(dataset: StartupDataset, path) -> Path:
    """Write the rows x cols matrix of SUP1 values as CSV."""
    path = Path(path)
    grid = dataset.sup1.reshape(dataset.rows, dataset.cols)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in grid:
                w.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write spatial map to {path}: {exc}") from exc
    return path


def read_spatial_map(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
