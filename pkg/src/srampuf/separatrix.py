"""Signed cell-imbalance factor SD.

SD is found in two stages.  A power-up from (0, 0) gives the state the cell
is biased towards.  Then a bisection runs along the axis that opposes it:
for a cell biased to S1 the start points are (v, 0), a head start for node
Q; for S0 they are (0, v).  SD is the smallest such v that makes the cell
settle in the opposite state.  It is positive for S1-biased cells and
negative for S0-biased cells.  A cell whose (0, 0) power-up never settles
sits on the separatrix and has SD = 0.

Inside the bisection bracket an unsettled run counts as "did not flip",
which keeps the returned voltage an upper bound on the boundary.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .device import CellEnvironment, CellInstance
from .dynamics import (
    DEFAULT_INTEGRATOR,
    DEFAULT_RAMP,
    IntegratorSpec,
    RampSpec,
    StateLabel,
    kernel_args,
    run_kernel,
)
from .errors import MalformedError, SrampufError

DEFAULT_TOLERANCE = 5e-5
SD_CSV_COLUMNS = ("cell_id", "sd_volts", "bias", "converged", "iterations")


class NoFlipError(SrampufError):
    exit_code = 4

    def __init__(self, message: str):
        super().__init__(f"NO_FLIP: {message}")


@dataclass(frozen=True)
class SdRecord:
    cell_id: int
    sd: float
    bias: StateLabel
    flip_voltage: float
    iterations: int = 0
    converged: bool = True
    # largest probed axis voltage that did not flip; -1 when bias is UNSETTLED
    no_flip_voltage: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bias", StateLabel(self.bias))


# --------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, nogil=True)
def _flips(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, bias, v):
    if bias == 1:
        label = run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, v, 0.0, sv, sr)[0]
    else:
        label = run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, 0.0, v, sv, sr)[0]
    return label == 1 - bias


@nb.njit(cache=True, nogil=True)
def _bisect(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, bias, tol):
    """Returns (flip_voltage, largest non-flipping voltage, iterations, bracket_ok)."""
    if not _flips(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, bias, vdd):
        return vdd, vdd, 0, False
    lo, hi = 0.0, vdd
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _flips(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, bias, mid):
            hi = mid
        else:
            lo = mid
        it += 1
    return hi, lo, it, True


@nb.njit(cache=True, nogil=True)
def _sd_rows(packed, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, tol,
             start, stop, sd, bias, flip_v, safe_v, iters, conv):
    for c in range(start, stop):
        p = packed[c]
        b = run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, 0.0, 0.0, sv, sr)[0]
        bias[c] = b
        if b == 2:
            sd[c] = 0.0
            flip_v[c] = 0.0
            safe_v[c] = -1.0
            iters[c] = 0
            conv[c] = True
            continue
        v, lo, it, ok = _bisect(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, b, tol)
        flip_v[c] = v
        safe_v[c] = lo
        sd[c] = v if b == 1 else -v
        iters[c] = it
        conv[c] = ok


@nb.njit(cache=True, nogil=True)
def _oracle_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, step):
    """Linear scan; returns (signed first flipping voltage, found)."""
    b = run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, 0.0, 0.0, sv, sr)[0]
    if b == 2:
        return 0.0, True
    k = 1
    while True:
        v = k * step
        if v > vdd:
            return vdd if b == 1 else -vdd, False
        if _flips(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, sv, sr, b, v):
            return v if b == 1 else -v, True
        k += 1


# --------------------------------------------------------------------------
# single-cell operations


def flip_search(cell: CellInstance, env: CellEnvironment, bias: StateLabel,
                ramp: RampSpec = DEFAULT_RAMP,
                solver: IntegratorSpec = DEFAULT_INTEGRATOR,
                tol: float = DEFAULT_TOLERANCE) -> float:
    """Smallest axis start voltage that makes a ``bias``-biased cell flip."""
    bias = StateLabel(bias)
    if bias is StateLabel.UNSETTLED:
        raise ValueError("flip search needs a settled bias")
    args = kernel_args(env, ramp, solver)
    v, _, _, ok = _bisect(cell.packed(), *args, solver.settle_voltage, solver.settle_rate,
                       int(bias), tol)
    if not ok:
        raise NoFlipError(f"cell {cell.cell_id} does not flip even from {env.vdd} V")
    return float(v)


def compute_sd(cell: CellInstance, env: CellEnvironment,
               ramp: RampSpec = DEFAULT_RAMP,
               solver: IntegratorSpec = DEFAULT_INTEGRATOR,
               tol: float = DEFAULT_TOLERANCE) -> SdRecord:
    return sd_batch(cell.packed()[None, :], env, ramp, solver, tol,
                    cell_ids=[cell.cell_id])[0]


def sd_oracle(cell: CellInstance, env: CellEnvironment,
              ramp: RampSpec = DEFAULT_RAMP,
              solver: IntegratorSpec = DEFAULT_INTEGRATOR,
              grid_step: float = 1e-4) -> float:
    """Brute-force SD: first flipping voltage on a uniform grid of axis points."""
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    args = kernel_args(env, ramp, solver)
    v, found = _oracle_kernel(cell.packed(), *args, solver.settle_voltage,
                              solver.settle_rate, grid_step)
    if not found:
        raise NoFlipError(f"cell {cell.cell_id} does not flip on the scanned axis")
    return float(v)


# --------------------------------------------------------------------------
# batches


def _chunks(n: int, workers: int):
    workers = max(1, int(workers))
    size = max(1, -(-n // (4 * workers)))
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def sd_batch(packed: np.ndarray, env: CellEnvironment,
             ramp: RampSpec = DEFAULT_RAMP,
             solver: IntegratorSpec = DEFAULT_INTEGRATOR,
             tol: float = DEFAULT_TOLERANCE,
             cell_ids=None, workers: int = 1) -> list[SdRecord]:
    """SD for every row of a packed parameter array.

    Rows are split into chunks evaluated by ``workers`` threads; each cell's
    result depends on its own row only, so the output is identical for any
    worker count.
    """
    packed = np.ascontiguousarray(packed, dtype=np.float64)
    n = packed.shape[0]
    sd = np.zeros(n)
    bias = np.zeros(n, dtype=np.int64)
    flip_v = np.zeros(n)
    safe_v = np.zeros(n)
    iters = np.zeros(n, dtype=np.int64)
    conv = np.zeros(n, dtype=np.bool_)
    args = kernel_args(env, ramp, solver) + (solver.settle_voltage, solver.settle_rate, tol)

    def work(span):
        _sd_rows(packed, *args, span[0], span[1], sd, bias, flip_v, safe_v,
                 iters, conv)

    spans = _chunks(n, workers)
    if workers <= 1:
        for span in spans:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, spans))
    ids = range(n) if cell_ids is None else cell_ids
    return [SdRecord(int(i), float(sd[k]), StateLabel(int(bias[k])), float(flip_v[k]),
                     int(iters[k]), bool(conv[k]), float(safe_v[k]))
            for k, i in enumerate(ids)]


def sd_values(records) -> np.ndarray:
    return np.array([r.sd for r in records], dtype=float)


# --------------------------------------------------------------------------
# persistence


def write_sd_csv(records, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SD_CSV_COLUMNS)
        for r in records:
            w.writerow([r.cell_id, repr(float(r.sd)), r.bias.name, int(r.converged), r.iterations])
    return path


def read_sd_csv(path) -> list[SdRecord]:
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != SD_CSV_COLUMNS:
            raise MalformedError(f"expected header {','.join(SD_CSV_COLUMNS)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SD_CSV_COLUMNS):
                raise MalformedError(f"expected {len(SD_CSV_COLUMNS)} fields", path, lineno)
            try:
                cell_id, sd = int(row[0]), float(row[1])
                bias = StateLabel[row[2].strip()]
                converged, iterations = bool(int(row[3])), int(row[4])
            except (ValueError, KeyError) as exc:
                raise MalformedError(f"bad field ({exc})", path, lineno) from exc
            expected = {StateLabel.S1: sd > 0, StateLabel.S0: sd < 0,
                        StateLabel.UNSETTLED: sd == 0}[bias]
            if not expected:
                raise MalformedError(f"sign of sd {sd} disagrees with bias {bias.name}",
                                     path, lineno)
            records.append(SdRecord(cell_id, sd, bias, abs(sd), iterations, converged))
    return records


def write_sd_json(records, path) -> Path:
    path = Path(path)
    rows = []
    for r in records:
        d = asdict(r)
        d["bias"] = r.bias.name
        rows.append(d)
    path.write_text(json.dumps(rows, indent=1) + "\n")
    return path


def read_sd_json(path) -> list[SdRecord]:
    path = Path(path)
    try:
        rows = json.loads(path.read_text())
        return [SdRecord(int(d["cell_id"]), float(d["sd"]), StateLabel[d["bias"]],
                         float(d["flip_voltage"]), int(d["iterations"]), bool(d["converged"]),
                         float(d.get("no_flip_voltage", 0.0)))
                for d in rows]
    except json.JSONDecodeError as exc:
        raise MalformedError(str(exc), path, exc.lineno) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedError(f"bad record ({exc})", path) from exc
