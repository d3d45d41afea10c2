"""Monte Carlo cell populations, SD sweeps, histograms and exceedance curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .device import TRANSISTOR_NAMES, CellEnvironment, CellInstance
from .dynamics import DEFAULT_INTEGRATOR, DEFAULT_RAMP, IntegratorSpec, RampSpec
from .errors import EmptySetError
from .separatrix import DEFAULT_TOLERANCE, SdRecord, sd_batch

_VTH_COLUMNS = (1, 5, 9, 13)  # packed-row slots of |vth| for N1, N2, P1, P2


@dataclass(frozen=True)
class MismatchSpec:
    """Independent Gaussian threshold offsets, one draw per transistor."""

    sigma_vth_n: float = 0.0
    sigma_vth_p: float = 0.0
    model: str = "independent-gaussian-per-transistor"

    def __post_init__(self):
        if self.sigma_vth_n < 0 or self.sigma_vth_p < 0:
            raise ValueError("mismatch sigmas must be >= 0")
        if self.model != "independent-gaussian-per-transistor":
            raise ValueError(f"unsupported mismatch model {self.model!r}")

    def sigmas(self) -> np.ndarray:
        n, p = self.sigma_vth_n, self.sigma_vth_p
        return np.array([n, n, p, p, n, n])


@dataclass
class Population:
    """Cells sharing one nominal template, differing by threshold offsets.

    ``offsets`` has one row per cell and one column per transistor in
    ``TRANSISTOR_NAMES`` order.  Indexing yields :class:`CellInstance`.
    """

    template: CellInstance
    offsets: np.ndarray
    cell_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1, len(TRANSISTOR_NAMES))
        if self.cell_ids is None:
            self.cell_ids = np.arange(len(self.offsets))
        self.cell_ids = np.asarray(self.cell_ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.offsets)

    def __getitem__(self, i: int) -> CellInstance:
        return self.template.with_offsets(self.template.offsets() + self.offsets[i],
                                          cell_id=int(self.cell_ids[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def packed(self) -> np.ndarray:
        base = self.template.packed()
        out = np.tile(base, (len(self), 1))
        nominal = [self.template.n1.params.vth_nominal, self.template.n2.params.vth_nominal,
                   self.template.p1.params.vth_nominal, self.template.p2.params.vth_nominal]
        for k, (col, vth0) in enumerate(zip(_VTH_COLUMNS, nominal)):
            out[:, col] = np.abs(vth0 + self.template.offsets()[k] + self.offsets[:, k])
        return out

    def mirrored(self) -> "Population":
        """Every cell with its two halves exchanged."""
        perm = [1, 0, 3, 2, 5, 4]
        return Population(self.template.mirrored(), self.offsets[:, perm], self.cell_ids.copy())

    def subset(self, index) -> "Population":
        index = np.asarray(index)
        return Population(self.template, self.offsets[index], self.cell_ids[index])

    def scaled(self, factor: float) -> "Population":
        return Population(self.template, self.offsets * factor, self.cell_ids.copy())


def standard_offsets(n: int, seed: int) -> np.ndarray:
    """Unit-variance draws behind :func:`sample_population`, shape (n, 6)."""
    return rng.normals(seed, rng.STREAM_MISMATCH, np.arange(n), len(TRANSISTOR_NAMES))


def sample_population(nominal: CellInstance, spec: MismatchSpec, n: int, seed: int) -> Population:
    """Draw ``n`` cells; cell ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ValueError("population size must be >= 1")
    return Population(nominal, standard_offsets(n, seed) * spec.sigmas())


def sd_sweep(population: Population, env: CellEnvironment,
             ramp: RampSpec = DEFAULT_RAMP,
             solver: IntegratorSpec = DEFAULT_INTEGRATOR,
             tol: float = DEFAULT_TOLERANCE, workers: int = 1) -> list[SdRecord]:
    if len(population) == 0:
        raise EmptySetError("population is empty")
    return sd_batch(population.packed(), env, ramp, solver, tol,
                    cell_ids=population.cell_ids, workers=workers)


def _sd_array(records) -> np.ndarray:
    if len(records) and isinstance(records[0], SdRecord):
        return np.array([r.sd for r in records], dtype=float)
    return np.asarray(records, dtype=float)


def exceedance(sd_records, threshold: float) -> float:
    """Fraction of cells with ``|sd| >= threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    sd = _sd_array(sd_records)
    if sd.size == 0:
        raise EmptySetError("no SD records")
    return float(np.count_nonzero(np.abs(sd) >= threshold) / sd.size)


def exceedance_curve(sd_records, thresholds) -> np.ndarray:
    sd = np.sort(np.abs(_sd_array(sd_records)))
    if sd.size == 0:
        raise EmptySetError("no SD records")
    thresholds = np.asarray(thresholds, dtype=float)
    below = np.searchsorted(sd, thresholds, side="left")
    return (sd.size - below) / sd.size


def window_fraction(sd_records, half_width: float) -> float:
    """Fraction of cells with ``-half_width < sd < half_width``."""
    sd = _sd_array(sd_records)
    if sd.size == 0:
        raise EmptySetError("no SD records")
    return float(np.count_nonzero(np.abs(sd) < half_width) / sd.size)


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int
    underflow: int = 0
    overflow: int = 0

    @property
    def n_samples(self) -> int:
        return self.total + self.underflow + self.overflow

    def relative_frequency(self) -> np.ndarray:
        n = self.n_samples
        return self.counts / n if n else np.zeros_like(self.counts, dtype=float)


def make_histogram(samples, n_bins: int, range: tuple[float, float]) -> Histogram:
    """Uniform-width histogram; the upper range edge belongs to the last bin."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise ValueError("degenerate histogram range")
    x = np.asarray(samples, dtype=float).ravel()
    under = x < lo
    over = x > hi
    inside = x[~(under | over)]
    idx = np.floor((inside - lo) / (hi - lo) * n_bins).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    counts = np.bincount(idx, minlength=n_bins)
    edges = np.linspace(lo, hi, n_bins + 1)
    return Histogram(edges, counts, int(inside.size), int(under.sum()), int(over.sum()))


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class SigmaCalibration:
    sigma_vth: float
    fraction: float
    evaluations: list


def calibrate_sigma_vth(nominal: CellInstance, env: CellEnvironment, n: int, seed: int,
                        half_width: float = 0.04, target: float = 0.906,
                        ratio_p_to_n: float = 1.0, sigma0: float = 0.02,
                        ramp: RampSpec = DEFAULT_RAMP,
                        solver: IntegratorSpec = DEFAULT_INTEGRATOR,
                        tol: float = DEFAULT_TOLERANCE, workers: int = 1,
                        fraction_tol: float = 0.003, max_evals: int = 12) -> SigmaCalibration:
    """Find the n-channel sigma whose SD mass inside ``(-half_width, half_width)`` hits ``target``.

    The same standard-normal draws are reused at every trial sigma, so the
    in-window fraction falls monotonically as sigma grows.  Trial sigmas
    come from rescaling by the ratio of ``half_width`` to the current
    ``target`` quantile of ``|SD|`` (SD is close to linear in the offsets),
    falling back to bisection once a bracket exists.  ``sigma_vth_p`` is
    ``ratio_p_to_n`` times the returned value.
    """
    z = standard_offsets(n, seed)
    unit = np.array([1.0, 1.0, ratio_p_to_n, ratio_p_to_n, 1.0, 1.0])
    history = []
    lo = hi = None
    sigma = sigma0
    best = None
    for _ in range(max_evals):
        pop = Population(nominal, z * unit * sigma)
        sd = _sd_array(sd_sweep(pop, env, ramp, solver, tol, workers))
        frac = window_fraction(sd, half_width)
        history.append((sigma, frac))
        if best is None or abs(frac - target) < abs(best[1] - target):
            best = (sigma, frac)
        if abs(frac - target) <= fraction_tol:
            break
        if frac > target:
            lo = sigma if lo is None else max(lo, sigma)
        else:
            hi = sigma if hi is None else min(hi, sigma)
        q = np.quantile(np.abs(sd), target)
        proposal = sigma * half_width / q if q > 0 else 2 * sigma
        if lo is not None and hi is not None and not lo < proposal < hi:
            proposal = 0.5 * (lo + hi)
        sigma = proposal
    return SigmaCalibration(best[0], best[1], history)


# --------------------------------------------------------------------------
# persistence


def write_population_csv(population: Population, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id"] + [f"dvth_{name}" for name in TRANSISTOR_NAMES])
        for cid, row in zip(population.cell_ids, population.offsets):
            w.writerow([int(cid)] + [repr(float(v)) for v in row])
    return path


def read_population_csv(path, template: CellInstance) -> Population:
    from .errors import MalformedError

    path = Path(path)
    ids, rows = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["cell_id"] + [f"dvth_{name}" for name in TRANSISTOR_NAMES]
        if header != expected:
            raise MalformedError(f"expected header {','.join(expected)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                ids.append(int(row[0]))
                rows.append([float(v) for v in row[1:7]])
            except (ValueError, IndexError) as exc:
                raise MalformedError(f"bad row ({exc})", path, lineno) from exc
    return Population(template, np.array(rows), np.array(ids))


def write_histogram_csv(hist: Histogram, path) -> Path:
    path = Path(path)
    rel = hist.relative_frequency()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count", "relative_frequency"])
        for k in range(len(hist.counts)):
            w.writerow([repr(float(hist.bin_edges[k])), repr(float(hist.bin_edges[k + 1])),
                        int(hist.counts[k]), repr(float(rel[k]))])
    return path


def read_histogram_csv(path) -> Histogram:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    edges = np.append(data[:, 0], data[-1, 1])
    counts = data[:, 2].astype(np.int64)
    return Histogram(edges, counts, int(counts.sum()))


def write_exceedance_csv(sd_records, thresholds, path) -> Path:
    path = Path(path)
    frac = exceedance_curve(sd_records, thresholds)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold_volts", "fraction"])
        for t, f in zip(thresholds, frac):
            w.writerow([repr(float(t)), repr(float(f))])
    return path
