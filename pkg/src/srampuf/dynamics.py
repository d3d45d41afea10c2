"""Start-up transients, equilibria, separatrix tracing and hold SNM.

Transients use classical fixed-step RK4 so results are bit-reproducible.
A run is *settled* when the state is within ``settle_voltage`` of one of
the ideal corners S0 = (vdd, 0) / S1 = (0, vdd) on both nodes **and** the
derivative magnitude is below ``settle_rate``; the second condition stops a
slow crawl near the saddle from being mistaken for a decision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numba as nb
import numpy as np

from .device import CellEnvironment, CellInstance, derivative_kernel, node_currents_kernel
from .errors import NoConvergenceError


class StateVector(NamedTuple):
    v_q: float
    v_qb: float

    def swapped(self) -> "StateVector":
        return StateVector(self.v_qb, self.v_q)


class StateLabel(IntEnum):
    S0 = 0
    S1 = 1
    UNSETTLED = 2

    def opposite(self) -> "StateLabel":
        if self is StateLabel.UNSETTLED:
            return self
        return StateLabel(1 - int(self))


RAMP_STEP = 0
RAMP_LINEAR = 1


@dataclass(frozen=True)
class RampSpec:
    """Supply waveform applied to the cell.

    ``step`` puts the full supply on the cell at t = 0, so the initial state
    evolves in the nominal state space.  ``linear`` raises vbias from 0 to
    vdd over ``ramp_time``.  ``hold_time`` is the simulated time after the
    ramp has finished.
    """

    shape: str = "step"
    ramp_time: float = 1e-9
    hold_time: float = 50e-9

    def __post_init__(self):
        if self.shape not in ("step", "linear"):
            raise ValueError(f"unknown ramp shape {self.shape!r}")
        if self.ramp_time < 0:
            raise ValueError("ramp_time must be >= 0")
        if not self.hold_time > 0:
            raise ValueError("hold_time must be > 0")

    @property
    def kind(self) -> int:
        return RAMP_STEP if self.shape == "step" else RAMP_LINEAR

    @property
    def effective_ramp_time(self) -> float:
        return 0.0 if self.shape == "step" else self.ramp_time


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float = 1e-12
    settle_voltage: float = 1e-3
    settle_rate: float = 1e4
    equilibrium_tolerance: float = 1e4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def n_steps(self, ramp: RampSpec) -> int:
        return int(math.ceil((ramp.effective_ramp_time + ramp.hold_time) / self.dt - 1e-9))

    def ramp_steps(self, ramp: RampSpec) -> int:
        return int(math.ceil(ramp.effective_ramp_time / self.dt - 1e-9))

    def halved(self) -> "IntegratorSpec":
        return IntegratorSpec(self.dt / 2, self.settle_voltage, self.settle_rate,
                              self.equilibrium_tolerance)


DEFAULT_RAMP = RampSpec()
DEFAULT_INTEGRATOR = IntegratorSpec()


class EquilibriumSet(NamedTuple):
    s0: StateVector
    s1: StateVector
    metastable: StateVector


# --------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, nogil=True, inline="always")
def _vbias(t, kind, vdd, ramp_time):
    if kind == RAMP_STEP or t >= ramp_time:
        return vdd
    return vdd * t / ramp_time


@nb.njit(cache=True, nogil=True)
def run_kernel(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, vq, vqb,
               settle_v, settle_rate):
    """Integrate one transient; returns (label, v_q, v_qb, steps)."""
    rate2 = settle_rate * settle_rate
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for i in range(n_steps):
        t = i * dt
        vb0 = _vbias(t, kind, vdd, ramp_time)
        k1q, k1b = derivative_kernel(p, vq, vqb, vb0)
        if i >= ramp_steps and k1q * k1q + k1b * k1b < rate2:
            if abs(vq - vdd) < settle_v and abs(vqb) < settle_v:
                return 0, vq, vqb, i
            if abs(vqb - vdd) < settle_v and abs(vq) < settle_v:
                return 1, vq, vqb, i
        vbh = _vbias(t + h2, kind, vdd, ramp_time)
        k2q, k2b = derivative_kernel(p, vq + h2 * k1q, vqb + h2 * k1b, vbh)
        k3q, k3b = derivative_kernel(p, vq + h2 * k2q, vqb + h2 * k2b, vbh)
        vb1 = _vbias(t + dt, kind, vdd, ramp_time)
        k4q, k4b = derivative_kernel(p, vq + dt * k3q, vqb + dt * k3b, vb1)
        vq += h6 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        vqb += h6 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    k1q, k1b = derivative_kernel(p, vq, vqb, vdd)
    if k1q * k1q + k1b * k1b < rate2:
        if abs(vq - vdd) < settle_v and abs(vqb) < settle_v:
            return 0, vq, vqb, n_steps
        if abs(vqb - vdd) < settle_v and abs(vq) < settle_v:
            return 1, vq, vqb, n_steps
    return 2, vq, vqb, n_steps


@nb.njit(cache=True, nogil=True)
def _run_recording(p, vdd, kind, ramp_time, ramp_steps, dt, n_steps, vq, vqb,
                   settle_v, settle_rate, every, out):
    rate2 = settle_rate * settle_rate
    h2 = 0.5 * dt
    h6 = dt / 6.0
    n_rec = 0
    label = 2
    i = 0
    while i < n_steps:
        t = i * dt
        vb0 = _vbias(t, kind, vdd, ramp_time)
        k1q, k1b = derivative_kernel(p, vq, vqb, vb0)
        if i % every == 0 and n_rec < out.shape[0]:
            out[n_rec, 0] = t
            out[n_rec, 1] = vq
            out[n_rec, 2] = vqb
            n_rec += 1
        if i >= ramp_steps and k1q * k1q + k1b * k1b < rate2:
            if abs(vq - vdd) < settle_v and abs(vqb) < settle_v:
                label = 0
                break
            if abs(vqb - vdd) < settle_v and abs(vq) < settle_v:
                label = 1
                break
        vbh = _vbias(t + h2, kind, vdd, ramp_time)
        k2q, k2b = derivative_kernel(p, vq + h2 * k1q, vqb + h2 * k1b, vbh)
        k3q, k3b = derivative_kernel(p, vq + h2 * k2q, vqb + h2 * k2b, vbh)
        vb1 = _vbias(t + dt, kind, vdd, ramp_time)
        k4q, k4b = derivative_kernel(p, vq + dt * k3q, vqb + dt * k3b, vb1)
        vq += h6 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        vqb += h6 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        i += 1
    if n_rec < out.shape[0] and (n_rec == 0 or out[n_rec - 1, 0] < i * dt):
        out[n_rec, 0] = i * dt
        out[n_rec, 1] = vq
        out[n_rec, 2] = vqb
        n_rec += 1
    return label, n_rec


def kernel_args(env: CellEnvironment, ramp: RampSpec, solver: IntegratorSpec) -> tuple:
    """Scalar arguments shared by every transient kernel."""
    return (float(env.vdd), ramp.kind, float(ramp.effective_ramp_time),
            solver.ramp_steps(ramp), float(solver.dt), solver.n_steps(ramp))


# --------------------------------------------------------------------------
# public operations


def integrate_from(cell: CellInstance, env: CellEnvironment, initial,
                   ramp: RampSpec = DEFAULT_RAMP,
                   solver: IntegratorSpec = DEFAULT_INTEGRATOR,
                   max_points: int = 2000):
    """Run one start-up transient from ``initial``.

    Returns ``(label, trajectory)`` where ``trajectory`` is an array of
    ``(t, v_q, v_qb)`` rows decimated to at most ``max_points`` samples,
    with voltages clamped to [-0.1, vdd + 0.1] for reporting.
    """
    vq0, vqb0 = (float(v) for v in initial)
    if not (0 <= vq0 <= env.vdd and 0 <= vqb0 <= env.vdd):
        raise ValueError("initial state must lie in [0, vdd]^2")
    vdd, kind, ramp_time, ramp_steps, dt, n_steps = kernel_args(env, ramp, solver)
    # decimation sized for a typical settle of a few hundred steps
    every = max(1, min(n_steps, 4000) // max_points)
    out = np.empty((max_points + 1, 3))
    label, n_rec = _run_recording(cell.packed(), vdd, kind, ramp_time, ramp_steps, dt,
                                  n_steps, vq0, vqb0, solver.settle_voltage,
                                  solver.settle_rate, every, out)
    traj = out[:n_rec].copy()
    np.clip(traj[:, 1:], -0.1, env.vdd + 0.1, out=traj[:, 1:])
    return StateLabel(label), traj


def settle(cell: CellInstance, env: CellEnvironment, initial,
           ramp: RampSpec = DEFAULT_RAMP,
           solver: IntegratorSpec = DEFAULT_INTEGRATOR) -> tuple[StateLabel, StateVector]:
    """Label-only transient; also returns the final state."""
    vdd, kind, ramp_time, ramp_steps, dt, n_steps = kernel_args(env, ramp, solver)
    label, vq, vqb, _ = run_kernel(cell.packed(), vdd, kind, ramp_time, ramp_steps, dt,
                                   n_steps, float(initial[0]), float(initial[1]),
                                   solver.settle_voltage, solver.settle_rate)
    return StateLabel(label), StateVector(vq, vqb)


def startup_test0(cell: CellInstance, env: CellEnvironment,
                  ramp: RampSpec = DEFAULT_RAMP,
                  solver: IntegratorSpec = DEFAULT_INTEGRATOR) -> StateLabel:
    """Power up from (0, 0) and report the state the cell falls into."""
    return settle(cell, env, (0.0, 0.0), ramp, solver)[0]


def _field(p, vdd):
    def f(x, y):
        return derivative_kernel(p, x, y, vdd)
    return f


def jacobian(cell: CellInstance, env: CellEnvironment, s, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of the vector field at ``s``."""
    f = _field(cell.packed(), float(env.vbias))
    x, y = float(s[0]), float(s[1])
    fxp, fxm = f(x + h, y), f(x - h, y)
    fyp, fym = f(x, y + h), f(x, y - h)
    return np.array([[(fxp[0] - fxm[0]) / (2 * h), (fyp[0] - fym[0]) / (2 * h)],
                     [(fxp[1] - fxm[1]) / (2 * h), (fyp[1] - fym[1]) / (2 * h)]])


def _newton(cell, env, seed, tol, max_iter=100, max_step=0.05):
    f = _field(cell.packed(), float(env.vbias))
    x, y = float(seed[0]), float(seed[1])
    fx, fy = f(x, y)
    norm = math.hypot(fx, fy)
    for _ in range(max_iter):
        if norm < tol * 1e-6:
            break
        j = jacobian(cell, env, (x, y))
        a, b, c, d = j[0, 0], j[0, 1], j[1, 0], j[1, 1]
        det = a * d - b * c
        if det == 0 or not math.isfinite(det):
            break
        # Cramer's rule keeps the update exactly symmetric for mirror-symmetric cells
        dx = -(d * fx - b * fy) / det
        dy = -(a * fy - c * fx) / det
        scale = min(1.0, max_step / max(abs(dx), abs(dy), 1e-300))
        dx, dy = dx * scale, dy * scale
        for _ in range(40):
            nx, ny = x + dx, y + dy
            gx, gy = f(nx, ny)
            gnorm = math.hypot(gx, gy)
            if gnorm < norm:
                break
            dx, dy = dx / 2, dy / 2
        else:
            break
        x, y, fx, fy, norm = nx, ny, gx, gy, gnorm
        if max(abs(dx), abs(dy)) < 1e-15:
            break
    if not norm < tol:
        raise NoConvergenceError(f"Newton from {tuple(seed)} stalled at |F| = {norm:.3g} V/s")
    return StateVector(x, y)


def find_equilibria(cell: CellInstance, env: CellEnvironment,
                    solver: IntegratorSpec = DEFAULT_INTEGRATOR) -> EquilibriumSet:
    """Locate both stable states and the metastable saddle at full supply."""
    if env.vbias != env.vdd:
        raise ValueError("equilibria are defined at vbias = vdd")
    tol = solver.equilibrium_tolerance
    vdd = env.vdd
    s0 = _newton(cell, env, (vdd, 0.0), tol)
    s1 = _newton(cell, env, (0.0, vdd), tol)
    m = _newton(cell, env, (vdd / 2, vdd / 2), tol)
    if not (s1.v_q < m.v_q < s0.v_q and s0.v_qb < m.v_qb < s1.v_qb):
        raise NoConvergenceError(f"saddle search converged to {m}, not between stable states")
    return EquilibriumSet(s0, s1, m)


def _eig2(j: np.ndarray):
    """Eigenpairs of a real 2x2 matrix with real spectrum, closed form."""
    a, b, c, d = j[0, 0], j[0, 1], j[1, 0], j[1, 1]
    tr, det = a + d, a * d - b * c
    disc = tr * tr / 4 - det
    if not disc > 0:
        raise NoConvergenceError("saddle Jacobian has no real eigen-split")
    r = math.sqrt(disc)
    pairs = []
    for lam in (tr / 2 - r, tr / 2 + r):
        if abs(b) >= abs(c) and b != 0:
            v = np.array([b, lam - a])
        elif c != 0:
            v = np.array([lam - d, c])
        else:
            v = np.array([1.0, 0.0]) if abs(lam - a) < abs(lam - d) else np.array([0.0, 1.0])
        n = math.hypot(v[0], v[1])
        if n == 0:
            raise NoConvergenceError("degenerate eigenvector at saddle")
        pairs.append((lam, v / n))
    return pairs


def trace_separatrix(cell: CellInstance, env: CellEnvironment, n_points: int = 200,
                     eps: float = 1e-6, max_segment: float = 5e-4,
                     max_step: float = 2e-12, margin: float = 0.1,
                     equilibria: EquilibriumSet | None = None) -> np.ndarray:
    """Polyline of the saddle's stable manifold, shape ``(N, 2)``, N >= n_points.

    Both branches start ``eps`` away from the saddle along its stable
    eigenvector and follow the time-reversed field until they leave the box
    [-margin, vdd + margin]^2.  Steps are limited to ``max_segment`` volts of
    travel so the polyline is dense enough to interpolate axis crossings.
    """
    eq = equilibria or find_equilibria(cell, env)
    m = np.array(eq.metastable)
    j = jacobian(cell, env, m)
    (lam_s, v_s), (lam_u, _) = _eig2(j)
    if not (lam_s < 0 < lam_u):
        raise NoConvergenceError(f"equilibrium at {tuple(m)} is not a saddle")
    f = _field(cell.packed(), float(env.vdd))
    lo, hi = -margin, env.vdd + margin

    def rev(x, y):
        fx, fy = f(x, y)
        return -fx, -fy

    branches = []
    for sign in (1.0, -1.0):
        x, y = m + sign * eps * v_s
        pts = [(x, y)]
        for _ in range(500000):
            k1 = rev(x, y)
            speed = math.hypot(*k1)
            h = max_step if speed == 0 else min(max_step, max_segment / speed)
            k2 = rev(x + h / 2 * k1[0], y + h / 2 * k1[1])
            k3 = rev(x + h / 2 * k2[0], y + h / 2 * k2[1])
            k4 = rev(x + h * k3[0], y + h * k3[1])
            x += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            y += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            pts.append((x, y))
            if not (lo <= x <= hi and lo <= y <= hi):
                break
        else:
            raise NoConvergenceError("separatrix branch did not leave the state-space box")
        branches.append(np.array(pts))
    poly = np.vstack([branches[1][::-1], m[None, :], branches[0]])
    if len(poly) < n_points:
        poly = _densify(poly, n_points)
    return poly


def _densify(poly: np.ndarray, n_points: int) -> np.ndarray:
    seg = np.hypot(*np.diff(poly, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    grid = np.unique(np.concatenate([arc, np.linspace(0, arc[-1], n_points)]))
    return np.column_stack([np.interp(grid, arc, poly[:, 0]), np.interp(grid, arc, poly[:, 1])])


def axis_crossing(poly: np.ndarray, axis: str) -> float:
    """Coordinate where the polyline crosses ``v_qb = 0`` (axis ``"q"``) or ``v_q = 0`` (``"qb"``).

    Returns the crossing closest to the origin; raises ``ValueError`` if none.
    """
    along, across = (0, 1) if axis == "q" else (1, 0)
    a, b = poly[:-1], poly[1:]
    hits = np.nonzero((a[:, across] <= 0) != (b[:, across] <= 0))[0]
    if hits.size == 0:
        raise ValueError(f"polyline never crosses the {axis} axis")
    vals = []
    for i in hits:
        w = a[i, across] / (a[i, across] - b[i, across])
        vals.append(a[i, along] + w * (b[i, along] - a[i, along]))
    vals = np.array(vals)
    return float(vals[np.argmin(np.abs(vals))])


# --------------------------------------------------------------------------
# hold static noise margin


@nb.njit(cache=True, nogil=True)
def _vtc_kernel(p, vdd, inputs, second, tol, out):
    """Inverter transfer curve by bisection on the output node current.

    ``second`` selects the QB inverter (input V_Q); otherwise the Q inverter
    (input V_QB).  Returns False if the output current fails to change sign.
    """
    for k in range(inputs.shape[0]):
        vin = inputs[k]
        lo, hi = 0.0, vdd
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if second:
                i_out = node_currents_kernel(p, vin, mid, vdd)[1]
            else:
                i_out = node_currents_kernel(p, mid, vin, vdd)[0]
            if i_out > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        if second:
            i_lo = node_currents_kernel(p, vin, 0.0, vdd)[1]
            i_hi = node_currents_kernel(p, vin, vdd, vdd)[1]
        else:
            i_lo = node_currents_kernel(p, 0.0, vin, vdd)[0]
            i_hi = node_currents_kernel(p, vdd, vin, vdd)[0]
        if i_lo < 0 or i_hi > 0:
            return False
        out[k] = 0.5 * (lo + hi)
    return True


def voltage_transfer_curves(cell: CellInstance, env: CellEnvironment, n: int = 1201,
                            tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input grid and the two inverter outputs: V_Q(V_QB) and V_QB(V_Q)."""
    if env.vbias != env.vdd:
        raise ValueError("hold SNM is defined at vbias = vdd")
    grid = np.linspace(0.0, env.vdd, n)
    p = cell.packed()
    out_q = np.empty(n)
    out_qb = np.empty(n)
    if not (_vtc_kernel(p, env.vdd, grid, False, tol, out_q)
            and _vtc_kernel(p, env.vdd, grid, True, tol, out_qb)):
        raise NoConvergenceError("inverter output current does not change sign over [0, vdd]")
    return grid, out_q, out_qb


def snm_lobes(cell: CellInstance, env: CellEnvironment, n: int = 1201) -> tuple[float, float]:
    """Side of the largest square in the S0-side and S1-side butterfly lobes.

    Curve A is (V_Q(t), t) and curve B is (t, V_QB(t)).  An axis-aligned
    square between two decreasing curves has its diagonal on a 45 degree
    line ``v_q - v_qb = c``; the side equals the ``v_q`` gap between the
    curves along that line.
    """
    grid, f1, f2 = voltage_transfer_curves(cell, env, n)
    eq = find_equilibria(cell, env)
    c_m = eq.metastable.v_q - eq.metastable.v_qb
    # curve A: c = f1(t) - t, decreasing in t; curve B: c = t - f2(t), increasing
    c_a, x_a = (f1 - grid)[::-1], f1[::-1]
    c_b, x_b = grid - f2, grid
    c_grid = np.linspace(max(c_a[0], c_b[0]), min(c_a[-1], c_b[-1]), 20 * n)
    gap = np.interp(c_grid, c_a, x_a) - np.interp(c_grid, c_b, x_b)
    c_s0 = eq.s0.v_q - eq.s0.v_qb
    c_s1 = eq.s1.v_q - eq.s1.v_qb
    upper = gap[(c_grid > c_m) & (c_grid < c_s0)]
    lower = gap[(c_grid < c_m) & (c_grid > c_s1)]
    lobe0 = float(np.max(np.abs(upper))) if upper.size else 0.0
    lobe1 = float(np.max(np.abs(lower))) if lower.size else 0.0
    return lobe0, lobe1


def hold_snm(cell: CellInstance, env: CellEnvironment, n: int = 1201) -> float:
    """Hold static noise margin in volts (the smaller lobe)."""
    return min(snm_lobes(cell, env, n))
