"""Analytic electrical model of the 6T bit-cell latch.

Transistor current
------------------
Each MOSFET follows a forward/reverse charge-sheet interpolation (EKV
style), with the bulk tied to the nominal source terminal::

    F(x)  = (s * ln(1 + exp(x / s)))**2,          s = 2 * n * U_T
    I_D   = beta / (2 n) * [F(vgs - vth) - F(vgs - vth - n * vds)]
            * (1 + lambda * |vds|)

``beta`` is ``transconductance_factor * width / length``.  ``F`` tends to
``x**2`` above threshold (square law, saturation at ``vds = (vgs - vth)/n``)
and to ``s**2 * exp(x / (n U_T))`` below it, so the subthreshold swing is
``n * U_T * ln 10`` per decade.  The expression is smooth everywhere, odd
under source/drain exchange at fixed gate-to-bulk bias, and zero at
``vds = 0``.  P-channel devices use the same equation on mirrored voltages
(``vsg``, ``vsd`` and ``|vth|``).

Latch
-----
With both pass transistors cut off, node Q is charged by P1 and discharged
by N1, both gated by QB; QB is symmetric with P2/N2 gated by Q::

    C_Q  dV_Q/dt  = I_P1(vbias - V_QB, vbias - V_Q) - I_N1(V_QB, V_Q)
    C_QB dV_QB/dt = I_P2(vbias - V_Q, vbias - V_QB) - I_N2(V_Q, V_QB)

The numba kernels below operate on a packed parameter row (see
:data:`PACKED_WIDTH`) so the integrators can run without Python objects.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numba as nb
import numpy as np

from .errors import MalformedError

THERMAL_VOLTAGE = 0.025852  # kT/q at 300 K

# packed row: 4 x (beta, |vth|, n, lambda) for N1, N2, P1, P2, then C_Q, C_QB
PACKED_WIDTH = 18
_N1, _N2, _P1, _P2 = 0, 4, 8, 12
_CQ, _CQB = 16, 17

TRANSISTOR_NAMES = ("n1", "n2", "p1", "p2", "nx1", "nx2")


class Polarity(str, Enum):
    N = "n"
    P = "p"


@dataclass(frozen=True)
class MosParams:
    """Nominal parameters of one transistor.

    ``vth_nominal`` is signed (negative for p-channel).
    ``off_leakage_scale`` is the ceiling on the off-state current
    (``vgs = 0``, ``|vds| = vdd``); :func:`check_off_leakage` enforces it
    because the settle test at the stable corners needs leakage / C well
    below the derivative tolerance.
    """

    polarity: Polarity
    vth_nominal: float
    transconductance_factor: float
    width: float = 0.15
    length: float = 0.15
    channel_length_modulation: float = 0.1
    subthreshold_slope_factor: float = 1.3
    off_leakage_scale: float = 1e-11

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if not (self.width > 0 and self.length > 0):
            raise ValueError("width and length must be positive")
        if not self.transconductance_factor > 0:
            raise ValueError("transconductance_factor must be positive")
        if not self.subthreshold_slope_factor >= 1:
            raise ValueError("subthreshold_slope_factor must be >= 1")
        if self.channel_length_modulation < 0:
            raise ValueError("channel_length_modulation must be >= 0")
        if not self.off_leakage_scale > 0:
            raise ValueError("off_leakage_scale must be positive")
        if not math.isfinite(self.vth_nominal):
            raise ValueError("vth_nominal must be finite")

    @property
    def beta(self) -> float:
        return self.transconductance_factor * self.width / self.length


@dataclass(frozen=True)
class TransistorInstance:
    params: MosParams
    vth_offset: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.params.vth_nominal + self.vth_offset):
            raise ValueError("effective threshold must be finite")

    @property
    def vth(self) -> float:
        return self.params.vth_nominal + self.vth_offset

    def packed(self) -> tuple[float, float, float, float]:
        p = self.params
        return (p.beta, abs(self.vth), p.subthreshold_slope_factor,
                p.channel_length_modulation)


@dataclass(frozen=True)
class CellInstance:
    """One sampled 6T cell.

    The pass transistors ``nx1``/``nx2`` are carried for completeness but
    conduct no current: their gates stay at 0 V during start-up.
    """

    n1: TransistorInstance
    n2: TransistorInstance
    p1: TransistorInstance
    p2: TransistorInstance
    nx1: TransistorInstance
    nx2: TransistorInstance
    node_capacitance_q: float = 1e-15
    node_capacitance_qb: float = 1e-15
    cell_id: int = 0

    def __post_init__(self):
        if not (self.node_capacitance_q > 0 and self.node_capacitance_qb > 0):
            raise ValueError("node capacitances must be positive")

    def packed(self) -> np.ndarray:
        row = np.empty(PACKED_WIDTH)
        for base, t in zip((_N1, _N2, _P1, _P2), (self.n1, self.n2, self.p1, self.p2)):
            row[base:base + 4] = t.packed()
        row[_CQ] = self.node_capacitance_q
        row[_CQB] = self.node_capacitance_qb
        return row

    def mirrored(self) -> "CellInstance":
        """Swap the two cell halves (N1<->N2, P1<->P2, NX1<->NX2, C_Q<->C_QB)."""
        return replace(self, n1=self.n2, n2=self.n1, p1=self.p2, p2=self.p1,
                       nx1=self.nx2, nx2=self.nx1,
                       node_capacitance_q=self.node_capacitance_qb,
                       node_capacitance_qb=self.node_capacitance_q)

    def with_offsets(self, offsets, cell_id: int | None = None) -> "CellInstance":
        """Copy with threshold offsets ``offsets[i]`` in :data:`TRANSISTOR_NAMES` order."""
        kw = {name: replace(getattr(self, name), vth_offset=float(off))
              for name, off in zip(TRANSISTOR_NAMES, offsets)}
        if cell_id is not None:
            kw["cell_id"] = int(cell_id)
        return replace(self, **kw)

    def offsets(self) -> np.ndarray:
        return np.array([getattr(self, name).vth_offset for name in TRANSISTOR_NAMES])


@dataclass(frozen=True)
class CellEnvironment:
    vdd: float = 1.2
    vbias: float | None = None

    def __post_init__(self):
        if self.vbias is None:
            object.__setattr__(self, "vbias", self.vdd)
        if not 0 <= self.vbias <= self.vdd:
            raise ValueError("need 0 <= vbias <= vdd")


@dataclass(frozen=True)
class DeviceConfig:
    """Nominal device parameters.

    ``vth_n``, ``vth_p``, the transconductance factors and the node
    capacitance are invented defaults, not process data.
    """

    vdd: float = 1.2
    width: float = 0.15
    length: float = 0.15
    vth_n: float = 0.4
    vth_p: float = -0.4
    kp_n: float = 600e-6
    kp_p: float = 250e-6
    channel_length_modulation: float = 0.1
    subthreshold_slope_factor: float = 1.3
    off_leakage_scale: float = 1e-11
    node_capacitance: float = 1e-15

    def nmos(self) -> MosParams:
        return MosParams(Polarity.N, self.vth_n, self.kp_n, self.width, self.length,
                         self.channel_length_modulation,
                         self.subthreshold_slope_factor, self.off_leakage_scale)

    def pmos(self) -> MosParams:
        return MosParams(Polarity.P, self.vth_p, self.kp_p, self.width, self.length,
                         self.channel_length_modulation,
                         self.subthreshold_slope_factor, self.off_leakage_scale)

    def nominal_cell(self) -> CellInstance:
        n = TransistorInstance(self.nmos())
        p = TransistorInstance(self.pmos())
        cell = CellInstance(n, n, p, p, n, n, self.node_capacitance, self.node_capacitance)
        check_off_leakage(cell, CellEnvironment(self.vdd))
        return cell

    def environment(self) -> CellEnvironment:
        return CellEnvironment(self.vdd)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "DeviceConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise MalformedError(f"unknown device keys {sorted(unknown)}", path)
        try:
            cfg = cls(**{k: float(v) for k, v in data.items()})
            cfg.nmos(), cfg.pmos()
        except (TypeError, ValueError) as exc:
            raise MalformedError(str(exc), path) from exc
        if cfg.vth_n <= 0 or cfg.vth_p >= 0:
            raise MalformedError("expected vth_n > 0 and vth_p < 0", path)
        if cfg.node_capacitance <= 0 or cfg.vdd <= 0:
            raise MalformedError("vdd and node_capacitance must be positive", path)
        return cfg


def load_device_config(path) -> DeviceConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedError(str(exc), path, exc.lineno) from exc
    if "device" in data and isinstance(data["device"], dict):
        data = data["device"]
    return DeviceConfig.from_dict(data, path)


# --------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, nogil=True, inline="always")
def _fsq(x, s):
    y = x / s
    if y > 0.0:
        sp = y + math.log1p(math.exp(-y))
    else:
        sp = math.log1p(math.exp(y))
    v = s * sp
    return v * v


@nb.njit(cache=True, nogil=True)
def ids_kernel(beta, vth, n, lam, vgs, vds):
    """Channel current for n-channel polarity; ``vth`` is the magnitude."""
    s = 2.0 * n * THERMAL_VOLTAGE
    x = vgs - vth
    return beta / (2.0 * n) * (_fsq(x, s) - _fsq(x - n * vds, s)) * (1.0 + lam * abs(vds))


@nb.njit(cache=True, nogil=True)
def node_currents_kernel(p, vq, vqb, vbias):
    iq = (ids_kernel(p[8], p[9], p[10], p[11], vbias - vqb, vbias - vq)
          - ids_kernel(p[0], p[1], p[2], p[3], vqb, vq))
    iqb = (ids_kernel(p[12], p[13], p[14], p[15], vbias - vq, vbias - vqb)
           - ids_kernel(p[4], p[5], p[6], p[7], vq, vqb))
    return iq, iqb


@nb.njit(cache=True, nogil=True)
def derivative_kernel(p, vq, vqb, vbias):
    iq, iqb = node_currents_kernel(p, vq, vqb, vbias)
    return iq / p[16], iqb / p[17]


# --------------------------------------------------------------------------
# Python-level operations


def drain_current(t: TransistorInstance, vgs: float, vds: float) -> float:
    """Drain current of one transistor, in amperes.

    Terminal voltages are passed as-is for either polarity.  The result is
    positive for normal conduction: drain-to-source for n-channel,
    source-to-drain for p-channel.
    """
    p = t.params
    sign = 1.0 if p.polarity is Polarity.N else -1.0
    return float(ids_kernel(p.beta, abs(t.vth), p.subthreshold_slope_factor,
                            p.channel_length_modulation, sign * vgs, sign * vds))


def node_currents(cell: CellInstance, s, env: CellEnvironment) -> tuple[float, float]:
    """Net current into nodes Q and QB."""
    vq, vqb = s
    iq, iqb = node_currents_kernel(cell.packed(), float(vq), float(vqb), float(env.vbias))
    return float(iq), float(iqb)


def derivative(cell: CellInstance, s, env: CellEnvironment) -> tuple[float, float]:
    """Time derivative of (V_Q, V_QB), in V/s."""
    iq, iqb = node_currents(cell, s, env)
    return iq / cell.node_capacitance_q, iqb / cell.node_capacitance_qb


def off_current(params: MosParams, vdd: float) -> float:
    return drain_current(TransistorInstance(params), 0.0,
                         vdd if params.polarity is Polarity.N else -vdd)


def check_off_leakage(cell: CellInstance, env: CellEnvironment) -> None:
    """Raise ``ValueError`` if a nominal device leaks above its ceiling."""
    for name in ("n1", "n2", "p1", "p2"):
        params = getattr(cell, name).params
        i_off = abs(off_current(params, env.vdd))
        if i_off > params.off_leakage_scale:
            raise ValueError(f"{name}: off current {i_off:.3g} A exceeds "
                             f"off_leakage_scale {params.off_leakage_scale:.3g} A")


def pack_cells(cells) -> np.ndarray:
    return np.array([c.packed() for c in cells]).reshape(-1, PACKED_WIDTH)
