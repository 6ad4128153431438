"""VSP-based CO2eq emission model with an operating-mode lookup table."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

# MOVES braking threshold: a <= -2 mph/s
BRAKING_ACCEL = -0.894


class OpModeTableError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    """Road-load coefficients of a passenger car.

    mass in Mg; A, B, C in kW-s/m, kW-s^2/m^2, kW-s^3/m^3.
    """
    mass: float = 1.4788
    A: float = 0.156461
    B: float = 0.00200193
    C: float = 0.000492646

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be > 0")
        if min(self.A, self.B, self.C) < 0:
            raise ValueError("road-load coefficients must be >= 0")


def vsp(v, a, spec: VehicleSpec = VehicleSpec()):
    """Vehicle specific power in kW/Mg; works on scalars and arrays."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    p = (spec.A * v + spec.B * v**2 + spec.C * v**3 + spec.mass * v * a) / spec.mass
    return p if p.ndim else float(p)


@dataclass(frozen=True)
class OpBin:
    bin_id: str
    v_lo: float
    v_hi: float
    vsp_lo: float
    vsp_hi: float
    rate: float  # g/s


class OpModeTable:
    """Operating-mode bins with half-open ``[lo, hi)`` speed and VSP ranges.

    Lookup order: idle (by speed), then braking (by acceleration), then the
    running bins of the speed class.
    """

    def __init__(self, bins, braking_accel=BRAKING_ACCEL):
        self.bins = tuple(bins)
        self.braking_accel = float(braking_accel)
        by_id = {b.bin_id: b for b in self.bins}
        if len(by_id) != len(self.bins):
            raise OpModeTableError("duplicate bin ids")
        if "idle" not in by_id or "braking" not in by_id:
            raise OpModeTableError("table needs 'idle' and 'braking' rows")
        for b in self.bins:
            if not b.rate > 0:
                raise OpModeTableError(f"bin {b.bin_id}: rate must be > 0")
            if not (b.v_lo < b.v_hi and b.vsp_lo < b.vsp_hi):
                raise OpModeTableError(f"bin {b.bin_id}: empty range")
        self.idle = by_id["idle"]
        self.braking = by_id["braking"]
        if self.idle.v_lo != 0:
            raise OpModeTableError("idle bin must start at speed 0")
        if self.braking.v_lo != self.idle.v_hi or self.braking.v_hi != math.inf:
            raise OpModeTableError("braking bin must cover all non-idle speeds")

        running = [b for b in self.bins if b.bin_id not in ("idle", "braking")]
        classes = {}
        for b in running:
            classes.setdefault((b.v_lo, b.v_hi), []).append(b)
        edges = sorted(classes)
        if not edges or edges[0][0] != self.idle.v_hi or edges[-1][1] != math.inf:
            raise OpModeTableError("running speed classes must span [idle_hi, inf)")
        for (lo, hi), (lo2, _) in zip(edges, edges[1:]):
            if hi != lo2:
                raise OpModeTableError(f"gap or overlap between speed classes at {hi}")

        self.v_edges = np.array([e[0] for e in edges] + [math.inf])
        self.class_vsp_edges = []
        self.class_rates = []
        self.class_ids = []
        for key in edges:
            members = sorted(classes[key], key=lambda b: b.vsp_lo)
            if members[0].vsp_lo != -math.inf or members[-1].vsp_hi != math.inf:
                raise OpModeTableError(f"speed class {key}: VSP bins must span the real line")
            for b, nxt in zip(members, members[1:]):
                if b.vsp_hi != nxt.vsp_lo:
                    raise OpModeTableError(f"speed class {key}: VSP gap or overlap at {b.vsp_hi}")
                if nxt.rate < b.rate:
                    raise OpModeTableError(f"speed class {key}: rates must not decrease with VSP")
            self.class_vsp_edges.append(np.array([b.vsp_lo for b in members[1:]]))
            self.class_rates.append(np.array([b.rate for b in members]))
            self.class_ids.append([b.bin_id for b in members])
        self.ids = [b.bin_id for b in self.bins]
        self._pos = {bid: i for i, bid in enumerate(self.ids)}

    @classmethod
    def from_csv(cls, text: str, braking_accel=BRAKING_ACCEL):
        df = pd.read_csv(io.StringIO(text), comment="#", dtype={"bin_id": str})
        missing = {"bin_id", "v_lo_mps", "v_hi_mps", "vsp_lo", "vsp_hi", "rate_gps"} - set(df.columns)
        if missing:
            raise OpModeTableError(f"missing columns {sorted(missing)}")
        bins = [
            OpBin(str(r.bin_id), float(r.v_lo_mps), float(r.v_hi_mps),
                  float(r.vsp_lo), float(r.vsp_hi), float(r.rate_gps))
            for r in df.itertuples(index=False)
        ]
        return cls(bins, braking_accel)

    @classmethod
    def read(cls, path, braking_accel=BRAKING_ACCEL):
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), braking_accel)

    @classmethod
    def default(cls):
        return cls.read(Path(__file__).with_name("data") / "opmode_default.csv")

    def lookup(self, v, p, a=None):
        """Vectorised lookup; returns (bin index into ``self.ids``, rate g/s)."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        p = np.broadcast_to(np.atleast_1d(np.asarray(p, dtype=float)), v.shape)
        a = np.zeros_like(v) if a is None else np.broadcast_to(np.asarray(a, dtype=float), v.shape)
        if np.any(v < 0):
            raise ValueError("speed must be >= 0")
        idx = np.empty(v.shape, dtype=np.int64)
        rate = np.empty(v.shape, dtype=float)
        cls_of = np.searchsorted(self.v_edges, v, side="right") - 1
        for c, (edges, rates, ids) in enumerate(zip(self.class_vsp_edges, self.class_rates, self.class_ids)):
            m = cls_of == c
            if m.any():
                k = np.searchsorted(edges, p[m], side="right")
                rate[m] = rates[k]
                idx[m] = np.array([self._pos[i] for i in ids])[k]
        brake = (v >= self.idle.v_hi) & (a <= self.braking_accel)
        idle = v < self.idle.v_hi
        idx[brake] = self._pos["braking"]
        rate[brake] = self.braking.rate
        idx[idle] = self._pos["idle"]
        rate[idle] = self.idle.rate
        return idx, rate


def operating_mode(v, p, table: OpModeTable, a=0.0) -> str:
    idx, _ = table.lookup(v, p, a)
    return table.ids[int(idx[0])]


def add_emissions(records: pd.DataFrame, spec: VehicleSpec = VehicleSpec(),
                  table: OpModeTable | None = None) -> pd.DataFrame:
    """Extend per-second vehicle records with ``vsp, bin_id, rate_gps``."""
    table = table or OpModeTable.default()
    v = records["speed_mps"].to_numpy(float)
    a = records["accel_mps2"].to_numpy(float)
    p = vsp(v, a, spec)
    idx, rate = table.lookup(v, p, a)
    out = records.copy()
    out["vsp"] = np.atleast_1d(p)
    out["bin_id"] = pd.Categorical.from_codes(idx, categories=table.ids)
    out["rate_gps"] = rate
    return out


def link_ghg_er(records: pd.DataFrame, link, t0: int, t1: int) -> float:
    """Link emission rate (g/s) over seconds ``[t0, t1)``: total grams / duration."""
    if t1 <= t0:
        raise ValueError("empty interval")
    t = records["t_sec"].to_numpy()
    m = (records["link_id"].astype(str).to_numpy() == str(link)) & (t >= t0) & (t < t1)
    # each record is one second of emission
    return float(records["rate_gps"].to_numpy()[m].sum()) / (t1 - t0)
