"""Flat ``section.key=value`` pipeline configuration and seed splitting."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


# key -> (default, help). Every value is kept as text and parsed on access.
DEFAULTS = {
    "seed": ("20240601", "root seed; every stage seed derives from it"),
    "out": ("ecoforecast_out", "output directory (env ECOFORECAST_OUT overrides)"),
    "network.source": ("grid", "'grid' or a path to a network file"),
    "network.rows": ("6", "grid rows"),
    "network.cols": ("6", "grid columns"),
    "network.spacing": ("300", "grid link length, m"),
    "network.lanes": ("1,2,3", "lane counts drawn per grid segment"),
    "network.ffs": ("40,50,60,60,60,80", "free-flow speeds (km/h) drawn per grid segment"),
    "demand.base": ("3477", "vehicles at demand factor 1"),
    "demand.od_pairs": ("40", "number of random OD pairs"),
    "demand.min_separation": ("2", "minimum OD hop distance"),
    "demand.horizon": ("1800", "departure window, s"),
    "demand.scenarios": ("0.7:uniform,1:normal,1.3:exponential,1.5:exponential,2:exponential",
                         "demand_factor:departure_distribution list"),
    "sim.reroute_interval": ("60", "seconds between route updates"),
    "sim.idm.a": ("1.5", "IDM max acceleration, m/s2"),
    "sim.idm.b": ("2.0", "IDM comfortable deceleration, m/s2"),
    "sim.idm.s0": ("2.0", "IDM jam gap, m"),
    "sim.idm.T": ("1.5", "IDM time headway, s"),
    "sim.idm.delta": ("4", "IDM acceleration exponent"),
    "emissions.table": ("default", "'default' or a path to an operating-mode CSV"),
    "emissions.write_records": ("false", "also write per-second emission CSVs"),
    "features.interval": ("60", "main updating interval, s (30 or 60)"),
    "features.interval_alt": ("30", "second corpus interval for the resolution comparison; 'none' to skip"),
    "correlate.window": ("6", "window length; lags 1..window-1 against the last step"),
    "lstm.presets": ("LSTM1,LSTM2,LSTM3", "presets trained by train-lstm and the pipeline"),
    "lstm.alt_presets": ("LSTM3", "presets also trained on the alternate-interval corpus"),
    "lstm.solver": ("sgdm", "sgdm or adam"),
    "lstm.initial_learning_rate": ("0.01", "default when not tuned"),
    "lstm.momentum": ("0.9", "default when not tuned"),
    "lstm.max_epochs": ("30", "default when not tuned"),
    "lstm.lr_drop_factor": ("0.5", "default when not tuned"),
    "lstm.lr_drop_period": ("10", "default when not tuned"),
    "lstm.minibatch_size": ("128", "minibatch size"),
    "lstm.hidden_units": ("16", "units per layer when not tuned"),
    "lstm.use_tuned": ("true", "train with tune/<preset>_best.txt when present"),
    "split.val_fraction": ("0.1", "validation carve-out of the LSTM training split"),
    "tune.presets": ("LSTM1,LSTM2,LSTM3", "presets tuned by the tune stage"),
    "tune.budget": ("8", "trials per preset"),
    "tune.batch": ("4", "trials proposed per synchronous round"),
    "tune.space_1layer": ("narrow_1layer", "named search space for 1-layer presets"),
    "tune.space_2layer": ("narrow_2layer", "named search space for 2-layer presets"),
    "kmeans.k": ("5,10,15", "cluster counts"),
    "kmeans.predictors": ("speed,density,ghg_er", "lag-1 predictors for clustering"),
    "kmeans.elbow_max": ("15", "largest k of the elbow curve"),
    "kmeans.max_iter": ("300", "Lloyd iteration cap"),
    "arimax.links": ("4", "representative links"),
    "arimax.demand_factor": ("1.3", "demand factor of the long single-scenario run"),
    "arimax.distribution": ("exponential", "departure distribution of the long run"),
    "arimax.horizon": ("7200", "departure window of the long single-scenario run, s"),
    "arimax.exog": ("speed,density", "exogenous variables at t-1"),
    "arimax.max_p": ("3", "AR order grid upper bound"),
    "arimax.max_q": ("3", "MA order grid upper bound"),
}

SCENARIO_DISTS = ("exponential", "uniform", "normal")


def parse_text(text: str) -> dict:
    vals = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        vals[k] = v
    return vals


@dataclass(frozen=True)
class Config:
    values: dict

    @classmethod
    def load(cls, path=None, overrides=()):
        vals = {k: v for k, (v, _) in DEFAULTS.items()}
        user = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            user.update(parse_text(p.read_text(encoding="utf-8")))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = (s.strip() for s in item.split("=", 1))
            user[k] = v
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        vals.update(user)
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def get_int(self, key):
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key):
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def get_bool(self, key):
        v = self.values[key].lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{key} must be true or false")
        return v in ("true", "1", "yes")

    def get_list(self, key, kind=str):
        raw = [s.strip() for s in self.values[key].split(",") if s.strip()]
        try:
            return [kind(s) for s in raw]
        except ValueError:
            raise ConfigError(f"{key}: bad list {self.values[key]!r}") from None

    def scenarios(self):
        out = []
        for item in self.get_list("demand.scenarios"):
            try:
                f, dist = item.split(":")
                f = float(f)
            except ValueError:
                raise ConfigError(f"demand.scenarios: bad entry {item!r}") from None
            if dist not in SCENARIO_DISTS or not f > 0:
                raise ConfigError(f"demand.scenarios: bad entry {item!r}")
            out.append((f, dist))
        if not out:
            raise ConfigError("demand.scenarios is empty")
        return out

    def intervals(self):
        main = self.get_int("features.interval")
        alt = self.values["features.interval_alt"].strip().lower()
        return main, (None if alt in ("none", "") else int(alt))

    def validate(self):
        from . import hyperopt, lstm  # local import keeps config import-light

        for k in ("seed", "network.rows", "network.cols", "demand.base", "demand.od_pairs",
                  "tune.budget", "tune.batch", "kmeans.elbow_max", "arimax.links"):
            if self.get_int(k) < (0 if k == "seed" else 1):
                raise ConfigError(f"{k} out of range")
        for k in ("network.spacing", "demand.horizon", "arimax.horizon"):
            if not self.get_float(k) > 0:
                raise ConfigError(f"{k} must be > 0")
        main, alt = self.intervals()
        for iv in (main, alt):
            if iv is not None and iv not in (30, 60):
                raise ConfigError("interval must be 30 or 60 s")
        self.scenarios()
        if self["arimax.distribution"] not in SCENARIO_DISTS or not self.get_float("arimax.demand_factor") > 0:
            raise ConfigError("arimax.demand_factor / arimax.distribution invalid")
        src = self.values["network.source"]
        if src != "grid" and not Path(src).is_file():
            raise ConfigError(f"network file not found: {src}")
        tab = self.values["emissions.table"]
        if tab != "default" and not Path(tab).is_file():
            raise ConfigError(f"operating-mode table not found: {tab}")
        for key in ("lstm.presets", "lstm.alt_presets", "tune.presets"):
            bad = [p for p in self.get_list(key) if p not in lstm.PRESETS]
            if bad:
                raise ConfigError(f"{key}: unknown presets {bad}")
        for key in ("tune.space_1layer", "tune.space_2layer"):
            if self.values[key] not in hyperopt.PRESET_SPACES:
                raise ConfigError(f"{key}: unknown space {self.values[key]!r}")
        if self.values["lstm.solver"] not in ("sgdm", "adam"):
            raise ConfigError("lstm.solver must be sgdm or adam")
        if self.get_int("tune.budget") < 4:
            raise ConfigError("tune.budget must be >= 4")
        ks = self.get_list("kmeans.k", int)
        if not ks or min(ks) < 1:
            raise ConfigError("kmeans.k must list positive integers")
        if not 0 < self.get_float("split.val_fraction") < 0.5:
            raise ConfigError("split.val_fraction must be in (0, 0.5)")
        self.get_bool("lstm.use_tuned")
        self.get_bool("emissions.write_records")

    def to_text(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in DEFAULTS)


def help_text() -> str:
    width = max(len(k) for k in DEFAULTS)
    return "\n".join(f"  {k:<{width}}  {v:<24} {h}" for k, (v, h) in DEFAULTS.items())


def stage_seed(root: int, stage: str, *index: int) -> int:
    """Seed of ``stage`` (and optional item indices) derived from the root seed.

    Rule: SeedSequence([root, crc32(stage), *index]) -> first 32-bit word.
    Stages never share a stream, and adding a stage leaves the others alone.
    """
    key = [int(root), zlib.crc32(stage.encode("utf-8"))] + [int(i) for i in index]
    return int(np.random.SeedSequence(key).generate_state(1)[0])
