"""Bayesian optimization of LSTM hyperparameters (GP surrogate, expected improvement)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

log = logging.getLogger(__name__)

LENGTH_SCALE = 0.2
NOISE = 1e-6
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
N_CANDIDATES = 2048
FAIL_PENALTY = 1.5


class GPError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    scale: str = "linear"  # or "log"
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: scale must be linear or log")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log-scale bounds must be positive")

    def decode(self, u: float):
        if u <= 0.0:
            v = self.lower
        elif u >= 1.0:
            v = self.upper
        elif self.scale == "log":
            v = self.lower * (self.upper / self.lower) ** u
        else:
            v = self.lower + u * (self.upper - self.lower)
        v = min(max(v, self.lower), self.upper)
        return int(round(v)) if self.integer else v


@dataclass(frozen=True)
class SearchSpace:
    params: tuple

    @property
    def dim(self):
        return len(self.params)

    @property
    def names(self):
        return [p.name for p in self.params]


def decode(point, space: SearchSpace) -> dict:
    u = np.asarray(point, dtype=float)
    if u.shape != (space.dim,):
        raise ValueError(f"point must have {space.dim} coordinates")
    if np.any(u < 0) or np.any(u > 1) or not np.all(np.isfinite(u)):
        raise ValueError("point outside the unit cube")
    return {p.name: p.decode(float(x)) for p, x in zip(space.params, u)}


def _space(*params):
    return SearchSpace(tuple(params))


# manual stage: named spaces, the narrow ones centred on hand-tuned values
PRESET_SPACES = {
    "wide_1layer": _space(
        Param("initial_learning_rate", 1e-4, 1e-1, "log"),
        Param("momentum", 0.5, 0.99),
        Param("max_epochs", 10, 60, integer=True),
        Param("lr_drop_factor", 0.1, 1.0),
        Param("lr_drop_period", 5, 30, integer=True),
        Param("hidden_units_layer1", 4, 64, "log", integer=True),
    ),
    "wide_2layer": _space(
        Param("initial_learning_rate", 1e-4, 1e-1, "log"),
        Param("momentum", 0.5, 0.99),
        Param("max_epochs", 10, 60, integer=True),
        Param("lr_drop_factor", 0.1, 1.0),
        Param("lr_drop_period", 5, 30, integer=True),
        Param("hidden_units_layer1", 4, 64, "log", integer=True),
        Param("hidden_units_layer2", 4, 64, "log", integer=True),
    ),
    "narrow_1layer": _space(
        Param("initial_learning_rate", 2e-3, 3e-2, "log"),
        Param("momentum", 0.85, 0.95),
        Param("max_epochs", 20, 40, integer=True),
        Param("lr_drop_factor", 0.3, 0.9),
        Param("lr_drop_period", 8, 20, integer=True),
        Param("hidden_units_layer1", 8, 32, "log", integer=True),
    ),
    "narrow_2layer": _space(
        Param("initial_learning_rate", 2e-3, 3e-2, "log"),
        Param("momentum", 0.85, 0.95),
        Param("max_epochs", 20, 40, integer=True),
        Param("lr_drop_factor", 0.3, 0.9),
        Param("lr_drop_period", 8, 20, integer=True),
        Param("hidden_units_layer1", 8, 32, "log", integer=True),
        Param("hidden_units_layer2", 8, 32, "log", integer=True),
    ),
}


def split_values(values: dict):
    """Decoded values -> (TrainConfig keyword args, hidden_units list)."""
    cfg = {k: v for k, v in values.items() if not k.startswith("hidden_units_")}
    hidden = [values[k] for k in sorted(k for k in values if k.startswith("hidden_units_"))]
    return cfg, hidden


# -------------------------------------------------------------- surrogate

def se_kernel(A, B, length=LENGTH_SCALE):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-0.5 * d2 / length ** 2)


def gp_posterior(X_obs, y_obs, X_query, length=LENGTH_SCALE, noise=NOISE, standardized=False):
    """Posterior mean and variance of a zero-mean GP on standardized objectives.

    Returned on the objective's own scale unless ``standardized``.
    """
    X_obs = np.atleast_2d(np.asarray(X_obs, dtype=float))
    X_query = np.atleast_2d(np.asarray(X_query, dtype=float))
    y = np.asarray(y_obs, dtype=float)
    if y.shape[0] < 2:
        raise ValueError("need at least two completed trials")
    mu_y = y.mean()
    sd_y = y.std()
    if not sd_y > 0:
        sd_y = 1.0
    z = (y - mu_y) / sd_y
    K = se_kernel(X_obs, X_obs, length) + noise * np.eye(y.shape[0])
    for jit in JITTERS:
        try:
            cf = cho_factor(K + jit * np.eye(y.shape[0]), lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise GPError("kernel matrix singular after jitter escalation")
    Ks = se_kernel(X_query, X_obs, length)
    mean = Ks @ cho_solve(cf, z)
    v = cho_solve(cf, Ks.T)
    var = np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 0.0)
    if standardized:
        return mean, var
    return mean * sd_y + mu_y, var * sd_y ** 2


def expected_improvement(mean, variance, best):
    """EI for minimization; reduces to max(0, best - mean) where variance is 0."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    imp = best - mean
    out = np.maximum(imp, 0.0)
    pos = sd > 0
    z = imp[pos] / sd[pos]
    out = np.array(out, dtype=float, copy=True)
    out[pos] = imp[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------- search

@dataclass
class Trial:
    index: int
    point: np.ndarray
    values: dict
    objective: float = math.nan
    status: str = "pending"  # ok | failed
    error: str = ""


@dataclass
class SearchResult:
    best: Trial
    trials: list = field(default_factory=list)

    def best_so_far(self):
        out, cur = [], math.inf
        for t in self.trials:
            if t.status == "ok":
                cur = min(cur, t.objective)
            out.append(cur)
        return out


def _serial_map(fn, items):
    return [fn(x) for x in items]


class _Safe:
    """Objective wrapper returning (value, error); a class so workers can unpickle it."""

    def __init__(self, objective):
        self.objective = objective

    def __call__(self, values):
        try:
            v = float(self.objective(values))
        except Exception as exc:  # a failed trial must not stop the search
            return math.nan, f"{type(exc).__name__}: {exc}"
        return (v, "") if math.isfinite(v) else (math.nan, "non-finite objective")


def optimize(objective, space: SearchSpace, budget: int, seed: int = 0, batch: int = 1,
             n_candidates: int = N_CANDIDATES, mapper=None) -> SearchResult:
    """Minimize ``objective(decoded values)`` over ``space`` in ``budget`` trials.

    Trials are proposed in synchronous rounds of ``batch`` and evaluated
    through ``mapper`` (defaults to a serial map). The proposal sequence
    depends only on ``seed`` and ``batch``, never on how trials are run.
    """
    if budget < 4:
        raise ValueError("budget must be >= 4")
    mapper = mapper or _serial_map
    ss = np.random.SeedSequence(seed)
    lhs_seed, cand_seed = ss.spawn(2)
    n_init = min(budget, max(4, budget // 5))
    init = qmc.LatinHypercube(d=space.dim, seed=np.random.default_rng(lhs_seed)).random(n_init)
    cand_rng = np.random.default_rng(cand_seed)
    safe = _Safe(objective)
    trials: list = []

    def run(points):
        made = [Trial(len(trials) + i, p, decode(p, space)) for i, p in enumerate(points)]
        for t, (v, err) in zip(made, mapper(safe, [t.values for t in made])):
            t.objective, t.error = v, err
            t.status = "ok" if err == "" else "failed"
            trials.append(t)
        return made

    def settle_failed():
        # a failure is scored once, against the worst result known by then
        ok = [t.objective for t in trials if t.status == "ok"]
        if not ok:
            return
        worst = max(ok)
        for t in trials:
            if t.status == "failed" and math.isnan(t.objective):
                t.objective = worst * FAIL_PENALTY

    run(list(init))
    settle_failed()
    while len(trials) < budget:
        done = [t for t in trials if t.status == "ok"]
        cands = cand_rng.random((n_candidates, space.dim))
        width = min(batch, budget - len(trials))
        if len(done) < 2:
            picks = cands[:width]
        else:
            X = np.array([t.point for t in trials])
            y = np.array([t.objective for t in trials])
            mean, var = gp_posterior(X, y, cands)
            ei = expected_improvement(mean, var, min(t.objective for t in done))
            order = np.argsort(-ei, kind="stable")
            picks = cands[order[:width]]
        run(list(picks))
        settle_failed()
    done = [t for t in trials if t.status == "ok"]
    if not done:
        raise RuntimeError("all trials failed: " + trials[-1].error)
    best = min(done, key=lambda t: (t.objective, t.index))
    return SearchResult(best, trials)


def write_trials(result: SearchResult, space: SearchSpace, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("trial," + ",".join(space.names) + ",rmse,status\n")
        for t in result.trials:
            vals = ",".join(repr(t.values[n]) for n in space.names)
            fh.write(f"{t.index},{vals},{t.objective!r},{t.status}\n")
