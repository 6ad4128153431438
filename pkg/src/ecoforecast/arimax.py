"""Per-link ARIMA(p, d, q) with exogenous regressors, fitted by conditional sum of squares."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels

log = logging.getLogger(__name__)

DF_CRITICAL = -2.86  # 5% Dickey-Fuller, constant only, large sample
MIN_OBS_PER_PARAM = 10
BAD_CSS = 1e300


class ArimaxWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ArimaxSpec:
    p: int = 0
    d: int = 0
    q: int = 0
    r: int = 0

    def __post_init__(self):
        for name in ("p", "d", "q", "r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d > 2:
            raise ValueError("d must be <= 2")

    @property
    def n_params(self):
        return self.p + self.q + self.r + 1

    def __str__(self):
        return f"ARIMAX({self.p},{self.d},{self.q}) r={self.r}"


@dataclass
class ArimaxFit:
    spec: ArimaxSpec
    mu: float
    phi: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    sigma2: float
    aic: float
    n: int  # residuals entering the objective
    start: int = 0  # first differenced index with a residual
    converged: bool = True
    css_path: list = field(default_factory=list)  # best CSS after each simplex iteration

    def ar_stationary(self) -> bool:
        return _roots_outside(self.phi)

    def ma_invertible(self) -> bool:
        return _roots_outside(-self.theta)


def _roots_outside(c):
    # 1 - c1 z - ... - cp z^p has all roots outside the unit circle
    if len(c) == 0:
        return True
    roots = np.roots(np.concatenate((-np.asarray(c)[::-1], [1.0])))
    return bool(np.all(np.abs(roots) > 1.0))


# ----------------------------------------------------------- differencing

def difference(x, d: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d < 0:
        raise ValueError("d must be >= 0")
    if x.shape[0] <= d:
        raise ValueError(f"series of length {x.shape[0]} too short for d={d}")
    return np.diff(x, n=d, axis=0) if d else x.copy()


def undifference(w, initial, d: int = 1) -> np.ndarray:
    """Invert ``difference`` given the first ``d`` values of the original series."""
    w = np.asarray(w, dtype=float)
    initial = np.asarray(initial, dtype=float)
    if initial.shape[0] != d:
        raise ValueError(f"need exactly {d} initial values")
    out = w
    for k in range(d - 1, -1, -1):
        head = np.diff(initial, n=k)[0]
        out = np.concatenate(([head], head + np.cumsum(out)))
    return out


# ------------------------------------------------------- autocorrelation

def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations r_1..r_max_lag."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] <= max_lag + 1:
        raise ValueError("series too short for max_lag")
    dx = x - x.mean()
    c0 = float(dx @ dx)
    if c0 == 0.0:
        raise ValueError("zero-variance series")
    return np.array([float(dx[:-k] @ dx[k:]) / c0 for k in range(1, max_lag + 1)])


def pacf(x, max_lag: int) -> np.ndarray:
    """Partial autocorrelations phi_kk by the Durbin-Levinson recursion."""
    r = acf(x, max_lag)
    out = np.zeros(max_lag)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        num = r[k - 1] - (phi @ r[k - 2::-1] if k > 1 else 0.0)
        kk = num / v
        phi = np.concatenate((phi - kk * phi[::-1], [kk]))
        v *= 1.0 - kk * kk
        out[k - 1] = kk
    return out


@dataclass(frozen=True)
class UnitRoot:
    stat: float
    stationary: bool


def unit_root_score(x) -> UnitRoot:
    """Dickey-Fuller t statistic of the lagged level in dy_t = a + g*y_{t-1}."""
    y = np.asarray(x, dtype=float)
    if y.shape[0] < 20:
        raise ValueError("unit-root test needs at least 20 observations")
    dy = np.diff(y)
    A = np.column_stack((np.ones(dy.size), y[:-1]))
    coef, *_ = np.linalg.lstsq(A, dy, rcond=None)
    resid = dy - A @ coef
    dof = dy.size - 2
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(A.T @ A)
    se = np.sqrt(cov[1, 1])
    if not se > 0:
        # a perfectly explained regression: deterministic decay is stationary
        stat = -np.inf if coef[1] < 0 else np.inf
    else:
        stat = float(coef[1] / se)
    return UnitRoot(stat, bool(stat < DF_CRITICAL))


# ---------------------------------------------------------------- fitting

def _design(y, X, spec):
    y = np.asarray(y, dtype=float)
    if X is None:
        X = np.zeros((y.shape[0], 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError("exogenous series not aligned with the target")
    if X.shape[1] != spec.r:
        raise ValueError(f"spec expects r={spec.r} exogenous columns, got {X.shape[1]}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise ValueError("non-finite values in series")
    return difference(y, spec.d), difference(X, spec.d)


def _unpack(par, spec):
    p, q, r = spec.p, spec.q, spec.r
    return par[0], par[1:1 + p], par[1 + p:1 + p + r], par[1 + p + r:1 + p + r + q]


def _css(par, w, Z, spec, start):
    mu, phi, beta, theta = _unpack(par, spec)
    if theta.size and not _roots_outside(-theta):
        # a non-invertible MA part makes the residual recursion explode
        return BAD_CSS
    e = kernels.css_residuals(w, Z, mu, phi, beta, theta, start)[start:]
    s = float(e @ e)
    return s if np.isfinite(s) else BAD_CSS


def _lagged(w, Z, p, start, extra=None):
    cols = [np.ones(w.shape[0] - start)]
    cols += [w[start - 1 - i:w.shape[0] - 1 - i] for i in range(p)]
    cols += [Z[start:, k] for k in range(Z.shape[1])]
    if extra is not None:
        cols += extra
    return np.column_stack(cols)


def _initial(w, Z, spec, start):
    """Least-squares start; MA terms from a long-AR residual regression."""
    p, q = spec.p, spec.q
    if q == 0:
        A = _lagged(w, Z, p, start)
        coef, *_ = np.linalg.lstsq(A, w[start:], rcond=None)
        return coef
    m = min(max(p + q + 5, 10), max(1, (w.shape[0] - start) // 5))
    s0 = max(start, m)
    A = _lagged(w, np.zeros((w.shape[0], 0)), m, s0)
    a, *_ = np.linalg.lstsq(A, w[s0:], rcond=None)
    ehat = np.zeros(w.shape[0])
    ehat[s0:] = w[s0:] - A @ a
    s1 = s0 + q
    lags = [ehat[s1 - 1 - j:w.shape[0] - 1 - j] for j in range(q)]
    B = _lagged(w, Z, p, s1, lags)
    coef, *_ = np.linalg.lstsq(B, w[s1:], rcond=None)
    theta = np.clip(coef[1 + p + spec.r:], -0.95, 0.95)
    while not _roots_outside(-theta):
        theta = theta * 0.9
    return np.concatenate((coef[:1 + p + spec.r], theta))


def fit(y, X=None, spec: ArimaxSpec = ArimaxSpec(), start: int | None = None,
        max_iter: int | None = None) -> ArimaxFit:
    """Conditional-sum-of-squares fit on the ``d``-differenced scale.

    ``X`` holds ``spec.r`` exogenous columns aligned row-for-row with ``y``;
    it is differenced alongside the target. ``start`` (default ``p``) is the
    first differenced index whose residual enters the objective, so fits of
    different orders can share one sample.
    """
    w, Z = _design(y, X, spec)
    start = spec.p if start is None else int(start)
    if start < spec.p:
        raise ValueError("start must be >= p")
    n = w.shape[0] - start
    if n <= MIN_OBS_PER_PARAM * spec.n_params:
        raise ValueError(f"{n} observations too few for {spec} "
                         f"(need > {MIN_OBS_PER_PARAM * spec.n_params})")
    par0 = _initial(w, Z, spec, start)
    f0 = _css(par0, w, Z, spec, start)
    path = [f0]
    converged = True
    if spec.q:
        k = par0.size
        res = minimize(
            _css, par0, args=(w, Z, spec, start), method="Nelder-Mead",
            callback=lambda intermediate_result: path.append(float(intermediate_result.fun)),
            options={"maxiter": max_iter or 400 * k, "maxfev": (max_iter or 400 * k) * 2,
                     "xatol": 1e-7, "fatol": 1e-10 * max(f0, 1e-12), "adaptive": k > 4},
        )
        converged = bool(res.success)
        par = res.x if res.fun <= f0 else par0
        if not converged:
            warnings.warn(f"simplex search for {spec} stopped early: {res.message}", ArimaxWarning)
    else:
        par = par0
    css = _css(par, w, Z, spec, start)
    mu, phi, beta, theta = _unpack(np.asarray(par, dtype=float), spec)
    sigma2 = css / n
    aic = n * np.log(max(sigma2, 1e-300)) + 2 * spec.n_params
    out = ArimaxFit(spec, float(mu), phi.copy(), theta.copy(), beta.copy(), float(sigma2),
                    float(aic), int(n), start, converged, path)
    if not out.ar_stationary():
        warnings.warn(f"{spec}: AR polynomial has a root on or inside the unit circle", ArimaxWarning)
    return out


def select_d(y) -> tuple:
    """Smallest d in 0..2 whose differenced series passes the unit-root screen."""
    verdicts = []
    for d in range(3):
        ur = unit_root_score(difference(y, d))
        verdicts.append((d, ur))
        if ur.stationary:
            return d, verdicts
    return 2, verdicts


def auto_order(y, X=None, max_p: int = 3, max_q: int = 3, return_table=False):
    """d by unit-root screening, then (p, q) by AIC on a common sample.

    Grid cells whose parameter count the series cannot support are skipped.
    """
    r = 0 if X is None else (1 if np.ndim(X) == 1 else np.shape(X)[1])
    d, _ = select_d(y)
    start = max_p
    table = {}
    best = None
    for p, q in itertools.product(range(max_p + 1), range(max_q + 1)):
        spec = ArimaxSpec(p, d, q, r)
        n = len(y) - d - start
        if n <= MIN_OBS_PER_PARAM * spec.n_params:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ArimaxWarning)
            f = fit(y, X, spec, start=start)
        table[(p, q)] = f.aic
        key = (f.aic, spec.n_params, p)
        if best is None or key < best[0]:
            best = (key, spec)
    if best is None:
        raise ValueError("series too short for any (p, q) in the grid")
    return (best[1], table) if return_table else best[1]


# ------------------------------------------------------------ forecasting

def _residual_path(f: ArimaxFit, y, X, start):
    w, Z = _design(y, X, f.spec)
    e = kernels.css_residuals(w, Z, f.mu, f.phi, f.beta, f.theta, start)
    return e


def in_sample(f: ArimaxFit, y, X=None, start: int | None = None) -> np.ndarray:
    """Unclamped one-step predictions on the original scale.

    Entry t is the forecast of y[t] from y[:t] (NaN where undefined), so
    ``y - in_sample(...)`` reproduces the CSS residuals exactly.
    """
    start = f.spec.p if start is None else start
    y = np.asarray(y, dtype=float)
    e = _residual_path(f, y, X, start)
    out = np.full(y.shape[0], np.nan)
    d = f.spec.d
    out[d + start:] = y[d + start:] - e[start:]
    return out


def one_step(f: ArimaxFit, y, X=None, first: int = 0) -> np.ndarray:
    """Clamped one-step forecasts of y[first:], each using the true history."""
    pred = in_sample(f, y, X)[first:]
    if np.isnan(pred).any():
        raise ValueError("insufficient history before the first forecast index")
    return np.maximum(pred, 0.0)


def forecast(f: ArimaxFit, history, exog=None) -> float:
    """Next value after ``history``.

    ``exog`` has one row per history value plus a final row for the
    forecast time.
    """
    history = np.asarray(history, dtype=float)
    s = f.spec
    if history.shape[0] < s.p + s.d:
        raise ValueError(f"forecast needs at least p+d={s.p + s.d} history values")
    if s.r:
        exog = np.asarray(exog, dtype=float).reshape(-1, s.r)
        if exog.shape[0] != history.shape[0] + 1:
            raise ValueError("exog needs len(history)+1 rows")
    else:
        exog = None
    yy = np.append(history, 0.0)
    e = _residual_path(f, yy, exog, s.p)
    # with a zero placeholder, y - e at the last index is the forecast
    return max(0.0, float(-e[-1]))


def arma_coefficient_text(f: ArimaxFit) -> list:
    rows = [f"mu={f.mu:.10g}"]
    rows += [f"phi{i + 1}={v:.10g}" for i, v in enumerate(f.phi)]
    rows += [f"theta{j + 1}={v:.10g}" for j, v in enumerate(f.theta)]
    rows += [f"beta{k + 1}={v:.10g}" for k, v in enumerate(f.beta)]
    return rows


def fit_report(link_id, f: ArimaxFit, verdicts=(), exog_names=()) -> str:
    lines = [f"link={link_id}", f"spec={f.spec.p},{f.spec.d},{f.spec.q}",
             "exog=" + ",".join(exog_names)]
    lines += arma_coefficient_text(f)
    lines += [f"sigma2={f.sigma2:.10g}", f"aic={f.aic:.10g}", f"n={f.n}",
              f"converged={str(f.converged).lower()}"]
    for d, ur in verdicts:
        lines.append(f"unit_root_d{d}={ur.stat:.6g},{'stationary' if ur.stationary else 'nonstationary'}")
    return "\n".join(lines) + "\n"


def write_forecasts(rows, path):
    """rows: iterable of (link_id, t_index, y_true, y_pred)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("link_id,t_index,y_true,y_pred\n")
        for lid, t, yt, yp in rows:
            fh.write(f"{lid},{int(t)},{yt:.12g},{yp:.12g}\n")
