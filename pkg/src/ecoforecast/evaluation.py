"""Performance indicators and model-comparison reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd

from .correlation import ZeroVarianceError, pearson


@dataclass(frozen=True)
class Metrics:
    pearson_r: float  # nan when y_true or y_pred is constant
    r2: float
    rmse: float
    fit_slope: float  # through-origin least squares of y_pred on y_true
    n: int
    r2_corr: float = math.nan  # squared correlation, emitted in verbose reports

    def row(self):
        return {"pearson_r": self.pearson_r, "r2": self.r2, "rmse": self.rmse,
                "fit_slope": self.fit_slope, "n": self.n}


def _exact_dot(a, b) -> Fraction:
    # sum of products without rounding, so a slope of c * y_true comes back as c
    ma, ea = np.frexp(a)
    mb, eb = np.frexp(b)
    ia = (ma * 2.0 ** 53).astype(np.int64).tolist()
    ib = (mb * 2.0 ** 53).astype(np.int64).tolist()
    ex = (ea.astype(np.int64) + eb.astype(np.int64)).tolist()
    if not ex:
        return Fraction(0)
    e0 = min(ex)
    total = sum((x * y) << (e - e0) for x, y, e in zip(ia, ib, ex))
    return Fraction(total) * Fraction(2) ** (e0 - 106)


def evaluate(y_true, y_pred) -> Metrics:
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.shape != yp.shape or yt.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-D and of equal length")
    if yt.size < 2:
        raise ValueError("need at least two observations")
    res = yt - yp
    sse = float(res @ res)
    rmse = math.sqrt(sse / yt.size)
    dt = yt - yt.mean()
    sst = float(dt @ dt)
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    try:
        r = pearson(yt, yp)
    except ZeroVarianceError:
        r = math.nan
    stt = _exact_dot(yt, yt)
    slope = float(_exact_dot(yt, yp) / stt) if stt > 0 else math.nan
    return Metrics(r, r2, rmse, slope, int(yt.size), r * r)


def compare(predictions: dict, verbose: bool = False) -> pd.DataFrame:
    """Metrics per model plus pairwise relative RMSE.

    ``predictions`` maps model name -> (y_true, y_pred). Models compared in
    one call share a test set, so their ``y_true`` lengths must agree.
    Column ``delta_pct_vs_<other>`` of row ``m`` is
    (rmse_m - rmse_other) / rmse_other * 100. ``verbose`` adds the squared
    correlation next to the coefficient of determination.
    """
    rows = {}
    truth = None
    for name, (yt, yp) in predictions.items():
        yt = np.asarray(yt, dtype=float)
        if truth is not None and yt.shape != truth.shape:
            raise ValueError(f"{name}: test set length differs from the other models")
        truth = yt
        rows[name] = evaluate(yt, yp)
    df = pd.DataFrame([m.row() for m in rows.values()], index=pd.Index(list(rows), name="model"))
    if verbose:
        df.insert(2, "r2_corr", [m.r2_corr for m in rows.values()])
    if len(rows) > 1:
        for other, mo in rows.items():
            df[f"delta_pct_vs_{other}"] = [math.nan if k == other else (m.rmse - mo.rmse) / mo.rmse * 100.0
                                           for k, m in rows.items()]
    return df


def report_text(df: pd.DataFrame, title: str = "", note: str = "") -> str:
    lines = [title] if title else []
    cols = ["pearson_r", "r2", "fit_slope", "rmse", "n"]
    width = max([12] + [len(str(k)) + 2 for k in df.index])
    lines.append(f"{'model':<{width}}" + "".join(f"{c:>12}" for c in cols))
    for name, row in df.iterrows():
        cells = [f"{int(row[c]):>12d}" if c == "n" else f"{row[c]:>12.4f}" for c in cols]
        lines.append(f"{name:<{width}}" + "".join(cells))
    if len(df) > 1:
        best = df["rmse"].idxmin()
        for other in df.index:
            if other != best:
                lines.append(f"rmse of {best} vs {other}: {df.loc[best, f'delta_pct_vs_{other}']:+.1f}%")
    if note:
        lines.append(note)
    return "\n".join(lines) + "\n"


def write_report_csv(df: pd.DataFrame, path):
    df.to_csv(path, lineterminator="\n", float_format="%.10g")


def write_scatter(y_true, y_pred, path):
    pd.DataFrame({"y_true": np.asarray(y_true, float), "y_pred": np.asarray(y_pred, float)}).to_csv(
        path, index=False, lineterminator="\n", float_format="%.10g")
