"""Lagged linear correlation of candidate predictors with next-interval GHG ER."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .features import COLUMNS, VARIABLES, sort_records, window_index

log = logging.getLogger(__name__)


class ZeroVarianceError(ValueError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("correlation undefined for a constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


@dataclass
class LagCorrelationMatrix:
    r: dict  # (variable, lag) -> Pearson r
    n: dict  # (variable, lag) -> sample count
    excluded: tuple = ()  # variables with a zero-variance column

    @property
    def variables(self):
        return sorted({v for v, _ in self.r})

    def lags(self, variable):
        return [self.r[(variable, l)] for l in sorted(l for v, l in self.r if v == variable)]

    def to_frame(self) -> pd.DataFrame:
        rows = [(v, l, self.r[(v, l)], self.n[(v, l)]) for v, l in sorted(self.r)]
        return pd.DataFrame(rows, columns=["variable", "lag", "r", "n"])


def lag_matrix(df: pd.DataFrame, variables=VARIABLES, window: int = 6,
               per_link: bool = False):
    """Correlate each variable at window positions 1..window-1 with GHG ER at the last.

    Pooled over every link and scenario. With ``per_link`` a dict of
    matrices keyed by link id is returned instead (diagnostics only).
    """
    df = sort_records(df)
    if per_link:
        return {lid: lag_matrix(g, variables, window) for lid, g in df.groupby("link_id", sort=True)}
    win = window_index(df, window)
    if win.shape[0] < 30:
        log.warning("only %d complete %d-step windows", win.shape[0], window)
    target = df["ghg_gps"].to_numpy(float)[win[:, -1]]
    r, n, excluded = {}, {}, []
    for var in variables:
        col = df[COLUMNS[var]].to_numpy(float)
        cells = {}
        try:
            for lag in range(1, window):
                cells[lag] = pearson(col[win[:, lag - 1]], target)
        except (ZeroVarianceError, ValueError):
            excluded.append(var)
            continue
        for lag, val in cells.items():
            r[(var, lag)] = val
            n[(var, lag)] = int(win.shape[0])
    return LagCorrelationMatrix(r, n, tuple(excluded))


def rank_predictors(matrix: LagCorrelationMatrix, candidates=None) -> list:
    """Variables by descending max |r| over lags; ties alphabetical."""
    best = {}
    for (v, _), val in matrix.r.items():
        if candidates is not None and v not in candidates:
            continue
        best[v] = max(best.get(v, 0.0), abs(val))
    return sorted(best, key=lambda v: (-best[v], v))


def write_matrix(matrix: LagCorrelationMatrix, path):
    matrix.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def ranking_report(matrix: LagCorrelationMatrix) -> str:
    lines = ["rank,variable,max_abs_r"]
    for i, v in enumerate(rank_predictors(matrix), 1):
        lines.append(f"{i},{v},{max(abs(x) for x in matrix.lags(v)):.6f}")
    if matrix.excluded:
        lines.append("# excluded (zero variance): " + ", ".join(matrix.excluded))
    return "\n".join(lines) + "\n"
