"""K-means over predictor space with a discrete GHG ER per cluster."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

PRESET_K = (5, 10, 15)
N_RESTARTS = 5


@dataclass
class KmeansModel:
    k: int
    centroids: np.ndarray  # (k, d) in normalized predictor space
    sse: float
    cluster_ghg: np.ndarray | None = None
    n_iter: int = 0
    history: list = field(default_factory=list)  # SSE after each assignment step
    feature_names: tuple = ()
    norm_stats: tuple | None = None

    def labels(self, X):
        return kernels.nearest_centroid(np.ascontiguousarray(X, dtype=float), self.centroids)[0]


def sse_of(X, C, labels) -> float:
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeanspp(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0.0:
            # fewer distinct points than k: take any unused row
            j = int(np.setdiff1d(np.arange(n), idx)[0])
        else:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * tot, side="right"))
            j = min(j, n - 1)
        idx.append(j)
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    return X[idx].copy()


def lloyd(X, C, max_iter=300):
    """Lloyd iterations until the assignment stops changing."""
    C = C.copy()
    k = C.shape[0]
    labels, d2 = kernels.nearest_centroid(X, C)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        for j in np.nonzero(counts == 0)[0]:
            # re-seed from the point farthest from its centroid
            far = int(np.argmax(d2))
            C[j] = X[far]
            labels[far] = j
            d2[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        sums = np.column_stack([np.bincount(labels, X[:, m], k) for m in range(X.shape[1])])
        C = sums / counts[:, None]
        new, d2 = kernels.nearest_centroid(X, C)
        history.append(float(d2.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return C, labels, history, it


def fit(X, k: int, seed: int = 0, max_iter: int = 300, init=None) -> KmeansModel:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n = X.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n (k={k}, n={n})")
    C0 = kmeanspp(X, k, np.random.default_rng(seed)) if init is None else np.asarray(init, float)
    C, labels, history, it = lloyd(X, C0, max_iter)
    return KmeansModel(k, C, sse_of(X, C, labels), n_iter=it, history=history)


def _pad_init(X, C):
    # warm start for k+1: previous centroids plus the worst-served point
    lab, d2 = kernels.nearest_centroid(X, C)
    return np.vstack((C, X[int(np.argmax(d2))]))


def best_fit(X, k, seed=0, restarts=N_RESTARTS, warm=None, max_iter=300) -> KmeansModel:
    seeds = np.random.SeedSequence([seed, k]).generate_state(restarts)
    best = None
    for s in seeds:
        m = fit(X, k, int(s), max_iter)
        if best is None or m.sse < best.sse:
            best = m
    if warm is not None and warm.k == k - 1:
        m = fit(X, k, max_iter=max_iter, init=_pad_init(X, warm.centroids))
        if m.sse < best.sse:
            best = m
    return best


def elbow_curve(X, k_range=range(1, 16), seed: int = 0, restarts: int = N_RESTARTS,
                return_models: bool = False):
    """(k, sse) pairs from the best of seeded restarts.

    Each k also tries a warm start from the (k-1) solution plus its
    worst-served point, which can only lower SSE, so the curve is
    non-increasing over consecutive k. With ``return_models`` the fitted
    models come back too, keyed by k.
    """
    X = np.ascontiguousarray(X, dtype=float)
    ks = sorted(k_range)
    if ks and (ks[0] < 1 or ks[-1] > X.shape[0]):
        raise ValueError("k_range must lie within [1, n]")
    out, models, prev = [], {}, None
    for k in ks:
        m = best_fit(X, k, seed, restarts, warm=prev)
        if prev is not None and prev.k == k - 1 and m.sse > prev.sse:
            m = _extend(X, prev)
        out.append((k, m.sse))
        models[k] = m
        prev = m
    return (out, models) if return_models else out


def _extend(X, prev):
    # duplicate-free extension that is never worse than prev
    C = _pad_init(X, prev.centroids)
    lab, _ = kernels.nearest_centroid(X, C)
    return KmeansModel(C.shape[0], C, sse_of(X, C, lab))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty cluster")
    return float(v[(v.size - 1) // 2])


def assign_cluster_ghg(model: KmeansModel, X, ghg) -> np.ndarray:
    """Per-cluster lower median of member GHG ER (g/s)."""
    lab = model.labels(X)
    ghg = np.asarray(ghg, dtype=float)
    out = np.empty(model.k)
    for j in range(model.k):
        members = ghg[lab == j]
        if members.size == 0:
            raise ValueError(f"cluster {j} has no training members")
        out[j] = max(0.0, lower_median(members))
    model.cluster_ghg = out
    return out


def predict(model: KmeansModel, X) -> np.ndarray:
    if model.cluster_ghg is None:
        raise ValueError("cluster representatives not assigned")
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    if X.shape[0] == 0:
        return np.zeros(0)
    return model.cluster_ghg[model.labels(X)]


# ---------------------------------------------------------------- files

def to_text(model: KmeansModel) -> str:
    lines = ["format=ecoforecast-kmeans/1", f"k={model.k}", f"d={model.centroids.shape[1]}",
             f"sse={model.sse!r}", "features=" + ",".join(model.feature_names)]
    if model.norm_stats is not None:
        lines.append("norm_mean=" + ",".join(repr(float(v)) for v in model.norm_stats[0]))
        lines.append("norm_sd=" + ",".join(repr(float(v)) for v in model.norm_stats[1]))
    for j, row in enumerate(model.centroids):
        lines.append(f"centroid{j}=" + ",".join(repr(float(v)) for v in row))
    if model.cluster_ghg is not None:
        lines.append("cluster_ghg=" + ",".join(repr(float(v)) for v in model.cluster_ghg))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> KmeansModel:
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    if kv.get("format") != "ecoforecast-kmeans/1":
        raise ValueError("not an ecoforecast k-means model")
    k = int(kv["k"])
    floats = lambda s: np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)
    C = np.vstack([floats(kv[f"centroid{j}"]) for j in range(k)])
    norm = (floats(kv["norm_mean"]), floats(kv["norm_sd"])) if "norm_mean" in kv else None
    ghg = floats(kv["cluster_ghg"]) if "cluster_ghg" in kv else None
    feats = tuple(kv["features"].split(",")) if kv.get("features") else ()
    return KmeansModel(k, C, float(kv["sse"]), ghg, feature_names=feats, norm_stats=norm)


def write_elbow(curve, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("k,sse\n")
        for k, s in curve:
            fh.write(f"{k},{s!r}\n")
