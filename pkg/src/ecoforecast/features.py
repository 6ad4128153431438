"""Link-interval aggregation, in-link features, lagged sequence datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import kernels
from .network import Network

log = logging.getLogger(__name__)

# record field -> CSV column
COLUMNS = {
    "speed": "speed_kmh",
    "density": "density_vkl",
    "flow": "flow_vph",
    "delay": "delay_s",
    "ghg_er": "ghg_gps",
    "in_speed": "in_speed_kmh",
    "in_density": "in_density_vkl",
    "in_flow": "in_flow_vph",
}
VARIABLES = tuple(COLUMNS)
CSV_COLUMNS = ["scenario_id", "link_id", "t_index"] + list(COLUMNS.values())
SPLITS = ("lstm_80_20", "cluster_70_10_20", "arima_70_30")
SD_FLOOR = 1e-8


def aggregate(records: pd.DataFrame, network: Network, interval_len: int = 60,
              end_time: int | None = None, scenario_id: str = "s0") -> pd.DataFrame:
    """Per-link, per-interval traffic and emission features.

    ``records`` are per-second vehicle rows carrying ``rate_gps``.
    ``end_time`` is the last simulated second; vehicles still recorded at
    that second are treated as not having left their link. Without it every
    vehicle's last record is followed by an exit.
    """
    if interval_len not in (30, 60):
        raise ValueError("interval_len must be 30 or 60 s")
    I = int(interval_len)
    n_links = len(network)
    codes = _link_codes(records, network)
    t = records["t_sec"].to_numpy(np.int64)
    veh = records["vehicle_id"].to_numpy(np.int64)
    speed = records["speed_mps"].to_numpy(float)
    rate = records["rate_gps"].to_numpy(float)
    if end_time is None:
        end_time = int(t.max()) + 1 if t.size else 0
    K = end_time // I + 1

    L = network.lengths()
    lanes = network.lanes_array()
    ffs = network.ffs_kmh()

    gi = codes * K + t // I
    n_g = n_links * K
    ghg = kernels.group_sum(gi, rate, n_g) / I
    veh_seconds = kernels.group_sum(gi, np.ones(t.size), n_g)

    # per (link, second) mean speed, then averaged over occupied seconds
    T1 = end_time + 1
    gs = codes * T1 + t
    cnt = np.bincount(gs, minlength=n_links * T1)
    ssum = kernels.group_sum(gs, speed, n_links * T1)
    occ = np.nonzero(cnt)[0]
    sec_mean = ssum[occ] / cnt[occ]
    occ_g = (occ // T1) * K + (occ % T1) // I
    spd_sum = kernels.group_sum(occ_g, sec_mean, n_g)
    occ_n = np.bincount(occ_g, minlength=n_g)

    exit_t, exit_link = _exits(veh, t, codes, end_time)
    crossings = np.bincount(exit_link * K + exit_t // I, minlength=n_g)

    ffs_g = np.repeat(ffs, K)
    spd = np.where(occ_n > 0, spd_sum / np.maximum(occ_n, 1) * 3.6, ffs_g)
    dens = veh_seconds / I / np.repeat(L / 1000.0 * lanes, K)
    flow = crossings * 3600.0 / I
    v_mps = np.maximum(spd / 3.6, 1.0)
    delay = np.maximum(0.0, np.repeat(L, K) / v_mps - np.repeat(L, K) / (ffs_g / 3.6))

    spd2, dens2, flow2 = (a.reshape(n_links, K) for a in (spd, dens, flow))
    in_s = np.empty((n_links, K))
    in_d = np.empty((n_links, K))
    in_f = np.empty((n_links, K))
    for i, l in enumerate(network.links):
        ups = sorted(network.index[u] for u in network.in_links(l.id))
        if ups:
            in_s[i] = spd2[ups].mean(axis=0)
            in_d[i] = dens2[ups].mean(axis=0)
            in_f[i] = flow2[ups].mean(axis=0)
        else:
            in_s[i], in_d[i], in_f[i] = ffs[i], 0.0, 0.0

    link_ids = np.array([l.id for l in network.links], dtype=object)
    return pd.DataFrame({
        "scenario_id": scenario_id,
        "link_id": np.repeat(link_ids, K),
        "t_index": np.tile(np.arange(K), n_links),
        "speed_kmh": spd,
        "density_vkl": dens,
        "flow_vph": flow,
        "delay_s": delay,
        "ghg_gps": ghg,
        "in_speed_kmh": in_s.ravel(),
        "in_density_vkl": in_d.ravel(),
        "in_flow_vph": in_f.ravel(),
    })


def _link_codes(records, network):
    col = records["link_id"]
    ids = [l.id for l in network.links]
    if isinstance(col.dtype, pd.CategoricalDtype) and list(col.cat.categories) == ids:
        return col.cat.codes.to_numpy(np.int64)
    s = col.astype(str)
    unknown = set(s.unique()) - set(ids)
    if unknown:
        raise ValueError(f"records reference unknown links: {sorted(unknown)[:5]}")
    return s.map(network.index).to_numpy(np.int64)


def _exits(veh, t, codes, end_time):
    """Times and links of completed link traversals."""
    if veh.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    o = np.lexsort((t, veh))
    v, tt, c = veh[o], t[o], codes[o]
    same = v[1:] == v[:-1]
    change = same & (c[1:] != c[:-1])
    et = [tt[1:][change]]
    el = [c[:-1][change]]
    last = np.ones(v.size, dtype=bool)
    last[:-1] = ~same
    done = last & (tt < end_time)
    et.append(tt[done] + 1)
    el.append(c[done])
    return np.concatenate(et), np.concatenate(el)


def read_features(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"scenario_id": str, "link_id": str}, float_precision="round_trip")


def write_features(df: pd.DataFrame, path):
    df[CSV_COLUMNS].to_csv(path, index=False, lineterminator="\n")


# --------------------------------------------------------------- sequences

def window_index(df: pd.DataFrame, width: int) -> np.ndarray:
    """Row positions of every gap-free run of ``width`` consecutive intervals.

    ``df`` must be sorted by (scenario_id, link_id, t_index). Returns an
    (n_windows, width) integer array.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    grp = pd.factorize(pd.MultiIndex.from_arrays([df["scenario_id"], df["link_id"]]))[0]
    ti = df["t_index"].to_numpy(np.int64)
    n = len(df)
    if n < width:
        return np.zeros((0, width), dtype=np.int64)
    end = np.arange(width - 1, n)
    ok = np.ones(end.size, dtype=bool)
    for j in range(1, width):
        ok &= (grp[end - j] == grp[end]) & (ti[end - j] == ti[end] - j)
    end = end[ok]
    return end[:, None] - np.arange(width - 1, -1, -1)[None, :]


def sort_records(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values(["scenario_id", "link_id", "t_index"], kind="stable").reset_index(drop=True)


@dataclass(frozen=True)
class SequenceDataset:
    X: np.ndarray  # (N, n_seq, n_features)
    y: np.ndarray  # (N,) g/s
    feature_names: tuple
    meta: pd.DataFrame  # scenario_id, link_id, t_index of each target
    norm_stats: tuple | None = None  # (mean, sd) per feature
    splits: dict = field(default_factory=dict)

    def __len__(self):
        return self.y.shape[0]

    @property
    def n_seq(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx],
                       meta=self.meta.iloc[idx].reset_index(drop=True), splits={})

    def part(self, name):
        return self.subset(self.splits[name])


def build_sequences(df: pd.DataFrame, predictors, n_seq: int = 3) -> SequenceDataset:
    """Windows of ``n_seq`` past intervals with the next interval's GHG ER as target."""
    bad = [p for p in predictors if p not in COLUMNS]
    if bad:
        raise ValueError(f"unknown predictors {bad}")
    if n_seq < 1:
        raise ValueError("n_seq must be >= 1")
    df = sort_records(df)
    win = window_index(df, n_seq + 1)
    cols = [COLUMNS[p] for p in predictors]
    F = df[cols].to_numpy(float)
    if win.shape[0] == 0:
        log.warning("no contiguous run longer than n_seq=%d; dataset is empty", n_seq)
    X = F[win[:, :-1]] if win.shape[0] else np.zeros((0, n_seq, len(cols)))
    tgt = win[:, -1]
    y = df["ghg_gps"].to_numpy(float)[tgt]
    meta = df.loc[tgt, ["scenario_id", "link_id", "t_index"]].reset_index(drop=True)
    return SequenceDataset(X, y, tuple(predictors), meta)


def split_indices(n: int, scheme: str, seed: int = 0, meta: pd.DataFrame | None = None) -> dict:
    """Train/validation/test row indices.

    The two random schemes share one permutation and the same test rows, so
    models trained under either are scored on an identical test set.
    """
    if scheme not in SPLITS:
        raise ValueError(f"scheme must be one of {SPLITS}")
    if n < 10:
        raise ValueError("need at least 10 rows to split")
    if scheme == "arima_70_30":
        if meta is None:
            k = n * 7 // 10
            return {"train": np.arange(k), "test": np.arange(k, n)}
        train, test = [], []
        keys = pd.MultiIndex.from_arrays([meta["scenario_id"], meta["link_id"]])
        for _, rows in pd.Series(np.arange(n)).groupby(pd.factorize(keys)[0]):
            rows = rows.to_numpy()
            rows = rows[np.argsort(meta["t_index"].to_numpy()[rows], kind="stable")]
            k = rows.size * 7 // 10
            train.append(rows[:k])
            test.append(rows[k:])
        return {"train": np.sort(np.concatenate(train)), "test": np.sort(np.concatenate(test))}
    perm = np.random.default_rng(seed).permutation(n)
    n_test = n - n * 8 // 10
    test = np.sort(perm[n - n_test:])
    if scheme == "lstm_80_20":
        return {"train": np.sort(perm[:n - n_test]), "test": test}
    n_train = n * 7 // 10
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n - n_test]), "test": test}


def split(dataset: SequenceDataset, scheme: str, seed: int = 0) -> SequenceDataset:
    return replace(dataset, splits=split_indices(len(dataset), scheme, seed, dataset.meta))


def feature_stats(X: np.ndarray):
    flat = X.reshape(-1, X.shape[-1])
    return flat.mean(axis=0), np.maximum(flat.std(axis=0), SD_FLOOR)


def normalize(dataset: SequenceDataset, train_idx=None) -> SequenceDataset:
    """z-score features with statistics of the training rows; targets untouched."""
    if train_idx is None:
        train_idx = dataset.splits.get("train", np.arange(len(dataset)))
    mean, sd = feature_stats(dataset.X[train_idx])
    return replace(dataset, X=(dataset.X - mean) / sd, norm_stats=(mean, sd))


def apply_norm(X, norm_stats):
    mean, sd = norm_stats
    return (X - mean) / sd


def denormalize(X, norm_stats):
    mean, sd = norm_stats
    return X * sd + mean
