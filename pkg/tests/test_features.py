import numpy as np
import pandas as pd
import pytest

from ecoforecast import features, network

ONE = network.load_network("node,A\nnode,B\nlink,AB,A,B,500,1,60\nlink,BA,B,A,500,1,60\n")


def _rec(rows):
    df = pd.DataFrame(rows, columns=["t_sec", "vehicle_id", "link_id", "speed_mps", "accel_mps2", "rate_gps"])
    return df


def _row(df, link, k):
    return df[(df.link_id == link) & (df.t_index == k)].iloc[0]


def test_empty_interval_conventions():
    df = features.aggregate(_rec([]), ONE, 60, end_time=120)
    r = _row(df, "AB", 0)
    assert (r.speed_kmh, r.density_vkl, r.flow_vph, r.delay_s, r.ghg_gps) == (60.0, 0.0, 0.0, 0.0, 0.0)


def test_one_vehicle_constant_speed():
    rows = [(t, 0, "AB", 10.0, 0.0, 1.0) for t in range(60, 120)]
    df = features.aggregate(_rec(rows), ONE, 60, end_time=200)
    r = _row(df, "AB", 1)
    assert r.speed_kmh == pytest.approx(36.0, rel=1e-14)
    assert r.density_vkl == pytest.approx(2.0, rel=1e-14)
    assert r.ghg_gps == pytest.approx(1.0, rel=1e-14)
    # 500 m at 10 m/s is 50 s against 30 s free flow
    assert r.delay_s == pytest.approx(20.0, rel=1e-12)
    # the vehicle leaves after its last record at t=119, counted in interval 2
    assert _row(df, "AB", 2).flow_vph == 60.0


def test_in_speed_single_upstream():
    net = network.load_network(
        "node,A\nnode,B\nnode,C\n"
        "link,AB,A,B,300,1,60\nlink,BC,B,C,300,1,60\nlink,CB,C,B,300,1,60\nlink,BA,B,A,300,1,60\n")
    rows = [(t, 0, "AB", 20 / 3.6, 0.0, 1.0) for t in range(0, 60)]
    df = features.aggregate(_rec(rows), net, 60, end_time=60)
    # in-links of BC exclude the U-turn CB, leaving only AB
    assert _row(df, "BC", 0).in_speed_kmh == pytest.approx(20.0, rel=1e-12)


def test_flow_conservation(small_run, grid3):
    _, res, rec = small_run
    df = features.aggregate(rec, grid3, 60, end_time=res.end_time)
    crossings = df["flow_vph"].sum() * 60 / 3600
    o = rec.sort_values(["vehicle_id", "t_sec"])
    v = o["vehicle_id"].to_numpy()
    l = o["link_id"].astype(str).to_numpy()
    changes = np.sum((v[1:] == v[:-1]) & (l[1:] != l[:-1]))
    finished = res.n_unarrived == 0
    assert finished
    assert round(crossings) == changes + rec["vehicle_id"].nunique()


def test_invariants(small_run, grid3):
    _, res, rec = small_run
    df = features.aggregate(rec, grid3, 30, end_time=res.end_time)
    ffs = df["link_id"].map(lambda x: grid3.link(x).free_flow_speed)
    assert (df.density_vkl >= 0).all() and (df.flow_vph >= 0).all() and (df.delay_s >= 0).all()
    assert (df.speed_kmh >= 0).all() and (df.speed_kmh <= ffs + 1e-9).all()


def _frame(n, links=("X",), scen=("s0",), missing=()):
    rows = []
    for s in scen:
        for l in links:
            for k in range(n):
                if k not in missing:
                    rows.append((s, l, k) + tuple(float(k + 10 * j) for j in range(8)))
    return pd.DataFrame(rows, columns=["scenario_id", "link_id", "t_index"] + list(features.COLUMNS.values()))


def test_build_sequences_counting():
    ds = features.build_sequences(_frame(4), ["speed", "density"], 3)
    assert len(ds) == 1
    assert ds.y[0] == _frame(4)["ghg_gps"].iloc[3]
    np.testing.assert_array_equal(ds.X[0, :, 0], [0.0, 1.0, 2.0])


def test_sequences_never_bridge_gaps():
    ds = features.build_sequences(_frame(10, missing=(5,)), ["speed"], 3)
    # runs 0..4 and 6..9: (5-3) + (4-3)
    assert len(ds) == 3
    assert 5 not in ds.meta.t_index.tolist()
    for x, t in zip(ds.X[:, :, 0], ds.meta.t_index):
        np.testing.assert_array_equal(x, [t - 3, t - 2, t - 1])


def test_two_scenarios_brute_force():
    df = pd.concat([_frame(7, links=("A", "B"), scen=("s1",)), _frame(5, links=("A",), scen=("s2",))])
    ds = features.build_sequences(df.sample(frac=1, random_state=0), ["flow"], 3)
    assert len(ds) == 2 * (7 - 3) + (5 - 3)
    assert not features.build_sequences(_frame(3), ["flow"], 3).y.size


@pytest.mark.parametrize("n,scheme,sizes", [
    (100, "lstm_80_20", {"train": 80, "test": 20}),
    (10, "cluster_70_10_20", {"train": 7, "val": 1, "test": 2}),
])
def test_random_splits(n, scheme, sizes):
    sp = features.split_indices(n, scheme, seed=4)
    assert {k: v.size for k, v in sp.items()} == sizes
    allidx = np.concatenate(list(sp.values()))
    assert np.array_equal(np.sort(allidx), np.arange(n))


def test_splits_share_test_rows():
    a = features.split_indices(500, "lstm_80_20", seed=9)
    b = features.split_indices(500, "cluster_70_10_20", seed=9)
    np.testing.assert_array_equal(a["test"], b["test"])
    with pytest.raises(ValueError):
        features.split_indices(9, "lstm_80_20")


def test_arima_split_chronological():
    meta = pd.DataFrame({"scenario_id": "s", "link_id": "X", "t_index": np.arange(1, 11)})
    sp = features.split_indices(10, "arima_70_30", meta=meta)
    assert meta.t_index[sp["train"]].tolist() == list(range(1, 8))
    assert meta.t_index[sp["test"]].tolist() == [8, 9, 10]


def test_normalize(rng):
    X = rng.normal(3, 2, size=(50, 3, 2))
    X[:, :, 1] = 7.0
    ds = features.SequenceDataset(X, np.zeros(50), ("a", "b"), pd.DataFrame(index=range(50)))
    tr = np.arange(40)
    nd = features.normalize(ds, tr)
    flat = nd.X[tr].reshape(-1, 2)
    assert abs(flat[:, 0].mean()) < 1e-12 and flat[:, 0].std() == pytest.approx(1, abs=1e-12)
    assert np.all(nd.X[:, :, 1] == 0)
    mean, sd = X[tr].reshape(-1, 2)[:, 0].mean(), X[tr].reshape(-1, 2)[:, 0].std()
    np.testing.assert_allclose(nd.X[40:, :, 0], (X[40:, :, 0] - mean) / sd, rtol=1e-12)
    np.testing.assert_allclose(features.denormalize(nd.X, nd.norm_stats), X, atol=1e-12)


def test_features_io(tmp_path, small_run, grid3):
    _, res, rec = small_run
    df = features.aggregate(rec, grid3, 60, end_time=res.end_time)
    features.write_features(df, tmp_path / "f.csv")
    back = features.read_features(tmp_path / "f.csv")
    pd.testing.assert_frame_equal(back.reset_index(drop=True), df.reset_index(drop=True), check_exact=True,
                                  check_dtype=False)
