"""Pipeline stages; each reads its inputs from and writes its outputs to one run directory."""

from __future__ import annotations

import contextlib
import functools
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from . import arimax, correlation, emissions, evaluation, features, hyperopt, kmeans, lstm
from . import traffic_sim as ts
from ._accel import USE_NUMBA
from .config import Config, stage_seed
from .network import export_network, generate_grid, read_network

log = logging.getLogger(__name__)

STAGES = ("gen-network", "simulate", "aggregate", "correlate", "tune",
          "train-lstm", "train-kmeans", "train-arimax", "evaluate")
LINK_LOCAL = ("speed", "density", "flow", "delay", "ghg_er")


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def pmap(fn, items, jobs=1):
    """Ordered map; jobs > 1 fans out to worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    def __init__(self, cfg: Config, out, jobs: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.jobs = max(1, int(jobs))
        self.root = cfg.get_int("seed")

    def path(self, rel) -> Path:
        return self.out / rel

    def seed(self, stage, *index):
        return stage_seed(self.root, stage, *index)

    def need(self, stage, rel, hint):
        p = self.path(rel)
        if not p.is_file():
            raise StageError(stage, f"missing input {rel}; run {hint} first")
        return p

    @contextlib.contextmanager
    def stage(self, name):
        st = _StageFiles(self, name)
        t0 = time.perf_counter()
        try:
            yield st
        except Exception as exc:
            st.discard()
            if isinstance(exc, StageError):
                raise
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        st.commit()
        log.info("stage %s done in %.1f s", name, time.perf_counter() - t0)

    # manifest: one section per stage, rewritten whole with sorted keys
    def manifest(self):
        p = self.path("manifest.json")
        if p.is_file():
            return json.loads(p.read_text(encoding="utf-8"))
        return {}

    def write_manifest(self, doc):
        self.out.mkdir(parents=True, exist_ok=True)
        self.path("manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")


class _StageFiles:
    def __init__(self, run, name):
        self.run = run
        self.name = name
        self.files = []
        self.seeds = {}
        self.info = {}

    def out(self, rel) -> Path:
        p = self.run.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def discard(self):
        for rel in self.files:
            with contextlib.suppress(FileNotFoundError):
                self.run.path(rel).unlink()

    def commit(self):
        doc = self.run.manifest()
        doc.update({
            "package": "ecoforecast", "version": __version__,
            "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__,
            "kernels": "numba" if USE_NUMBA else "numpy",
            "root_seed": self.run.root, "config": self.run.cfg.values,
        })
        stages = doc.setdefault("stages", {})
        prev = stages.get(self.name, {})
        outputs = dict(prev.get("outputs", {}))
        outputs.update({rel: sha256(self.run.path(rel)) for rel in sorted(self.files)})
        seeds = dict(prev.get("seeds", {}))
        seeds.update(self.seeds)
        info = dict(prev.get("info", {}))
        info.update(self.info)
        stages[self.name] = {"outputs": outputs, "seeds": seeds, "info": info}
        self.run.write_manifest(doc)


# --------------------------------------------------------------- network

def gen_network(run: Run):
    cfg = run.cfg
    with run.stage("gen-network") as st:
        src = cfg["network.source"]
        if src == "grid":
            seed = run.seed("network")
            st.seeds["network"] = seed
            net = generate_grid(cfg.get_int("network.rows"), cfg.get_int("network.cols"),
                                cfg.get_float("network.spacing"),
                                tuple(cfg.get_list("network.lanes", int)),
                                tuple(cfg.get_list("network.ffs", float)), seed=seed)
        else:
            net = read_network(src)
        st.out("network.txt").write_text(export_network(net), encoding="utf-8")
        st.info["n_links"] = len(net)
    return net


def _network(run, stage):
    return read_network(run.need(stage, "network.txt", "gen-network"))


# ------------------------------------------------------------ simulation

def _idm(cfg):
    return ts.IdmParams(a=cfg.get_float("sim.idm.a"), b=cfg.get_float("sim.idm.b"),
                        s0=cfg.get_float("sim.idm.s0"), T=cfg.get_float("sim.idm.T"),
                        delta=cfg.get_float("sim.idm.delta"))


def scenario_plan(run: Run, net):
    """(run_id, scenario, seed) for the corpus scenarios and the long single-scenario run."""
    cfg = run.cfg
    od = ts.generate_od_pairs(net, cfg.get_int("demand.od_pairs"), run.seed("demand"),
                              cfg.get_int("demand.min_separation"))
    base = cfg.get_int("demand.base")
    H = cfg.get_float("demand.horizon")
    plan = []
    for i, (f, dist) in enumerate(cfg.scenarios()):
        sc = ts.scale_scenario(base, f, dist, H, od)
        plan.append((sc.scenario_id, sc, run.seed("simulate", i)))
    ids = [p[0] for p in plan]
    if len(set(ids)) != len(ids):
        raise StageError("simulate", "duplicate scenarios in demand.scenarios")
    # one scenario over a longer window, for per-link ARIMAX series
    f = cfg.get_float("arimax.demand_factor")
    Ha = cfg.get_float("arimax.horizon")
    long_sc = ts.scale_scenario(int(round(base * Ha / H)), f, cfg["arimax.distribution"], Ha, od)
    plan.append((f"long_{long_sc.scenario_id}", long_sc, run.seed("simulate-long")))
    return od, plan


def _simulate_one(job):
    net_text, sc, idm, reroute, seed, path = job
    from .network import load_network
    net = load_network(net_text)
    res = ts.run_scenario(net, sc, idm, reroute, seed)
    ts.write_records(res.records, path)
    return res.end_time, res.n_unarrived, len(res.records)


def simulate(run: Run):
    cfg = run.cfg
    net = _network(run, "simulate")
    with run.stage("simulate") as st:
        od, plan = scenario_plan(run, net)
        st.seeds["demand"] = run.seed("demand")
        lines = [f"od,{o},{d},{w!r}" for o, d, w in od]
        jobs = []
        text = export_network(net)
        for rid, sc, seed in plan:
            st.seeds[rid] = seed
            lines.append(f"scenario,{rid},{sc.demand_factor!r},{sc.n_vehicles},"
                         f"{sc.departure_distribution},{sc.horizon!r}")
            jobs.append((text, sc, _idm(cfg), cfg.get_int("sim.reroute_interval"), seed,
                         str(st.out(f"records/{rid}.csv"))))
        st.out("demand.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        results = pmap(_simulate_one, jobs, run.jobs)
        rows = ["run_id,end_time,n_vehicles,n_unarrived,n_records"]
        for (rid, sc, _), (end, left, nrec) in zip(plan, results):
            rows.append(f"{rid},{end},{sc.n_vehicles},{left},{nrec}")
            if left:
                log.warning("%s: %d vehicles did not arrive", rid, left)
        st.out("simulation.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def sim_summary(run, stage):
    p = run.need(stage, "simulation.csv", "simulate")
    return pd.read_csv(p, dtype={"run_id": str}, float_precision="round_trip")


# ----------------------------------------------------------- aggregation

def _table(cfg):
    t = cfg["emissions.table"]
    return emissions.OpModeTable.default() if t == "default" else emissions.OpModeTable.read(t)


def _aggregate_one(job):
    net_text, rid, rec_path, end_time, interval, table_path, emis_path = job
    from .network import load_network
    net = load_network(net_text)
    table = emissions.OpModeTable.default() if table_path == "default" else emissions.OpModeTable.read(table_path)
    rec = emissions.add_emissions(ts.read_records(rec_path), table=table)
    if emis_path:
        rec.to_csv(emis_path, index=False, lineterminator="\n")
    df = features.aggregate(rec, net, interval, end_time, rid)
    veh = math.fsum(rec["rate_gps"].to_numpy(float))
    link = math.fsum(df["ghg_gps"].to_numpy(float) * interval)
    return df, veh, link


def aggregate(run: Run, interval: int | None = None):
    cfg = run.cfg
    main, _ = cfg.intervals()
    interval = main if interval is None else int(interval)
    if interval not in (30, 60):
        raise StageError("aggregate", "interval must be 30 or 60 s")
    net = _network(run, "aggregate")
    summ = sim_summary(run, "aggregate")
    with run.stage("aggregate") as st:
        text = export_network(net)
        write_emis = cfg.get_bool("emissions.write_records")
        want = [r for r in summ.itertuples() if not r.run_id.startswith("long_") or interval == main]
        jobs = []
        for r in want:
            rec = run.need("aggregate", f"records/{r.run_id}.csv", "simulate")
            emis = str(st.out(f"emissions/{r.run_id}.csv")) if write_emis else ""
            jobs.append((text, r.run_id, str(rec), int(r.end_time), interval,
                         cfg["emissions.table"], emis))
        results = pmap(_aggregate_one, jobs, run.jobs)
        corpus = [df for r, (df, _, _) in zip(want, results) if not r.run_id.startswith("long_")]
        features.write_features(pd.concat(corpus, ignore_index=True), st.out(f"features_{interval}.csv"))
        longs = [df for r, (df, _, _) in zip(want, results) if r.run_id.startswith("long_")]
        if longs:
            features.write_features(longs[0], st.out(f"features_long_{interval}.csv"))
        tot = ["run_id,vehicle_grams,link_grams"]
        tot += [f"{r.run_id},{v!r},{l!r}" for r, (_, v, l) in zip(want, results)]
        st.out(f"emission_totals_{interval}.csv").write_text("\n".join(tot) + "\n", encoding="utf-8")
        st.info[f"rows_{interval}"] = int(sum(len(d) for d in corpus))


def _features(run, stage, interval, long=False):
    name = f"features_long_{interval}.csv" if long else f"features_{interval}.csv"
    return features.read_features(run.need(stage, name, f"aggregate --interval {interval}"))


# ------------------------------------------------------------ correlation

def correlate(run: Run, interval: int | None = None):
    main, _ = run.cfg.intervals()
    interval = interval or main
    df = _features(run, "correlate", interval)
    with run.stage("correlate") as st:
        m = correlation.lag_matrix(df, window=run.cfg.get_int("correlate.window"))
        correlation.write_matrix(m, st.out(f"correlation/matrix_{interval}.csv"))
        text = correlation.ranking_report(m)
        local = correlation.rank_predictors(m, LINK_LOCAL)
        text += "# link-local ranking: " + ",".join(local) + "\n"
        st.out(f"correlation/ranking_{interval}.txt").write_text(text, encoding="utf-8")
    return m


# --------------------------------------------------------------- datasets

def sequence_data(run: Run, predictors, interval, df=None, stage="train-lstm"):
    """Normalized sequences with the shared split, plus a validation carve-out."""
    if df is None:
        df = _features(run, stage, interval)
    ds = features.build_sequences(df, predictors, 3)
    ds = features.split(ds, "lstm_80_20", run.seed("split"))
    ds = features.normalize(ds)
    tr = ds.splits["train"]
    perm = np.random.default_rng(run.seed("val-carve-out")).permutation(tr.size)
    n_val = int(round(tr.size * run.cfg.get_float("split.val_fraction")))
    fit_idx = np.sort(tr[perm[n_val:]])
    val_idx = np.sort(tr[perm[:n_val]])
    return ds, fit_idx, val_idx


def _base_config(cfg: Config, seed) -> dict:
    return {
        "solver": cfg["lstm.solver"],
        "initial_learning_rate": cfg.get_float("lstm.initial_learning_rate"),
        "momentum": cfg.get_float("lstm.momentum"),
        "max_epochs": cfg.get_int("lstm.max_epochs"),
        "lr_drop_factor": cfg.get_float("lstm.lr_drop_factor"),
        "lr_drop_period": cfg.get_int("lstm.lr_drop_period"),
        "minibatch_size": cfg.get_int("lstm.minibatch_size"),
        "seed": seed,
    }


def _rmse(y, p):
    return float(np.sqrt(np.mean((np.asarray(y) - np.asarray(p)) ** 2)))


# ----------------------------------------------------------------- tuning

def _tune_trial(values, data, base):
    X_fit, y_fit, X_val, y_val = data
    kw, hidden = hyperopt.split_values(values)
    cfg = lstm.TrainConfig(**{**base, **kw})
    res = lstm.train(X_fit, y_fit, hidden, cfg)
    return _rmse(y_val, lstm.predict(res.net, X_val))


def _trial_call(args):
    fn, values = args
    return fn(values)


class _Mapper:
    def __init__(self, jobs):
        self.jobs = jobs

    def __call__(self, fn, items):
        return pmap(_trial_call, [(fn, v) for v in items], self.jobs)


def best_config_text(cfg: lstm.TrainConfig, hidden) -> str:
    return cfg.to_text() + "hidden_units=" + ",".join(str(h) for h in hidden) + "\n"


def read_best_config(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    hidden = [int(x) for l in lines if l.startswith("hidden_units=") for x in l.split("=", 1)[1].split(",")]
    cfg = lstm.TrainConfig.from_text("\n".join(l for l in lines if not l.startswith("hidden_units=")))
    return cfg, hidden


def tune(run: Run, presets=None):
    cfg = run.cfg
    main, _ = cfg.intervals()
    presets = presets or cfg.get_list("tune.presets")
    df = _features(run, "tune", main)
    with run.stage("tune") as st:
        for name in presets:
            spec = lstm.PRESETS[name]
            ds, fit_idx, val_idx = sequence_data(run, spec["predictors"], main, df)
            space_name = cfg["tune.space_2layer" if spec["layers"] == 2 else "tune.space_1layer"]
            space = hyperopt.PRESET_SPACES[space_name]
            seed = run.seed("tune", list(lstm.PRESETS).index(name))
            st.seeds[f"tune.{name}"] = seed
            base = _base_config(cfg, run.seed("lstm", list(lstm.PRESETS).index(name)))
            data = (ds.X[fit_idx], ds.y[fit_idx], ds.X[val_idx], ds.y[val_idx])
            obj = functools.partial(_tune_trial, data=data, base=base)
            res = hyperopt.optimize(obj, space, cfg.get_int("tune.budget"), seed,
                                    batch=cfg.get_int("tune.batch"), mapper=_Mapper(run.jobs))
            hyperopt.write_trials(res, space, st.out(f"tune/{name}_trials.csv"))
            kw, hidden = hyperopt.split_values(res.best.values)
            best = lstm.TrainConfig(**{**base, **kw})
            st.out(f"tune/{name}_best.txt").write_text(best_config_text(best, hidden), encoding="utf-8")
            st.info[f"{name}.best_val_rmse"] = res.best.objective
            log.info("tune %s: best validation RMSE %.4f (%s)", name, res.best.objective, space_name)


# ------------------------------------------------------------------- LSTM

def _train_one(job):
    name, X, y, hidden, cfg_dict, feature_names, norm_stats = job
    res = lstm.train(X, y, hidden, lstm.TrainConfig(**cfg_dict),
                     feature_names=feature_names, norm_stats=norm_stats)
    return res.net, res.train_loss


def lstm_config(run: Run, name):
    cfg = run.cfg
    idx = list(lstm.PRESETS).index(name)
    tuned = run.path(f"tune/{name}_best.txt")
    if cfg.get_bool("lstm.use_tuned") and tuned.is_file():
        tc, hidden = read_best_config(tuned)
        return tc, hidden, True
    hidden = [cfg.get_int("lstm.hidden_units")] * lstm.PRESETS[name]["layers"]
    return lstm.TrainConfig(**_base_config(cfg, run.seed("lstm", idx))), hidden, False


def train_lstm(run: Run, presets=None, interval: int | None = None):
    cfg = run.cfg
    main, _ = cfg.intervals()
    interval = interval or main
    presets = presets or cfg.get_list("lstm.presets")
    df = _features(run, "train-lstm", interval)
    with run.stage("train-lstm") as st:
        jobs, metas = [], []
        for name in presets:
            spec = lstm.PRESETS[name]
            ds, _, _ = sequence_data(run, spec["predictors"], interval, df)
            tc, hidden, tuned = lstm_config(run, name)
            st.info[f"{name}_i{interval}.tuned"] = tuned
            st.seeds[f"lstm.{name}"] = tc.seed
            tr = ds.splits["train"]
            jobs.append((name, ds.X[tr], ds.y[tr], hidden, dict(tc.__dict__),
                         ds.feature_names, ds.norm_stats))
            metas.append((name, ds, tc, hidden))
        results = pmap(_train_one, jobs, run.jobs)
        for (name, ds, tc, hidden), (net, hist) in zip(metas, results):
            tag = f"{name}_i{interval}"
            spec = {"preset": name, "interval": interval, "hidden_units": hidden,
                    "n_seq": ds.n_seq, "config": tc.to_text()}
            lstm.save(net, st.out(f"lstm/{tag}.json"), spec)
            te = ds.part("test")
            pred = lstm.predict(net, te.X)
            out = te.meta.assign(y_true=te.y, y_pred=pred)
            out.to_csv(st.out(f"lstm/{tag}_test.csv"), index=False, lineterminator="\n",
                       float_format="%.12g")
            pd.DataFrame({"epoch": np.arange(len(hist)), "train_loss": hist}).to_csv(
                st.out(f"lstm/{tag}_loss.csv"), index=False, lineterminator="\n", float_format="%.12g")
            st.info[f"{tag}.test_rmse"] = _rmse(te.y, pred)


# ---------------------------------------------------------------- k-means

def train_kmeans(run: Run, ks=None):
    cfg = run.cfg
    main, _ = cfg.intervals()
    ks = sorted(ks or cfg.get_list("kmeans.k", int))
    preds = cfg.get_list("kmeans.predictors")
    df = _features(run, "train-kmeans", main)
    with run.stage("train-kmeans") as st:
        # same windows and permutation as the LSTM split, so the test rows coincide
        ds = features.build_sequences(df, preds, 3)
        ds = features.split(ds, "cluster_70_10_20", run.seed("split"))
        X = ds.X[:, -1, :]
        tr, va, te = (ds.splits[k] for k in ("train", "val", "test"))
        mean, sd = features.feature_stats(X[tr][:, None, :])
        Z = (X - mean) / sd
        seed = run.seed("kmeans")
        st.seeds["kmeans"] = seed
        kmax = max(cfg.get_int("kmeans.elbow_max"), max(ks))
        curve, models = kmeans.elbow_curve(Z[tr], range(1, kmax + 1), seed, return_models=True)
        kmeans.write_elbow(curve, st.out("kmeans/elbow.csv"))
        for k in ks:
            m = models[k]
            m.feature_names = tuple(preds)
            m.norm_stats = (mean, sd)
            kmeans.assign_cluster_ghg(m, Z[tr], ds.y[tr])
            st.out(f"kmeans/k{k}.txt").write_text(kmeans.to_text(m), encoding="utf-8")
            for part, idx in (("val", va), ("test", te)):
                meta = ds.meta.iloc[idx].reset_index(drop=True)
                meta.assign(y_true=ds.y[idx], y_pred=kmeans.predict(m, Z[idx])).to_csv(
                    st.out(f"kmeans/k{k}_{part}.csv"), index=False, lineterminator="\n",
                    float_format="%.12g")
            st.info[f"k{k}.sse"] = m.sse


# ----------------------------------------------------------------- ARIMAX

def representative_links(df: pd.DataFrame, n: int, network=None) -> list:
    """Links spread over the congestion range, most congested included.

    Candidates carry a non-constant GHG series; they are ranked by mean
    density and picked at evenly spaced ranks ending at the top.
    """
    g = df.groupby("link_id", sort=True)
    stats = pd.DataFrame({"dens": g["density_vkl"].mean(), "sd": g["ghg_gps"].std(),
                          "occ": g["ghg_gps"].apply(lambda s: float((s > 0).mean()))})
    cand = stats[(stats["sd"] > 0) & (stats["occ"] >= 0.5)]
    if len(cand) < n:
        cand = stats[stats["sd"] > 0]
    if len(cand) < n:
        raise ValueError(f"only {len(cand)} links with a varying GHG series")
    order = cand.sort_values(["dens"], kind="stable").index.tolist()
    pos = [int(round((i + 1) / n * (len(order) - 1))) for i in range(n)]
    picked = []
    for p in pos:
        j = p
        while order[j] in picked:
            j -= 1
        picked.append(order[j])
    return sorted(picked)


def _arimax_one(job):
    import warnings
    lid, y, X, n_train, max_p, max_q = job
    ytr, Xtr = y[:n_train], X[:n_train]
    d, verdicts = arimax.select_d(ytr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", arimax.ArimaxWarning)
        spec = arimax.auto_order(ytr, Xtr, max_p, max_q)
        f = arimax.fit(ytr, Xtr, spec)
    pred = arimax.one_step(f, y, X, n_train)
    return f, verdicts, pred


def train_arimax(run: Run):
    cfg = run.cfg
    main, _ = cfg.intervals()
    df = features.sort_records(_features(run, "train-arimax", main, long=True))
    exog = cfg.get_list("arimax.exog")
    cols = [features.COLUMNS[v] for v in exog]
    with run.stage("train-arimax") as st:
        links = representative_links(df, cfg.get_int("arimax.links"))
        jobs, keys = [], []
        for lid in links:
            g = df[df["link_id"] == lid].sort_values("t_index")
            y = g["ghg_gps"].to_numpy(float)[1:]
            X = g[cols].to_numpy(float)[:-1]  # exogenous values at t-1
            t = g["t_index"].to_numpy()[1:]
            n_train = y.size * 7 // 10
            jobs.append((lid, y, X, n_train, cfg.get_int("arimax.max_p"), cfg.get_int("arimax.max_q")))
            keys.append((lid, y, t, n_train))
        results = pmap(_arimax_one, jobs, run.jobs)
        rows = []
        for (lid, y, t, n_train), (f, verdicts, pred) in zip(keys, results):
            st.out(f"arimax/{lid}.txt").write_text(arimax.fit_report(lid, f, verdicts, exog), encoding="utf-8")
            rows += [(lid, tt, yt, yp) for tt, yt, yp in zip(t[n_train:], y[n_train:], pred)]
            st.info[f"{lid}.spec"] = [f.spec.p, f.spec.d, f.spec.q]
        arimax.write_forecasts(rows, st.out("arimax/forecasts.csv"))
        st.info["links"] = links


# ------------------------------------------------------------- evaluation

def _read_pred(path):
    return pd.read_csv(path, dtype={"scenario_id": str, "link_id": str}, float_precision="round_trip")


def evaluate(run: Run, verbose=False):
    cfg = run.cfg
    main, alt = cfg.intervals()
    with run.stage("evaluate") as st:
        network = {}
        keys = None
        for name in cfg.get_list("lstm.presets"):
            network[name] = _read_pred(run.need("evaluate", f"lstm/{name}_i{main}_test.csv", "train-lstm"))
        for k in cfg.get_list("kmeans.k", int):
            network[f"kmeans_k{k}"] = _read_pred(run.need("evaluate", f"kmeans/k{k}_test.csv", "train-kmeans"))
        for name, p in network.items():
            kk = p[["scenario_id", "link_id", "t_index"]]
            if keys is None:
                keys = kk
            elif not kk.equals(keys) or not np.array_equal(p["y_true"], next(iter(network.values()))["y_true"]):
                raise StageError("evaluate", f"{name} was scored on a different test set")
        table = evaluation.compare({n: (p["y_true"], p["y_pred"]) for n, p in network.items()}, verbose)
        for n, p in network.items():
            evaluation.write_scatter(p["y_true"], p["y_pred"], st.out(f"report/scatter_{n}.csv"))
        groups = [("network", table)]
        text = [evaluation.report_text(table, f"Network test set ({main} s interval)")]

        ar = _read_pred(run.need("evaluate", "arimax/forecasts.csv", "train-arimax"))
        ar_table = evaluation.compare({"arimax": (ar["y_true"], ar["y_pred"])}, verbose)
        evaluation.write_scatter(ar["y_true"], ar["y_pred"], st.out("report/scatter_arimax.csv"))
        groups.append(("arimax_links", ar_table))
        text.append(evaluation.report_text(
            ar_table, f"ARIMAX, {ar['link_id'].nunique()} links, chronological 70/30 split",
            "ARIMAX is scored on its own per-link test set and is not comparable row for row "
            "with the network models."))

        if alt is not None:
            alt_models = {}
            for name in cfg.get_list("lstm.alt_presets"):
                p = run.path(f"lstm/{name}_i{alt}_test.csv")
                if p.is_file():
                    q = _read_pred(p)
                    alt_models[f"{name}_i{alt}"] = (q["y_true"], q["y_pred"])
            if alt_models:
                at = evaluation.compare(alt_models, verbose)
                groups.append((f"interval_{alt}", at))
                text.append(evaluation.report_text(at, f"Alternate {alt} s interval (reported, not gated)"))
            r_main = run.path(f"features_{main}.csv")
            r_alt = run.path(f"features_{alt}.csv")
            if r_main.is_file() and r_alt.is_file():
                n_main = sum(1 for _ in open(r_main)) - 1
                n_alt = sum(1 for _ in open(r_alt)) - 1
                text.append(f"corpus rows: {n_main} at {main} s, {n_alt} at {alt} s "
                            f"(ratio {n_alt / n_main:.3f})\n")
        frames = []
        for g, t in groups:
            t = t.copy()
            t.insert(0, "group", g)
            frames.append(t)
        evaluation.write_report_csv(pd.concat(frames), st.out("report/metrics.csv"))
        st.out("report/report.txt").write_text("\n".join(text), encoding="utf-8")
        best_km = min((n for n in table.index if n.startswith("kmeans")), key=lambda n: table.loc[n, "rmse"],
                      default=None)
        st.info["best_kmeans"] = best_km
    return table


def run_all(run: Run):
    main, alt = run.cfg.intervals()
    gen_network(run)
    simulate(run)
    aggregate(run, main)
    if alt is not None:
        aggregate(run, alt)
    correlate(run, main)
    tune(run)
    train_lstm(run, interval=main)
    if alt is not None:
        train_lstm(run, run.cfg.get_list("lstm.alt_presets"), alt)
    train_kmeans(run)
    train_arimax(run)
    evaluate(run)
