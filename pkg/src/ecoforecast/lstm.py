"""LSTM regressor with exogenous inputs, written directly in numpy.

Gates are stacked in the order input, forget, output, candidate; each acts
on the concatenation ``[h_prev, x_t]``. Training minimises the minibatch
mean of ``0.5 * (y_hat - y)**2`` with exact backpropagation through time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ------------------------------------------------------------ parameters

@dataclass
class LstmLayer:
    W: np.ndarray  # (4H, H + D), rows: i, f, o, g
    b: np.ndarray  # (4H,)

    @property
    def hidden(self):
        return self.b.shape[0] // 4

    @property
    def n_in(self):
        return self.W.shape[1] - self.hidden

    def gate(self, name):
        """(weights, bias) slice of one gate: 'i', 'f', 'o' or 'g'."""
        H = self.hidden
        k = "ifog".index(name)
        return self.W[k * H:(k + 1) * H], self.b[k * H:(k + 1) * H]


@dataclass
class LstmNetwork:
    layers: list
    head_w: np.ndarray  # (H_last,)
    head_b: float = 0.0
    feature_names: tuple = ()
    norm_stats: tuple | None = None

    def __post_init__(self):
        if len(self.layers) not in (1, 2):
            raise ValueError("an LstmNetwork has 1 or 2 layers")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.n_in != a.hidden:
                raise ValueError("layer input size must match previous hidden size")
        if self.head_w.shape != (self.layers[-1].hidden,):
            raise ValueError("head weight must match last hidden size")

    @property
    def n_features(self):
        return self.layers[0].n_in

    def params(self) -> dict:
        """Named views of every trainable array (the head bias as a 1-array)."""
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"layer{k}.W"] = layer.W
            out[f"layer{k}.b"] = layer.b
        out["head.w"] = self.head_w
        out["head.b"] = np.array([self.head_b])
        return out

    def set_params(self, p: dict):
        for k, layer in enumerate(self.layers):
            layer.W = p[f"layer{k}.W"]
            layer.b = p[f"layer{k}.b"]
        self.head_w = p["head.w"]
        self.head_b = float(np.asarray(p["head.b"]).ravel()[0])

    def copy(self):
        return LstmNetwork([LstmLayer(l.W.copy(), l.b.copy()) for l in self.layers],
                           self.head_w.copy(), self.head_b, self.feature_names, self.norm_stats)


def init_network(n_features: int, hidden_units, seed: int = 0, feature_names=()) -> LstmNetwork:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1."""
    hidden_units = [int(h) for h in np.atleast_1d(hidden_units)]
    rng = np.random.default_rng(seed)
    layers = []
    d = n_features
    for H in hidden_units:
        lim = 1.0 / math.sqrt(H)
        W = rng.uniform(-lim, lim, size=(4 * H, H + d))
        b = rng.uniform(-lim, lim, size=4 * H)
        b[H:2 * H] = 1.0
        layers.append(LstmLayer(W, b))
        d = H
    lim = 1.0 / math.sqrt(d)
    head_w = rng.uniform(-lim, lim, size=d)
    return LstmNetwork(layers, head_w, 0.0, tuple(feature_names))


# ----------------------------------------------------------------- forward

def cell_forward(x_t, h_prev, c_prev, layer: LstmLayer):
    """One step for a batch: x_t (B, D), h_prev/c_prev (B, H)."""
    x_t = np.asarray(x_t, dtype=float)
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev)) and np.all(np.isfinite(c_prev))):
        raise ValueError("non-finite input to LSTM cell")
    H = layer.hidden
    z = np.concatenate([h_prev, x_t], axis=-1)
    a = z @ layer.W.T + layer.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    o = sigmoid(a[..., 2 * H:3 * H])
    g = np.tanh(a[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (z, i, f, o, g, c_prev, tc)


def _layer_forward(X, layer):
    B, T, _ = X.shape
    H = layer.hidden
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    caches = []
    for t in range(T):
        h, c, cache = cell_forward(X[:, t], h, c, layer)
        hs[:, t] = h
        caches.append(cache)
    return hs, caches


def forward(net: LstmNetwork, X, return_cache=False):
    """Raw (unclamped) head output for X of shape (B, T, D) or (T, D)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != net.n_features:
        raise ValueError(f"expected (batch, steps, {net.n_features}) input, got {X.shape}")
    caches = []
    out = X
    for layer in net.layers:
        out, cache = _layer_forward(out, layer)
        caches.append((cache, out))
    h_last = out[:, -1]
    y = h_last @ net.head_w + net.head_b
    if single and not return_cache:
        return float(y[0])
    return (y, caches) if return_cache else y


# ---------------------------------------------------------------- backward

def loss(net: LstmNetwork, X, y) -> float:
    yh = forward(net, X)
    return float(0.5 * np.mean((yh - y) ** 2))


def backward(net: LstmNetwork, X, y):
    """Loss and exact gradients of the minibatch mean of 0.5*(y_hat - y)^2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    yh, caches = forward(net, X, return_cache=True)
    B, T, _ = X.shape
    r = yh - y
    value = float(0.5 * np.mean(r ** 2))
    dy = r / B
    grads = {}
    h_last = caches[-1][1][:, -1]
    grads["head.w"] = h_last.T @ dy
    grads["head.b"] = np.array([dy.sum()])

    H_top = net.layers[-1].hidden
    dH = np.zeros((B, T, H_top))
    dH[:, -1] = np.outer(dy, net.head_w)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        cache = caches[k][0]
        H = layer.hidden
        dW = np.zeros_like(layer.W)
        db = np.zeros_like(layer.b)
        dX = np.zeros((B, T, layer.n_in))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            z, i, f, o, g, c_prev, tc = cache[t]
            dh = dH[:, t] + dh_next
            do = dh * tc * o * (1.0 - o)
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            di = dc * g * i * (1.0 - i)
            df = dc * c_prev * f * (1.0 - f)
            dg = dc * i * (1.0 - g ** 2)
            da = np.concatenate([di, df, do, dg], axis=1)
            dW += da.T @ z
            db += da.sum(axis=0)
            dz = da @ layer.W
            dh_next = dz[:, :H]
            dX[:, t] = dz[:, H:]
            dc_next = dc * f
        grads[f"layer{k}.W"] = dW
        grads[f"layer{k}.b"] = db
        dH = dX
    return value, grads


# ----------------------------------------------------------------- solvers

@dataclass(frozen=True)
class TrainConfig:
    solver: str = "adam"
    initial_learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 30
    lr_drop_factor: float = 0.5
    lr_drop_period: int = 10
    minibatch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.solver not in ("sgdm", "adam"):
            raise ValueError("solver must be 'sgdm' or 'adam'")
        if not self.initial_learning_rate > 0:
            raise ValueError("initial_learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.max_epochs < 0 or self.lr_drop_period < 1 or self.minibatch_size < 1:
            raise ValueError("max_epochs >= 0, lr_drop_period >= 1, minibatch_size >= 1")
        if not 0 < self.lr_drop_factor <= 1:
            raise ValueError("lr_drop_factor must be in (0, 1]")

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        kinds = {k: type(v) for k, v in asdict(cls()).items()}
        vals = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in kinds:
                raise ValueError(f"unknown TrainConfig key {k!r}")
            vals[k] = kinds[k](float(v)) if kinds[k] is int else kinds[k](v)
        return cls(**vals)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.initial_learning_rate * config.lr_drop_factor ** (epoch // config.lr_drop_period)


@dataclass
class SolverState:
    step: int = 0
    slots: dict = field(default_factory=dict)


def solver_step(params: dict, grads: dict, state: SolverState, config: TrainConfig, epoch: int):
    """In-place update of ``params``; returns the solver state."""
    lr = learning_rate(config, epoch)
    state.step += 1
    for name, p in params.items():
        g = grads[name]
        if config.solver == "sgdm":
            v = state.slots.setdefault(name, np.zeros_like(p))
            v *= config.momentum
            v -= lr * g
            p += v
        else:
            m, s = state.slots.setdefault(name, (np.zeros_like(p), np.zeros_like(p)))
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            s *= ADAM_BETA2
            s += (1 - ADAM_BETA2) * g * g
            mh = m / (1 - ADAM_BETA1 ** state.step)
            sh = s / (1 - ADAM_BETA2 ** state.step)
            p -= lr * mh / (np.sqrt(sh) + ADAM_EPS)
    return state


# ---------------------------------------------------------------- training

class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    net: LstmNetwork
    train_loss: list
    val_loss: list
    best_epoch: int


def train(X, y, hidden_units, config: TrainConfig, X_val=None, y_val=None,
          feature_names=(), norm_stats=None) -> TrainResult:
    """Minibatch training; keeps the epoch with the best validation loss if given."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    net = init_network(X.shape[2], hidden_units, config.seed, feature_names)
    net.norm_stats = norm_stats
    if y.size:
        net.head_b = float(y.mean())
    params = net.params()
    net.set_params(params)
    state = SolverState()
    rng = np.random.default_rng(config.seed + 1)
    has_val = X_val is not None and len(X_val) > 0
    best, best_epoch, best_net = math.inf, -1, net.copy()
    hist, vhist = [], []
    n = y.shape[0]
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.minibatch_size):
            idx = perm[s:s + config.minibatch_size]
            value, grads = backward(net, X[idx], y[idx])
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}")
            total += value * idx.size
            solver_step(params, grads, state, config, epoch)
            net.head_b = float(params["head.b"][0])
        hist.append(total / max(n, 1))
        if has_val:
            vl = loss(net, X_val, y_val)
            vhist.append(vl)
            if vl < best:
                best, best_epoch, best_net = vl, epoch, net.copy()
    if not has_val or best_epoch < 0:
        best_net, best_epoch = net.copy(), config.max_epochs - 1
    return TrainResult(best_net, hist, vhist, best_epoch)


def predict(net: LstmNetwork, X) -> np.ndarray:
    """Predictions in g/s, clamped at zero."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        return np.zeros(0)
    return np.maximum(forward(net, X), 0.0)


# ------------------------------------------------------------ model files

def to_json(net: LstmNetwork, spec: dict | None = None) -> str:
    doc = {
        "format": "ecoforecast-lstm/1",
        "spec": spec or {},
        "feature_names": list(net.feature_names),
        "norm_stats": None if net.norm_stats is None else
        {"mean": [float(x) for x in net.norm_stats[0]], "sd": [float(x) for x in net.norm_stats[1]]},
        "layers": [{"hidden": l.hidden, "n_in": l.n_in,
                    "W": [float(x) for x in l.W.ravel()],
                    "b": [float(x) for x in l.b]} for l in net.layers],
        "head": {"w": [float(x) for x in net.head_w], "b": float(net.head_b)},
    }
    return json.dumps(doc, indent=1)


def from_json(text: str):
    doc = json.loads(text)
    if doc.get("format") != "ecoforecast-lstm/1":
        raise ValueError("not an ecoforecast LSTM model file")
    layers = []
    for l in doc["layers"]:
        H, D = l["hidden"], l["n_in"]
        layers.append(LstmLayer(np.array(l["W"], dtype=float).reshape(4 * H, H + D),
                                np.array(l["b"], dtype=float)))
    ns = doc["norm_stats"]
    net = LstmNetwork(layers, np.array(doc["head"]["w"], dtype=float), float(doc["head"]["b"]),
                      tuple(doc["feature_names"]),
                      None if ns is None else (np.array(ns["mean"]), np.array(ns["sd"])))
    return net, doc["spec"]


def save(net, path, spec=None):
    Path(path).write_text(to_json(net, spec), encoding="utf-8")


def load(path):
    return from_json(Path(path).read_text(encoding="utf-8"))


# ----------------------------------------------------------------- presets

PRESETS = {
    "LSTM1": {"predictors": ("speed", "density", "ghg_er"), "layers": 1, "n_seq": 3},
    "LSTM2": {"predictors": ("speed", "density", "ghg_er", "in_speed"), "layers": 1, "n_seq": 3},
    "LSTM3": {"predictors": ("speed", "density", "ghg_er", "in_speed"), "layers": 2, "n_seq": 3},
}
