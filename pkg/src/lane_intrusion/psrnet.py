"""Phase-space reconstruction network in plain numpy.

A bank of ``n`` order-k reconstructors embeds each window into latent state
trajectories; a small 2-D CNN reads the stacked phase-space map and outputs
class probabilities. Forward and backward passes are written out by hand in
float64 and operate on mini-batches of windows with shape ``(batch, window_len)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_FORMAT = "lane-intrusion-psrnet"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PSRNetConfig:
    """Architecture and loss weighting.

    ``pool`` toggles the 2x2 max-pooling after each classifier convolution.
    Pooling uses ceil mode so that a single-row map (``n_orders=0``) survives.
    """

    n_orders: int = 4
    recon_channels: int = 8
    classifier_channels: tuple = (16, 32)
    window_len: int = 24
    n_classes: int = 3
    lam: float = 0.5
    pool: bool = True

    def __post_init__(self):
        if self.n_orders < 0:
            raise ValueError("n_orders must be >= 0")
        if self.window_len <= self.n_orders:
            raise ValueError("window_len must exceed n_orders")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        object.__setattr__(self, "classifier_channels", tuple(int(c) for c in self.classifier_channels))

    @property
    def map_channels(self) -> int:
        return 1 + self.n_orders * self.recon_channels

    def _pooled(self, h, w):
        if not self.pool:
            return h, w
        return math.ceil(h / 2), math.ceil(w / 2)

    @property
    def fc_inputs(self) -> int:
        h, w = self._pooled(self.map_channels, self.window_len)
        h, w = self._pooled(h, w)
        return self.classifier_channels[1] * h * w

    def parameter_shapes(self) -> dict:
        """Parameter names and shapes in checkpoint order."""
        rc = self.recon_channels
        c1, c2 = self.classifier_channels
        shapes = {}
        for k in range(1, self.n_orders + 1):
            shapes[f"recon{k}.weight"] = (rc, k)
            shapes[f"recon{k}.bias"] = (rc,)
            shapes[f"head{k}.weight"] = (rc,)
            shapes[f"head{k}.bias"] = (1,)
        shapes["conv1.weight"] = (c1, 1, 3, 3)
        shapes["conv1.bias"] = (c1,)
        shapes["conv2.weight"] = (c2, c1, 3, 3)
        shapes["conv2.bias"] = (c2,)
        shapes["fc.weight"] = (self.n_classes, self.fc_inputs)
        shapes["fc.bias"] = (self.n_classes,)
        return shapes


@dataclass
class LossBreakdown:
    """Per-order reconstruction MSE, classification cross-entropy and the total."""

    recon: tuple
    ce: float
    lam: float
    total: float = field(init=False)

    def __post_init__(self):
        self.recon = tuple(float(v) for v in self.recon)
        self.ce = float(self.ce)
        self.total = self.lam * sum(self.recon) + self.ce


def _fan_in(name, shape):
    if name.endswith(".bias"):
        return None
    return int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])


def init_params(cfg: PSRNetConfig, seed=0) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and their biases."""
    rng = np.random.default_rng(seed)
    shapes = cfg.parameter_shapes()
    params = {}
    fan = None
    for name, shape in shapes.items():
        f = _fan_in(name, shape)
        if f is not None:
            fan = f
        bound = 1.0 / math.sqrt(fan)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# -- layer primitives ----------------------------------------------------------


# Classifier activations use a (C, H, W, B) layout with the batch innermost.
# Shifted 3x3 windows are then long contiguous runs, the im2col matrix is a
# plain stack of shifted views, and flattening for the dense layer is free.


def _conv3x3_forward(x, w, b):
    """3x3 same-padding convolution of ``x`` (C_in, H, W, B) with ``w`` (C_out, C_in, 3, 3).

    Returns the output (C_out, H, W, B) and the im2col matrix (9*C_in, H*W*B)
    whose rows are ordered (kernel row, kernel col, C_in).
    """
    cin, H, W, B = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.stack([xp[:, i : i + H, j : j + W] for i in range(3) for j in range(3)])
    cols = cols.reshape(9 * cin, H * W * B)
    wmat = w.transpose(0, 2, 3, 1).reshape(w.shape[0], 9 * cin)
    out = wmat @ cols
    out += b[:, None]
    return out.reshape(-1, H, W, B), cols


def _conv3x3_backward(dout, cols, w, need_dx=True):
    cout, H, W, B = dout.shape
    cin = w.shape[1]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
    db = d2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    wmat = w.transpose(0, 2, 3, 1).reshape(cout, 9 * cin)
    dcols = (wmat.T @ d2).reshape(3, 3, cin, H, W, B)
    dxp = np.zeros((cin, H + 2, W + 2, B))
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + H, j : j + W] += dcols[i, j]
    return dxp[:, 1:-1, 1:-1], dw, db


def _maxpool_forward(x):
    """2x2 max-pool, ceil mode, over the spatial axes of (C, H, W, B)."""
    C, H, W, B = x.shape
    H2, W2 = -(-H // 2), -(-W // 2)
    if (H2 * 2, W2 * 2) != (H, W):
        xp = np.full((C, 2 * H2, 2 * W2, B), -np.inf)
        xp[:, :H, :W] = x
    else:
        xp = x
    out = np.maximum(
        np.maximum(xp[:, 0::2, 0::2], xp[:, 0::2, 1::2]), np.maximum(xp[:, 1::2, 0::2], xp[:, 1::2, 1::2])
    )
    return out, xp


def _maxpool_backward(dout, out, xp, x_shape):
    """Route ``dout`` to every element equal to its cell maximum.

    Only used on ReLU outputs: a tie within a cell is then a tie of zeros, whose
    gradient the ReLU mask removes, so splitting ties never changes the result.
    """
    H, W = x_shape[1:3]
    dx = np.empty(xp.shape)
    for a in (0, 1):
        for c in (0, 1):
            dx[:, a::2, c::2] = dout * (xp[:, a::2, c::2] == out)
    return dx[:, :H, :W]


def lag_matrix(windows, n_orders) -> np.ndarray:
    """Zero-left-padded lags: ``out[b, t, j] = p[b, t-1-j]`` (0 when t-1-j < 0)."""
    B, T = windows.shape
    padded = np.concatenate([np.zeros((B, n_orders)), windows], axis=1)
    lags = np.empty((B, T, n_orders))
    for j in range(n_orders):
        lags[:, :, j] = padded[:, n_orders - 1 - j : n_orders - 1 - j + T]
    return lags


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# -- model ---------------------------------------------------------------------


class PSRNet:
    """Parameters plus the forward/backward arithmetic of the network."""

    def __init__(self, config: PSRNetConfig | None = None, params: dict | None = None, seed=0):
        self.config = config or PSRNetConfig()
        self.params = params if params is not None else init_params(self.config, seed)
        shapes = self.config.parameter_shapes()
        if set(self.params) != set(shapes):
            raise ShapeMismatch("parameter names do not match config")
        for name, shape in shapes.items():
            if self.params[name].shape != tuple(shape):
                raise ShapeMismatch(f"{name}: expected {shape}, got {self.params[name].shape}")

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _check_windows(self, windows):
        x = np.asarray(windows, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.window_len:
            raise ShapeMismatch(f"expected windows of length {self.config.window_len}, got shape {x.shape}")
        return x

    # reconstructor
    def reconstruct(self, windows):
        """Latent states and one-step predictions for every order.

        Returns ``(ps, preds, lags)`` where ``ps[k-1]`` has shape (B, T, C_r)
        and ``preds`` has shape (B, n, T).
        """
        x = self._check_windows(windows)
        cfg = self.config
        lags = lag_matrix(x, cfg.n_orders)
        ps, preds = [], []
        for k in range(1, cfg.n_orders + 1):
            p = self.params
            z = lags[:, :, :k] @ p[f"recon{k}.weight"].T + p[f"recon{k}.bias"]
            h = np.tanh(z)
            ps.append(h)
            preds.append(h @ p[f"head{k}.weight"] + p[f"head{k}.bias"][0])
        preds = np.stack(preds, axis=1) if preds else np.zeros((x.shape[0], 0, x.shape[1]))
        return ps, preds, lags

    def phase_space(self, windows, ps=None) -> np.ndarray:
        """Stacked map of shape (B, 1 + n*C_r, T): raw series then each order's states."""
        x = self._check_windows(windows)
        if ps is None:
            ps, _, _ = self.reconstruct(x)
        return assemble_phase_space(x, [h.transpose(0, 2, 1) for h in ps])

    def forward(self, windows):
        """Full forward pass; returns a cache dict consumed by :meth:`backward`."""
        x = self._check_windows(windows)
        p = self.params
        ps, preds, lags = self.reconstruct(x)
        cache = self._classify(assemble_phase_space(x, [h.transpose(0, 2, 1) for h in ps]))
        cache.update({"x": x, "lags": lags, "ps": ps, "preds": preds})
        return cache

    def _classify(self, maps):
        """Classifier branch on maps of shape (B, C, T)."""
        p = self.params
        B = maps.shape[0]
        m = maps.transpose(1, 2, 0)[None]
        a1, cols1 = _conv3x3_forward(m, p["conv1.weight"], p["conv1.bias"])
        r1 = np.maximum(a1, 0.0)
        q1, pp1 = _maxpool_forward(r1) if self.config.pool else (r1, None)
        a2, cols2 = _conv3x3_forward(q1, p["conv2.weight"], p["conv2.bias"])
        r2 = np.maximum(a2, 0.0)
        q2, pp2 = _maxpool_forward(r2) if self.config.pool else (r2, None)
        flat = q2.reshape(-1, B)  # (c, h, w) order per column
        logits = (p["fc.weight"] @ flat).T + p["fc.bias"]
        logp = _log_softmax(logits)
        return {
            "map_shape": m.shape,
            "a1": a1, "cols1": cols1, "r1_shape": r1.shape, "q1": q1, "pp1": pp1,
            "a2": a2, "cols2": cols2, "r2_shape": r2.shape, "q2": q2, "pp2": pp2,
            "flat": flat, "logits": logits, "logp": logp, "probs": np.exp(logp),
        }

    def predict_proba(self, windows, batch_size=256) -> np.ndarray:
        x = self._check_windows(windows)
        out = [np.exp(self.forward(x[i : i + batch_size])["logp"]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.n_classes))

    def loss(self, cache, labels) -> LossBreakdown:
        return joint_loss(cache["preds"], cache["x"], cache["logp"], labels, self.config.lam, log_probs=True)

    def backward(self, cache, labels) -> dict:
        """Exact gradients of the batch-mean joint loss for every parameter."""
        cfg = self.config
        p = self.params
        y = np.asarray(labels, dtype=int)
        x = cache["x"]
        B, T = x.shape
        grads = {}

        dlogits = cache["probs"].copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        grads["fc.weight"] = dlogits.T @ cache["flat"].T
        grads["fc.bias"] = dlogits.sum(axis=0)
        dq2 = (p["fc.weight"].T @ dlogits.T).reshape(cache["q2"].shape)
        dr2 = _maxpool_backward(dq2, cache["q2"], cache["pp2"], cache["r2_shape"]) if cfg.pool else dq2
        da2 = dr2 * (cache["a2"] > 0)
        dq1, grads["conv2.weight"], grads["conv2.bias"] = _conv3x3_backward(da2, cache["cols2"], p["conv2.weight"])
        dr1 = _maxpool_backward(dq1, cache["q1"], cache["pp1"], cache["r1_shape"]) if cfg.pool else dq1
        da1 = dr1 * (cache["a1"] > 0)
        dm, grads["conv1.weight"], grads["conv1.bias"] = _conv3x3_backward(
            da1, cache["cols1"], p["conv1.weight"], need_dx=cfg.n_orders > 0
        )

        rc = cfg.recon_channels
        for k in range(1, cfg.n_orders + 1):
            h = cache["ps"][k - 1]
            dh = dm[0, 1 + (k - 1) * rc : 1 + k * rc].transpose(2, 1, 0).copy()
            resid = cache["preds"][:, k - 1, :] - x
            resid[:, :k] = 0.0
            dpred = cfg.lam * 2.0 * resid / (B * (T - k))
            grads[f"head{k}.weight"] = np.einsum("bt,btr->r", dpred, h)
            grads[f"head{k}.bias"] = np.array([dpred.sum()])
            dh += dpred[:, :, None] * p[f"head{k}.weight"]
            dz = dh * (1.0 - h * h)
            grads[f"recon{k}.weight"] = np.einsum("btr,btk->rk", dz, cache["lags"][:, :, :k])
            grads[f"recon{k}.bias"] = dz.sum(axis=(0, 1))
        return grads

    def loss_and_grads(self, windows, labels):
        cache = self.forward(windows)
        return self.loss(cache, labels), self.backward(cache, labels)

    # persistence
    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["classifier_channels"] = list(self.config.classifier_channels)
        order = list(self.config.parameter_shapes())
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": cfg,
            "parameter_order": order,
            "parameters": [
                {"name": n, "shape": list(self.params[n].shape), "values": self.params[n].ravel().tolist()}
                for n in order
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PSRNet":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a PSRNet checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        cfg = PSRNetConfig(**d["config"])
        params = {
            e["name"]: np.asarray(e["values"], dtype=np.float64).reshape(e["shape"]) for e in d["parameters"]
        }
        return cls(cfg, params)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_checkpoint(self))

    @classmethod
    def load(cls, path) -> "PSRNet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def reconstructor_forward(model: PSRNet, window):
    """Latent maps (n, C_r, T) and one-step predictions (n, T) for one window."""
    ps, preds, _ = model.reconstruct(np.asarray(window, dtype=np.float64)[None, :])
    maps = np.stack([h[0].T for h in ps]) if ps else np.zeros((0, model.config.recon_channels, model.config.window_len))
    return maps, preds[0]


def classifier_forward(model: PSRNet, ps_map) -> np.ndarray:
    """Class probabilities for one phase-space map of shape (1 + n*C_r, T)."""
    m = np.asarray(ps_map, dtype=np.float64)
    want = (model.config.map_channels, model.config.window_len)
    if m.shape != want:
        raise ShapeMismatch(f"expected map of shape {want}, got {m.shape}")
    return model._classify(m[None])["probs"][0]


def dumps_checkpoint(model: PSRNet) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def assemble_phase_space(windows, ps_maps) -> np.ndarray:
    """Concatenate the raw series (channel 0) with each order's latent map.

    ``windows`` is (B, T); each entry of ``ps_maps`` is (B, C_r, T).
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    parts = [x[:, None, :]]
    for m in ps_maps:
        if m.ndim != 3 or m.shape[0] != x.shape[0] or m.shape[2] != x.shape[1]:
            raise ShapeMismatch(f"phase-space map shape {m.shape} incompatible with windows {x.shape}")
        parts.append(m)
    return np.concatenate(parts, axis=1)


def joint_loss(preds, windows, probs, labels, lam, log_probs=False) -> LossBreakdown:
    """Weighted reconstruction MSE plus cross-entropy, averaged over the batch.

    The order-k MSE only counts time steps with k real lags (t >= k).
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim == 2:
        preds = preds[None]
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    recon = []
    for k in range(1, preds.shape[1] + 1):
        d = preds[:, k - 1, k:] - x[:, k:]
        recon.append(float(np.mean(d * d)))
    pr = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    picked = pr[np.arange(len(y)), y]
    ce = float(-np.mean(picked)) if log_probs else float(-np.mean(np.log(picked)))
    return LossBreakdown(tuple(recon), ce, lam)


class Adam:
    """Adam with bias correction over a dict of numpy parameters (updated in place)."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params: dict, grads: dict, state: Adam | None = None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; creates the optimizer state on first use. Returns ``(params, state)``."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    return state.step(params, grads), state
