"""Small time-conditioned MLPs with hand-written backprop and AdamW.

The same network class plays every role in distillation: teacher, fake
score model and generator experts. Inputs are x concatenated with sinusoidal
features of t; hidden layers use SiLU; the output layer is linear.

Weights are stored as ``(fan_in, fan_out)`` so a layer computes
``h @ W + b`` on a ``(batch, fan_in)`` input.
"""

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import kernels

PREDICTION_KINDS = ("velocity", "sample")
TIME_FREQ_RANGE = (1.0, 30.0)

CKPT_MAGIC = b"PDMD"
CKPT_VERSION = 1


def time_features(t, n_features):
    """sin/cos features of t at geometric frequencies spanning TIME_FREQ_RANGE."""
    if n_features % 2:
        raise ValueError("number of time features must be even")
    freqs = np.geomspace(*TIME_FREQ_RANGE, n_features // 2)
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass
class TimeConditionedNet:
    weights: list
    biases: list
    data_dim: int
    n_time_features: int = 16
    prediction_kind: str = "velocity"

    def __post_init__(self):
        if self.prediction_kind not in PREDICTION_KINDS:
            raise ValueError(f"prediction_kind must be one of {PREDICTION_KINDS}")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")

    @classmethod
    def create(cls, data_dim=1, hidden=256, depth=3, n_time_features=16,
               prediction_kind="velocity", rng=None, dtype=np.float64):
        """Fresh network with ``depth`` hidden layers of width ``hidden``.

        Weights are drawn N(0, 1/fan_in); all biases start at zero. ``dtype``
        (float64 or float32) fixes the precision of parameters and compute.
        """
        rng = np.random.default_rng(rng)
        dims = [data_dim + n_time_features] + [hidden] * depth + [data_dim]
        weights = [(rng.standard_normal((i, o)) / np.sqrt(i)).astype(dtype)
                   for i, o in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(o, dtype=dtype) for o in dims[1:]]
        return cls(weights, biases, data_dim, n_time_features, prediction_kind)

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def copy(self):
        return TimeConditionedNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.data_dim,
            self.n_time_features,
            self.prediction_kind,
        )

    def astype(self, dtype):
        return TimeConditionedNet(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.data_dim,
            self.n_time_features,
            self.prediction_kind,
        )

    def load_params_from(self, other):
        if other.dims != self.dims:
            raise ValueError(f"architecture mismatch: {other.dims} vs {self.dims}")
        for mine, theirs in zip(self.params, other.params):
            mine[...] = theirs

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ValueError(f"expected x of shape (n, {self.data_dim}), got {x.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        h = np.concatenate([x, time_features(t, self.n_time_features)], axis=1)
        return h.astype(self.dtype, copy=False)

    def forward_cached(self, x, t):
        h = self._inputs(x, t)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i == last:
                cache.append((h, None, None))
                return z, cache
            a, s = kernels.silu_forward(z)
            cache.append((h, z, s))
            h = a

    def forward(self, x, t):
        return self.forward_cached(x, t)[0]

    __call__ = forward

    def backward(self, x, t, upstream, cache=None):
        """Reverse-mode gradients of sum(upstream * forward(x, t)).

        Returns (param_grads, input_grad) with param_grads ordered like
        ``params`` and input_grad shaped like x.
        """
        if cache is None:
            _, cache = self.forward_cached(x, t)
        delta = np.asarray(upstream, dtype=self.dtype)
        if delta.shape != (cache[0][0].shape[0], self.data_dim):
            raise ValueError(f"upstream has shape {delta.shape}")
        grads = []
        for i in reversed(range(len(self.weights))):
            h, z, s = cache[i]
            if z is not None:
                delta = kernels.silu_backward(z, s, delta)
            grads.append(delta.sum(axis=0))
            grads.append(h.T @ delta)
            delta = delta @ self.weights[i].T
        grads.reverse()
        return grads, delta[:, : self.data_dim].astype(np.float64)


@dataclass
class AdamState:
    """AdamW moments and hyperparameters for one network."""

    lr: float = 1e-3
    betas: tuple = (0.0, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state, params, grads):
    """AdamW with bias correction and decoupled weight decay, in place.

    Raises FloatingPointError (leaving params untouched) if any gradient
    entry is not finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"grad {i} has shape {g.shape}, param has {p.shape}")
        bad = np.count_nonzero(~np.isfinite(g))
        if bad:
            raise FloatingPointError(
                f"non-finite gradient at optimizer step {state.step + 1}: "
                f"param {i} shape {p.shape} has {bad} bad entries"
            )
    state.step += 1
    b1, b2 = state.betas
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adamw_update(p, g, m, v, state.lr, b1, b2, state.eps, state.weight_decay, state.step)
    return params


def grad_check(net, x, t, n_coords=256, h=1e-4, rng=0):
    """Worst relative error of backward against central differences.

    Checks ``n_coords`` random parameter coordinates plus every input
    coordinate of the loss <u, forward(x, t)> for a fixed random u. The
    relative error floors its denominator at 1e-3 of the largest gradient
    magnitude so that near-zero coordinates do not dominate.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    u = rng.standard_normal((x.shape[0], net.data_dim))
    grads, dx = net.backward(x, t, u)

    def loss(xx=x):
        return float(np.sum(u * net.forward(xx, t)))

    params = net.params
    sizes = np.array([p.size for p in params])
    flat_idx = rng.choice(sizes.sum(), size=min(n_coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    analytic, numeric = [], []
    for k in flat_idx:
        which = np.searchsorted(offsets, k, side="right") - 1
        p = params[which].reshape(-1)
        j = k - offsets[which]
        orig = p[j]
        p[j] = orig + h
        up = loss()
        p[j] = orig - h
        down = loss()
        p[j] = orig
        analytic.append(grads[which].reshape(-1)[j])
        numeric.append((up - down) / (2 * h))
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        analytic.append(dx[idx])
        numeric.append((loss(xp) - loss(xm)) / (2 * h))
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    floor = 1e-3 * max(np.max(np.abs(analytic)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def save_checkpoint(net, path):
    """Write ``net`` atomically in the PDMD binary format.

    Layout (little endian): b"PDMD", u32 version, u32 prediction kind
    (0 velocity, 1 sample), u32 number of dims, u32 dims..., then float64
    values layer by layer: weights row-major (fan_in, fan_out), then biases.
    """
    dims = net.dims
    header = CKPT_MAGIC + struct.pack(
        f"<III{len(dims)}I",
        CKPT_VERSION,
        PREDICTION_KINDS.index(net.prediction_kind),
        len(dims),
        *dims,
    )
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a PDMD checkpoint")
    version, kind, n_dims = struct.unpack_from("<III", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if kind >= len(PREDICTION_KINDS):
        raise ValueError(f"{path}: unknown prediction kind {kind}")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, 16))
    offset = 16 + 4 * n_dims
    values = np.frombuffer(blob, dtype="<f8", offset=offset).astype(np.float64)
    expected = sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {values.size}")
    weights, biases, pos = [], [], 0
    for i, o in zip(dims[:-1], dims[1:]):
        weights.append(values[pos:pos + i * o].reshape(i, o).copy())
        pos += i * o
        biases.append(values[pos:pos + o].copy())
        pos += o
    data_dim = dims[-1]
    return TimeConditionedNet(weights, biases, data_dim, dims[0] - data_dim, PREDICTION_KINDS[kind])
