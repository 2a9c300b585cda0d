"""A small convolutional Q-network with hand-written backprop and Adam.

Parameters live in one flat float64 vector; each layer holds views into it.
Only the fixed layer set (valid conv, ReLU, flatten, fully connected) exists.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from pqclab import kernels
from pqclab.errors import FormatError, ShapeMismatch, UnknownLossKind

DEFAULT_LAYERS = ("conv:8:3:2", "relu", "conv:16:3:2", "relu", "flatten", "fc:64", "relu")
FINAL_WEIGHT_SCALE = 1e-3


@dataclass(frozen=True)
class NetSpec:
    input_shape: tuple[int, int, int] = (2, 32, 32)
    layers: tuple[str, ...] = DEFAULT_LAYERS
    n_outputs: int = 6

    def to_text(self) -> str:
        c, h, w = self.input_shape
        return f"{c}x{h}x{w}|{','.join(self.layers)}|{self.n_outputs}"

    @classmethod
    def from_text(cls, text: str) -> "NetSpec":
        shape, layers, n_out = text.split("|")
        c, h, w = (int(v) for v in shape.split("x"))
        return cls((c, h, w), tuple(x for x in layers.split(",") if x), int(n_out))


class _Conv:
    """Valid convolution on channels-last activations (B, H, W, C)."""

    def __init__(self, in_shape, out_ch, k, stride, first=False):
        h, w, c = in_shape
        if h < k or w < k:
            raise ShapeMismatch(f"conv kernel {k} larger than input {h}x{w}")
        self.k, self.stride, self.in_shape, self.first = k, stride, in_shape, first
        self.out_shape = ((h - k) // stride + 1, (w - k) // stride + 1, out_ch)
        self.w_shape = (out_ch, k * k * c)
        self.n_params = out_ch * c * k * k + out_ch
        self.fan_in = c * k * k

    def bind(self, theta):
        n_w = self.w_shape[0] * self.w_shape[1]
        self.W = theta[:n_w].reshape(self.w_shape)
        self.b = theta[n_w:]

    def forward(self, x, keep):
        b = x.shape[0]
        cols = kernels.im2col(x, self.k, self.stride)
        if keep:
            self._cols, self._b = cols, b
        return (cols @ self.W.T + self.b).reshape((b,) + self.out_shape)

    def backward(self, dy, grad):
        dflat = dy.reshape(-1, self.out_shape[2])
        n_w = self.w_shape[0] * self.w_shape[1]
        grad[:n_w] = (dflat.T @ self._cols).ravel()
        grad[n_w:] = dflat.sum(axis=0)
        if self.first:
            return None
        return kernels.col2im(dflat @ self.W, (self._b,) + self.in_shape, self.k, self.stride)


class _Dense:
    def __init__(self, in_shape, width):
        if len(in_shape) != 1:
            raise ShapeMismatch("fully-connected layer needs flat input; add 'flatten'")
        self.in_shape = in_shape
        self.out_shape = (width,)
        self.w_shape = (width, in_shape[0])
        self.n_params = width * in_shape[0] + width
        self.fan_in = in_shape[0]

    def bind(self, theta):
        n_w = self.w_shape[0] * self.w_shape[1]
        self.W = theta[:n_w].reshape(self.w_shape)
        self.b = theta[n_w:]

    def forward(self, x, keep):
        if keep:
            self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy, grad):
        n_w = self.w_shape[0] * self.w_shape[1]
        grad[:n_w] = (dy.T @ self._x).ravel()
        grad[n_w:] = dy.sum(axis=0)
        return dy @ self.W


class _Relu:
    n_params = 0

    def __init__(self, in_shape):
        self.in_shape = self.out_shape = in_shape

    def forward(self, x, keep):
        if keep:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy, grad):
        return dy * self._mask


class _Flatten:
    n_params = 0

    def __init__(self, in_shape):
        self.in_shape = in_shape
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, keep):
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, grad):
        return dy.reshape((dy.shape[0],) + tuple(self.in_shape))


def _build_layers(spec: NetSpec):
    c, h, w = spec.input_shape
    shape = (h, w, c)
    layers = []
    for tok in spec.layers:
        kind, *args = tok.split(":")
        if kind == "conv":
            out_ch, k, stride = (int(a) for a in args)
            layer = _Conv(shape, out_ch, k, stride, first=not layers)
        elif kind == "fc":
            if len(shape) != 1:
                layers.append(_Flatten(shape))
                shape = layers[-1].out_shape
            layer = _Dense(shape, int(args[0]))
        elif kind == "relu":
            layer = _Relu(shape)
        elif kind == "flatten":
            layer = _Flatten(shape)
        else:
            raise ShapeMismatch(f"unknown layer token {tok!r}")
        layers.append(layer)
        shape = layer.out_shape
    if len(shape) != 1:
        layers.append(_Flatten(shape))
        shape = layers[-1].out_shape
    layers.append(_Dense(shape, spec.n_outputs))
    return layers


class QNetwork:
    """Map from observations (B, C, H, W) to per-action values (B, n_outputs)."""

    def __init__(self, spec: NetSpec, params: np.ndarray | None = None, seed: int = 0):
        self.spec = spec
        self.layers = _build_layers(spec)
        self.offsets = np.cumsum([0] + [l.n_params for l in self.layers])
        n = int(self.offsets[-1])
        if params is None:
            params = self._init_params(n, np.random.default_rng(seed))
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got {params.shape}")
        self.params = params.copy()
        self._bind()

    def _bind(self):
        for layer, lo, hi in zip(self.layers, self.offsets[:-1], self.offsets[1:]):
            if layer.n_params:
                layer.bind(self.params[lo:hi])

    def _init_params(self, n, rng):
        theta = np.zeros(n)
        last = len(self.layers) - 1
        for i, (layer, lo) in enumerate(zip(self.layers, self.offsets[:-1])):
            if not layer.n_params:
                continue
            n_w = layer.w_shape[0] * layer.w_shape[1]
            if i == last:
                theta[lo:lo + n_w] = rng.uniform(-FINAL_WEIGHT_SCALE, FINAL_WEIGHT_SCALE, n_w)
            else:
                bound = np.sqrt(6.0 / layer.fan_in)
                theta[lo:lo + n_w] = rng.uniform(-bound, bound, n_w)
        return theta

    @property
    def n_params(self) -> int:
        return len(self.params)

    def set_params(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise ShapeMismatch("parameter vector length mismatch")
        self.params[:] = params

    def copy(self) -> "QNetwork":
        return QNetwork(self.spec, self.params)

    def forward(self, obs, keep: bool = False) -> np.ndarray:
        x = np.asarray(obs)
        if x.ndim == 3:
            x = x[None]
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeMismatch(f"observation shape {x.shape[1:]} != {self.spec.input_shape}")
        x = x.astype(np.float64, copy=False).transpose(0, 2, 3, 1)
        for layer in self.layers:
            x = layer.forward(x, keep)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Gradient of sum(dout * output) w.r.t. parameters; needs ``forward(keep=True)``."""
        grad = np.zeros(self.n_params)
        dy = dout
        for layer, lo, hi in zip(self.layers[::-1], self.offsets[-2::-1], self.offsets[:0:-1]):
            dy = layer.backward(dy, grad[lo:hi])
            if dy is None:
                break
        return grad


def forward(net: QNetwork, obs) -> np.ndarray:
    return net.forward(obs)


# ------------------------------------------------------------------- losses

class LossKind(str, enum.Enum):
    HUBER = "HuberValue"
    CROSS_ENTROPY = "CrossEntropyPolicy"
    LARGE_MARGIN = "LargeMargin"
    COMPOSITE = "Composite"


@dataclass
class LossTargets:
    """Per-row supervision.

    ``values``/``mask`` drive the Huber value term (one or more supervised
    actions per row); ``expert`` holds action labels for the policy and
    margin terms.
    """
    values: np.ndarray | None = None
    mask: np.ndarray | None = None
    expert: np.ndarray | None = None


def softmax(q: np.ndarray) -> np.ndarray:
    z = q - q.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _huber_terms(q, t: LossTargets, delta):
    if t.values is None or t.mask is None:
        raise ShapeMismatch("HuberValue needs values and mask")
    if t.values.shape != q.shape or t.mask.shape != q.shape:
        raise ShapeMismatch(f"value targets {t.values.shape} vs outputs {q.shape}")
    mask = t.mask.astype(bool)
    r = np.where(mask, q - np.where(mask, t.values, 0.0), 0.0)
    a = np.abs(r)
    h = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    n = np.maximum(mask.sum(axis=1), 1)
    per = h.sum(axis=1) / n
    dq = np.clip(r, -delta, delta) / n[:, None]
    return per, dq


def _expert(q, t: LossTargets):
    if t.expert is None:
        raise ShapeMismatch("expert labels required")
    e = np.asarray(t.expert, dtype=np.int64)
    if e.shape != (q.shape[0],) or (e < 0).any() or (e >= q.shape[1]).any():
        raise ShapeMismatch("expert labels must be one valid action per row")
    return e


def _ce_terms(q, t: LossTargets):
    e = _expert(q, t)
    rows = np.arange(len(q))
    z = q - q.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per = -logp[rows, e]
    dq = np.exp(logp)
    dq[rows, e] -= 1.0
    return per, dq


def _margin_terms(q, t: LossTargets, margin):
    e = _expert(q, t)
    rows = np.arange(len(q))
    aug = q + margin
    aug[rows, e] = q[rows, e]
    best = aug.argmax(axis=1)
    per = aug[rows, best] - q[rows, e]
    dq = np.zeros_like(q)
    dq[rows, best] += 1.0
    dq[rows, e] -= 1.0
    return per, dq


COMPOSITE_TERMS = ("huber", "cross_entropy", "margin")


def loss_terms(q, targets: LossTargets, kind, *, terms=None, margin=0.2, delta=1.0):
    """Per-row loss and its derivative w.r.t. the network outputs ``q``."""
    kind = LossKind(kind) if not isinstance(kind, LossKind) else kind
    if kind is LossKind.HUBER:
        return _huber_terms(q, targets, delta)
    if kind is LossKind.CROSS_ENTROPY:
        return _ce_terms(q, targets)
    if kind is LossKind.LARGE_MARGIN:
        return _margin_terms(q, targets, margin)
    if not terms:
        raise UnknownLossKind("Composite loss needs term weights")
    per = np.zeros(len(q))
    dq = np.zeros_like(q)
    for name, w in terms.items():
        if name == "huber":
            p, d = _huber_terms(q, targets, delta)
        elif name == "cross_entropy":
            p, d = _ce_terms(q, targets)
        elif name == "margin":
            p, d = _margin_terms(q, targets, margin)
        else:
            raise UnknownLossKind(f"unknown composite term {name!r}")
        if w == 0:
            continue
        per = per + w * p
        dq = dq + w * d
    return per, dq


def loss_and_grad(net: QNetwork, obs, targets: LossTargets, kind, *, terms=None,
                  is_weights=None, margin: float = 0.2, delta: float = 1.0):
    """Importance-weighted mean loss over rows, its exact gradient, and per-row losses."""
    try:
        kind = LossKind(kind)
    except ValueError as exc:
        raise UnknownLossKind(str(kind)) from exc
    q = net.forward(obs, keep=True)
    per, dq = loss_terms(q, targets, kind, terms=terms, margin=margin, delta=delta)
    b = len(q)
    w = np.ones(b) if is_weights is None else np.asarray(is_weights, dtype=np.float64)
    if w.shape != (b,):
        raise ShapeMismatch("is_weights must have one entry per row")
    loss = float(np.dot(w, per) / b)
    grad = net.backward(dq * (w / b)[:, None])
    return loss, grad, per


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimState:
    n: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n)
        if self.v is None:
            self.v = np.zeros(self.n)
        if self.m.shape != (self.n,) or self.v.shape != (self.n,):
            raise ShapeMismatch("moment vectors must match parameter count")


def opt_step(net: QNetwork, state: OptimState, grad: np.ndarray) -> QNetwork:
    """In-place Adam update with bias correction."""
    if grad.shape != net.params.shape:
        raise ShapeMismatch("gradient length mismatch")
    state.t += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grad * grad
    mhat = state.m / (1 - state.beta1 ** state.t)
    vhat = state.v / (1 - state.beta2 ** state.t)
    net.params -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return net


# --------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"PQCCKPT1"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sII")


def checkpoint_to_bytes(net: QNetwork, state: OptimState | None = None, extra=None) -> bytes:
    header = {
        "spec": net.spec.to_text(),
        "n_params": net.n_params,
        "optim": None if state is None else
        {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
         "t": state.t},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)), blob,
             net.params.astype("<f8").tobytes()]
    if state is not None:
        parts += [state.m.astype("<f8").tobytes(), state.v.astype("<f8").tobytes()]
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes, expected_spec: NetSpec | None = None):
    """Returns ``(net, optim_state_or_None, extra)``."""
    if len(data) < _CKPT_HEAD.size:
        raise FormatError("checkpoint truncated")
    magic, ver, hlen = _CKPT_HEAD.unpack(data[:_CKPT_HEAD.size])
    if magic != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    if ver != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {ver}")
    try:
        header = json.loads(data[_CKPT_HEAD.size:_CKPT_HEAD.size + hlen])
        spec = NetSpec.from_text(header["spec"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    if expected_spec is not None and spec != expected_spec:
        raise FormatError(f"checkpoint net spec {spec.to_text()} != {expected_spec.to_text()}")
    n = int(header["n_params"])
    off = _CKPT_HEAD.size + hlen
    n_vec = 3 if header["optim"] is not None else 1
    if len(data) != off + 8 * n * n_vec:
        raise FormatError("checkpoint payload size mismatch")
    vecs = [np.frombuffer(data, "<f8", n, off + 8 * n * i).astype(np.float64) for i in range(n_vec)]
    try:
        net = QNetwork(spec, vecs[0])
    except ShapeMismatch as exc:
        raise FormatError(str(exc)) from exc
    state = None
    if header["optim"] is not None:
        o = header["optim"]
        state = OptimState(n, lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                           t=o["t"], m=vecs[1], v=vecs[2])
    return net, state, header["extra"]


def save_checkpoint(path, net, state=None, extra=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(net, state, extra))


def load_checkpoint(path, expected_spec: NetSpec | None = None):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read(), expected_spec)


# ------------------------------------------------------------ gradient check

def numerical_grad(f, theta: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``theta`` (restored afterwards)."""
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        old = theta[i]
        theta[i] = old + h
        fp = f()
        theta[i] = old - h
        fm = f()
        theta[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor: float = 1e-4) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(net: QNetwork, obs, targets: LossTargets, kind, h: float = 1e-4, **kw) -> float:
    """Max relative error between backprop and central differences."""
    _, grad, _ = loss_and_grad(net, obs, targets, kind, **kw)

    def f():
        q = net.forward(obs)
        per, _ = loss_terms(q, targets, LossKind(kind), terms=kw.get("terms"),
                            margin=kw.get("margin", 0.2), delta=kw.get("delta", 1.0))
        w = kw.get("is_weights")
        w = np.ones(len(q)) if w is None else np.asarray(w)
        return float(np.dot(w, per) / len(q))

    num = numerical_grad(f, net.params, h)
    return max_relative_error(grad, num)
