"""Tiny event-frame CNN: layer graph, manual forward/backward, training.

The backbone is three pairs of 3x3 same-padding convolutions with ReLU,
one 2x2 floor max-pool per pair, then two dense layers.  The head is
either regression (2 outputs, pupil center normalized to [0,1] per axis)
or classification over a 24x24 grid of ROI cells plus a not-visible class
(577 outputs).

Backward passes are hand-written for the five layer kinds (conv, relu,
pool, flatten, dense); training uses Adam with a fixed shuffle and
reduction order so identical seeds give bitwise-identical weights.

Float checkpoint format: magic ``EETF``, u32 JSON descriptor length, the
descriptor, then per parameterized layer little-endian float64 weights
followed by biases, row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, FormatError, InvariantError

# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class GridSpec:
    """24x24 grid over the ROI plus a reserved not-visible class."""

    nx: int = 24
    ny: int = 24
    roi_width: int = 157
    roi_height: int = 90

    @property
    def n_classes(self) -> int:
        return self.nx * self.ny + 1

    @property
    def invisible_class(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class LayerSpec:
    kind: str            # conv | relu | pool | flatten | dense
    in_shape: tuple
    out_shape: tuple


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple = (1, 45, 78)          # (channels, height, width)
    conv_channels: tuple = (8, 16, 32, 32, 64, 64)
    fc1: int = 64
    head: str = "regression"                  # regression | classification
    grid: GridSpec = field(default_factory=GridSpec)

    @property
    def out_dim(self) -> int:
        if self.head == "regression":
            return 2
        if self.head == "classification":
            return self.grid.n_classes
        raise DataError(f"unknown head {self.head!r}")


def canonical_spec(head: str = "regression", fc1: int = 64) -> NetworkSpec:
    """The default network: conv widths (8,16,32,32,64,64), fc1 options
    64/128/256, on a 1x45x78 input."""
    if fc1 not in (64, 128, 256):
        raise DataError(f"fc1 width {fc1} not in (64, 128, 256)")
    return NetworkSpec(fc1=fc1, head=head)


def build_layers(spec: NetworkSpec) -> list[LayerSpec]:
    if len(spec.conv_channels) != 6:
        raise DataError("expected 6 conv channel widths (three pairs)")
    layers = []
    c, h, w = spec.input_shape
    for pair in range(3):
        for step in range(2):
            oc = spec.conv_channels[2 * pair + step]
            layers.append(LayerSpec("conv", (c, h, w), (oc, h, w)))
            layers.append(LayerSpec("relu", (oc, h, w), (oc, h, w)))
            c = oc
        layers.append(LayerSpec("pool", (c, h, w), (c, h // 2, w // 2)))
        h, w = h // 2, w // 2
    flat = c * h * w
    layers.append(LayerSpec("flatten", (c, h, w), (flat,)))
    layers.append(LayerSpec("dense", (flat,), (spec.fc1,)))
    layers.append(LayerSpec("relu", (spec.fc1,), (spec.fc1,)))
    layers.append(LayerSpec("dense", (spec.fc1,), (spec.out_dim,)))
    return layers


def param_layer_indices(spec: NetworkSpec) -> list[int]:
    return [i for i, l in enumerate(build_layers(spec)) if l.kind in ("conv", "dense")]


def param_counts(spec: NetworkSpec) -> list[int]:
    """Weights + biases per parameterized layer, in execution order."""
    counts = []
    for layer in build_layers(spec):
        if layer.kind == "conv":
            ic, oc = layer.in_shape[0], layer.out_shape[0]
            counts.append(9 * ic * oc + oc)
        elif layer.kind == "dense":
            counts.append(layer.in_shape[0] * layer.out_shape[0] + layer.out_shape[0])
    return counts


def init_weights(spec: NetworkSpec, seed: int = 0, dtype=np.float64) -> list:
    """He-normal init; entry is (W, b) for conv/dense layers, else None."""
    rng = np.random.default_rng(seed)
    weights = []
    for layer in build_layers(spec):
        if layer.kind == "conv":
            ic, oc = layer.in_shape[0], layer.out_shape[0]
            fan_in = 9 * ic
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (oc, ic, 3, 3))
            weights.append((W.astype(dtype), np.zeros(oc, dtype=dtype)))
        elif layer.kind == "dense":
            fan_in, out = layer.in_shape[0], layer.out_shape[0]
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out, fan_in))
            weights.append((W.astype(dtype), np.zeros(out, dtype=dtype)))
        else:
            weights.append(None)
    return weights


# ---------------------------------------------------------------------------
# layer primitives (batched, dtype-preserving)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))          # (N,C,H,W,3,3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv_forward(x, W, b):
    n, c, h, w = x.shape
    oc = W.shape[0]
    cols = _im2col(x)
    y = cols @ W.reshape(oc, -1).T + b
    return y.reshape(n, h, w, oc).transpose(0, 3, 1, 2)


def conv_backward(dy, x, W):
    n, c, h, w = x.shape
    oc = W.shape[0]
    dym = dy.transpose(0, 2, 3, 1).reshape(-1, oc)
    cols = _im2col(x)
    dW = (dym.T @ cols).reshape(W.shape)
    db = dym.sum(axis=0)
    dcols = (dym @ W.reshape(oc, -1)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dy.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dW, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def pool_forward(x):
    """2x2 stride-2 max pool with floor semantics; returns (y, argmax)."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :, :h2 * 2, :w2 * 2].reshape(n, c, h2, 2, w2, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = np.argmax(v, axis=-1)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return y, idx


def pool_backward(dy, idx, in_shape):
    n, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    dv = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dv, idx[..., None], dy[..., None], axis=-1)
    dv = dv.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    dx[:, :, :h2 * 2, :w2 * 2] = dv.reshape(n, c, h2 * 2, w2 * 2)
    return dx


def dense_forward(x, W, b):
    return x @ W.T + b


def dense_backward(dy, x, W):
    return dy @ W, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------------------
# network forward/backward


def forward(spec: NetworkSpec, weights: list, x: np.ndarray,
            want_cache: bool = False):
    """Run the float forward pass on a batch (N, C, H, W).

    With ``want_cache`` the per-layer inputs (pre-activations for ReLU,
    pool argmax indices) are retained for backward().
    """
    layers = build_layers(spec)
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise DataError(f"input shape {x.shape[1:]} != spec {spec.input_shape}")
    cache = [] if want_cache else None
    for i, layer in enumerate(layers):
        if layer.kind == "conv":
            if want_cache:
                cache.append(("conv", x))
            x = conv_forward(x, *weights[i])
        elif layer.kind == "relu":
            if want_cache:
                cache.append(("relu", x))
            x = relu_forward(x)
        elif layer.kind == "pool":
            y, idx = pool_forward(x)
            if want_cache:
                cache.append(("pool", (idx, x.shape)))
            x = y
        elif layer.kind == "flatten":
            if want_cache:
                cache.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "dense":
            if want_cache:
                cache.append(("dense", x))
            x = dense_forward(x, *weights[i])
    return (x, cache) if want_cache else x


def backward(spec: NetworkSpec, weights: list, cache: list,
             output_grad: np.ndarray) -> list:
    """Gradients for every weight and bias, mirroring forward()."""
    layers = build_layers(spec)
    if cache is None or len(cache) != len(layers):
        raise DataError("backward needs the cache from a matching forward")
    grads = [None] * len(layers)
    dy = output_grad
    for i in range(len(layers) - 1, -1, -1):
        kind, saved = cache[i]
        if kind != layers[i].kind:
            raise InvariantError("cache does not match layer sequence")
        if kind == "conv":
            dy, dW, db = conv_backward(dy, saved, weights[i][0])
            grads[i] = (dW, db)
        elif kind == "relu":
            dy = relu_backward(dy, saved)
        elif kind == "pool":
            idx, in_shape = saved
            dy = pool_backward(dy, idx, in_shape)
        elif kind == "flatten":
            dy = dy.reshape(saved)
        elif kind == "dense":
            dy, dW, db = dense_backward(dy, saved, weights[i][0])
            grads[i] = (dW, db)
    return grads


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over normalized coordinates; returns (value, grad)."""
    diff = pred - target
    value = float(np.mean(diff * diff))
    return value, (2.0 / diff.size) * diff


def cross_entropy_loss(logits: np.ndarray, classes: np.ndarray):
    """Softmax cross-entropy; returns (value, grad wrt logits)."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    value = float(np.mean(log_z - shifted[np.arange(n), classes]))
    probs = np.exp(shifted) / np.exp(log_z)[:, None]
    probs[np.arange(n), classes] -= 1.0
    return value, probs / n


def loss(head: str, output: np.ndarray, target: np.ndarray):
    if head == "regression":
        return mse_loss(output, target)
    if head == "classification":
        return cross_entropy_loss(output, target)
    raise DataError(f"unknown head {head!r}")


# ---------------------------------------------------------------------------
# grid/label conversion


def label_to_cell(x: float, y: float, visible: bool, grid: GridSpec) -> int:
    if not visible:
        return grid.invisible_class
    if not (0 <= x < grid.roi_width and 0 <= y < grid.roi_height):
        raise DataError(f"visible label ({x},{y}) outside ROI")
    cx = min(grid.nx - 1, int(x * grid.nx // grid.roi_width))
    cy = min(grid.ny - 1, int(y * grid.ny // grid.roi_height))
    return cy * grid.nx + cx


def cell_to_center(index: int, grid: GridSpec):
    """Center of a grid cell in ROI pixels; None for the not-visible class."""
    if not 0 <= index <= grid.invisible_class:
        raise DataError(f"class index {index} out of range")
    if index == grid.invisible_class:
        return None
    cy, cx = divmod(index, grid.nx)
    return ((cx + 0.5) * grid.roi_width / grid.nx,
            (cy + 0.5) * grid.roi_height / grid.ny)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    # 0.99 keeps the second-moment memory short enough that the large
    # first-epoch gradients do not suppress the step size for the rest
    # of a short training run
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    train_users: tuple = ()
    val_users: tuple = ()


@dataclass
class TrainData:
    """Dense training arrays with per-sample user ids for split auditing."""

    X: np.ndarray        # (N, C, H, W) float
    targets: np.ndarray  # (N, 2) normalized coords, or (N,) class ids
    users: np.ndarray    # (N,) int


class Adam:
    def __init__(self, weights, config: TrainConfig):
        self.cfg = config
        self.step = 0
        self.m = [None if w is None else (np.zeros_like(w[0]), np.zeros_like(w[1]))
                  for w in weights]
        self.v = [None if w is None else (np.zeros_like(w[0]), np.zeros_like(w[1]))
                  for w in weights]

    def update(self, weights, grads):
        c = self.cfg
        self.step += 1
        bc1 = 1.0 - c.beta1 ** self.step
        bc2 = 1.0 - c.beta2 ** self.step
        for i, g in enumerate(grads):
            if g is None:
                continue
            W, b = weights[i]
            new = []
            for j, (param, grad) in enumerate(((W, g[0]), (b, g[1]))):
                m = self.m[i][j]
                v = self.v[i][j]
                m *= c.beta1
                m += (1 - c.beta1) * grad
                v *= c.beta2
                v += (1 - c.beta2) * grad * grad
                new.append(param - c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps))
            weights[i] = (new[0], new[1])


def _batch_indices(idx, batch, rng):
    perm = rng.permutation(idx)
    return [perm[i:i + batch] for i in range(0, len(perm), batch)]


def train(spec: NetworkSpec, data: TrainData, config: TrainConfig,
          init: list | None = None):
    """Train with Adam; deterministic given config.seed.

    Returns (weights, log) where the log records per-epoch train/validation
    loss and the set of users that contributed gradient batches.
    """
    if config.batch < 1:
        raise DataError("batch must be >= 1")
    if set(config.train_users) & set(config.val_users):
        raise DataError("train/validation user splits overlap")
    if config.train_users:
        train_idx = np.flatnonzero(np.isin(data.users, config.train_users))
    else:
        train_idx = np.arange(len(data.X))
    if len(train_idx) == 0:
        raise DataError("empty training split")
    val_idx = np.flatnonzero(np.isin(data.users, config.val_users))

    # train in float64: the raw int8-code inputs produce activations large
    # enough that float32 gradient accumulation noise stalls convergence
    weights = [None if w is None else (w[0].astype(np.float64),
                                       w[1].astype(np.float64))
               for w in (init if init is not None else init_weights(spec, config.seed))]
    if data.X.dtype != np.float64:
        data = TrainData(data.X.astype(np.float64), data.targets, data.users)
    opt = Adam(weights, config)
    rng = np.random.default_rng(config.seed)
    log = []
    for epoch in range(config.epochs):
        losses = []
        seen_users = set()
        for batch_idx in _batch_indices(train_idx, config.batch, rng):
            seen_users.update(int(u) for u in np.unique(data.users[batch_idx]))
            out, cache = forward(spec, weights, data.X[batch_idx], want_cache=True)
            value, grad = loss(spec.head, out, data.targets[batch_idx])
            grads = backward(spec, weights, cache, grad)
            opt.update(weights, grads)
            losses.append(value)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                 "batch_users": sorted(seen_users)}
        if len(val_idx):
            out = forward(spec, weights, data.X[val_idx])
            entry["val_loss"] = loss(spec.head, out, data.targets[val_idx])[0]
        log.append(entry)
    return weights, log


# ---------------------------------------------------------------------------
# float checkpoint I/O

_EETF_MAGIC = b"EETF"


def _spec_descriptor(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "conv_channels": list(spec.conv_channels),
        "fc1": spec.fc1,
        "head": spec.head,
        "grid": {"nx": spec.grid.nx, "ny": spec.grid.ny,
                 "roi_width": spec.grid.roi_width,
                 "roi_height": spec.grid.roi_height},
    }


def spec_from_descriptor(desc: dict) -> NetworkSpec:
    grid = GridSpec(**desc["grid"])
    return NetworkSpec(tuple(desc["input_shape"]), tuple(desc["conv_channels"]),
                       desc["fc1"], desc["head"], grid)


def save_checkpoint(spec: NetworkSpec, weights: list, path) -> None:
    desc = json.dumps(_spec_descriptor(spec), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_EETF_MAGIC)
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        for w in weights:
            if w is None:
                continue
            fh.write(np.ascontiguousarray(w[0], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(w[1], dtype="<f8").tobytes())


def load_checkpoint(path, dtype=np.float64):
    with open(path, "rb") as fh:
        if fh.read(4) != _EETF_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic")
        (n,) = struct.unpack("<I", fh.read(4))
        spec = spec_from_descriptor(json.loads(fh.read(n).decode()))
        weights = []
        for layer in build_layers(spec):
            if layer.kind == "conv":
                ic, oc = layer.in_shape[0], layer.out_shape[0]
                wshape, bshape = (oc, ic, 3, 3), (oc,)
            elif layer.kind == "dense":
                wshape, bshape = (layer.out_shape[0], layer.in_shape[0]), (layer.out_shape[0],)
            else:
                weights.append(None)
                continue
            W = np.frombuffer(fh.read(8 * int(np.prod(wshape))), dtype="<f8")
            b = np.frombuffer(fh.read(8 * bshape[0]), dtype="<f8")
            weights.append((W.reshape(wshape).astype(dtype), b.astype(dtype)))
    return spec, weights
