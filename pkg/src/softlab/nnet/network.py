"""Small convolutional classifier written directly against numpy.

Tensors are float32 arrays in NHWC layout. The architecture is a list of
layer descriptors; parameters live in one flat list in declaration order
(weight then bias for every conv and linear layer), which is also the order
used by gradients, optimizer state and the model file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from ..errors import (
    ArchitectureMismatchError,
    BadMagicError,
    ClassCountMismatchError,
    NumericError,
    TruncatedFileError,
    ValidationError,
)

DTYPE = np.float32

CONV, RELU, MAXPOOL, GAP, LINEAR = "conv3x3", "relu", "maxpool2x2", "gap", "linear"
KIND_TAGS = {CONV: 1, RELU: 2, MAXPOOL: 3, GAP: 4, LINEAR: 5}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
DEFAULT_CHANNELS = (16, 32, 64)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: tuple[int, ...] = ()

    @property
    def param_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == CONV:
            cin, cout = self.dims
            return [(3, 3, cin, cout), (cout,)]
        if self.kind == LINEAR:
            n_in, n_out = self.dims
            return [(n_in, n_out), (n_out,)]
        return []


def default_architecture(
    num_classes: int = 6, channels=DEFAULT_CHANNELS, in_channels: int = 3
) -> list[LayerSpec]:
    layers = []
    cin = in_channels
    for cout in channels:
        layers += [LayerSpec(CONV, (cin, cout)), LayerSpec(RELU), LayerSpec(MAXPOOL)]
        cin = cout
    layers += [LayerSpec(GAP), LayerSpec(LINEAR, (cin, num_classes))]
    return layers


def check_architecture(layers: list[LayerSpec]) -> None:
    width = None
    seen_gap = False
    for i, layer in enumerate(layers):
        if layer.kind not in KIND_TAGS:
            raise ArchitectureMismatchError(f"layer {i}: unknown kind {layer.kind!r}")
        expected_dims = 2 if layer.kind in (CONV, LINEAR) else 0
        if len(layer.dims) != expected_dims or any(d < 1 for d in layer.dims):
            raise ArchitectureMismatchError(f"layer {i}: bad dims {layer.dims} for {layer.kind}")
        if layer.kind == CONV:
            if seen_gap:
                raise ArchitectureMismatchError(f"layer {i}: convolution after pooling to a vector")
            if width is not None and layer.dims[0] != width:
                raise ArchitectureMismatchError(f"layer {i}: expects {layer.dims[0]} channels, gets {width}")
            width = layer.dims[1]
        elif layer.kind == GAP:
            seen_gap = True
        elif layer.kind == LINEAR:
            if not seen_gap:
                raise ArchitectureMismatchError(f"layer {i}: linear layer before global pooling")
            if width is not None and layer.dims[0] != width:
                raise ArchitectureMismatchError(f"layer {i}: expects {layer.dims[0]} inputs, gets {width}")
            width = layer.dims[1]
    if not layers or layers[-1].kind != LINEAR:
        raise ArchitectureMismatchError("the last layer must be linear")
    if sum(layer.kind == GAP for layer in layers) != 1:
        raise ArchitectureMismatchError("exactly one global average pooling layer is required")


class Network:
    """Layer descriptors plus float32 parameters.

    ``forward(..., keep_cache=True)`` stores the activations that
    ``backward`` needs; a plain forward pass leaves the object untouched, so
    a trained network can be shared read-only.
    """

    def __init__(self, layers: list[LayerSpec], params: list[np.ndarray]):
        check_architecture(layers)
        shapes = [s for layer in layers for s in layer.param_shapes]
        if len(shapes) != len(params) or any(p.shape != s for p, s in zip(params, shapes)):
            raise ArchitectureMismatchError("parameter shapes do not match the architecture")
        self.layers = list(layers)
        self.params = [np.ascontiguousarray(p, dtype=DTYPE) for p in params]
        self._cache = None

    @property
    def num_classes(self) -> int:
        return self.layers[-1].dims[1]

    @property
    def in_channels(self) -> int:
        first = next((l for l in self.layers if l.kind in (CONV, LINEAR)))
        return first.dims[0]

    @property
    def embedding_dim(self) -> int:
        gap_at = next(i for i, l in enumerate(self.layers) if l.kind == GAP)
        for layer in reversed(self.layers[:gap_at]):
            if layer.kind == CONV:
                return layer.dims[1]
        return self.in_channels

    def copy(self) -> "Network":
        return Network(self.layers, [p.copy() for p in self.params])

    def require_classes(self, k: int) -> None:
        if k != self.num_classes:
            raise ClassCountMismatchError(
                f"class-count mismatch: model predicts {self.num_classes} classes, evaluation needs {k}"
            )

    def forward(self, batch: np.ndarray, keep_cache: bool = False):
        """Return ``(logits, embeddings)`` for an NHWC float batch."""
        x = np.asarray(batch)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValidationError(
                f"expected input of shape (B, H, W, {self.in_channels}), got {x.shape}"
            )
        x = x.astype(DTYPE, copy=False)
        cache = []
        embeddings = None
        p = 0
        for layer in self.layers:
            if layer.kind == CONV:
                x, c = _conv_forward(x, self.params[p], self.params[p + 1])
                p += 2
            elif layer.kind == RELU:
                c = x > 0
                x = x * c
            elif layer.kind == MAXPOOL:
                x, c = _pool_forward(x)
            elif layer.kind == GAP:
                c = x.shape
                x = x.mean(axis=(1, 2), dtype=DTYPE)
                embeddings = x
            else:
                c = x
                x = x @ self.params[p] + self.params[p + 1]
                p += 2
            if keep_cache:
                cache.append(c)
        if keep_cache:
            self._cache = cache
        return x, embeddings

    def backward(self, dlogits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients for the most recent cached forward pass."""
        if self._cache is None:
            raise ValidationError("no forward cache: call forward(..., keep_cache=True) first")
        cache, self._cache = self._cache, None
        grads: list[np.ndarray | None] = [None] * len(self.params)
        d = np.asarray(dlogits, dtype=DTYPE)
        p = len(self.params)
        first_param_layer = next(i for i, l in enumerate(self.layers) if l.param_shapes)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, c = self.layers[i], cache[i]
            need_dx = i > first_param_layer
            if layer.kind == LINEAR:
                p -= 2
                grads[p] = c.reshape(len(c), -1).T @ d
                grads[p + 1] = d.sum(axis=0)
                if need_dx:
                    d = d @ self.params[p].T
            elif layer.kind == GAP:
                b, h, w, ch = c
                d = np.broadcast_to((d / DTYPE(h * w))[:, None, None, :], c)
            elif layer.kind == MAXPOOL:
                d = _pool_backward(d, c)
            elif layer.kind == RELU:
                d = d * c
            else:
                p -= 2
                gw, gb, d = _conv_backward(d, c, self.params[p], need_dx)
                grads[p], grads[p + 1] = gw, gb
            if not need_dx:
                break
        return [g.astype(DTYPE, copy=False) for g in grads]


def init_network(
    seed: int, num_classes: int = 6, channels=DEFAULT_CHANNELS, in_channels: int = 3
) -> Network:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    layers = default_architecture(num_classes, channels, in_channels)
    rng = np.random.default_rng(seed)
    params = []
    for layer in layers:
        shapes = layer.param_shapes
        if not shapes:
            continue
        w_shape, b_shape = shapes
        fan_in = int(np.prod(w_shape[:-1]))
        bound = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-bound, bound, size=w_shape).astype(DTYPE))
        params.append(np.zeros(b_shape, dtype=DTYPE))
    return Network(layers, params)


def _conv_forward(x, w, b):
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    cols = _kernels.im2col3x3(np.ascontiguousarray(x)).reshape(bsz * h * wd, 9 * cin)
    out = cols @ w.reshape(9 * cin, cout)
    out += b
    return out.reshape(bsz, h, wd, cout), (cols, x.shape)


def _conv_backward(dout, cache, w, need_dx):
    cols, (bsz, h, wd, cin) = cache
    cout = w.shape[3]
    d2 = np.ascontiguousarray(dout).reshape(-1, cout)
    gw = (cols.T @ d2).reshape(w.shape)
    gb = d2.sum(axis=0)
    if not need_dx:
        return gw, gb, None
    dcols = (d2 @ w.reshape(9 * cin, cout).T).reshape(bsz, h, wd, 3, 3, cin)
    return gw, gb, _kernels.col2im3x3(dcols)


def _pool_forward(x):
    h, w = x.shape[1:3]
    if h % 2 or w % 2:
        raise ValidationError(f"2x2 max pooling needs even spatial size, got {h}x{w}")
    return _kernels.maxpool2x2(np.ascontiguousarray(x))


def _pool_backward(d, arg):
    return _kernels.maxpool2x2_backward(np.ascontiguousarray(d), arg)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against target distributions and its logit gradient.

    ``targets`` rows are probability vectors; one-hot rows give the usual
    hard-label cross-entropy.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=logits.dtype)
    if logits.shape != targets.shape or logits.ndim != 2:
        raise ValidationError(f"logits {logits.shape} and targets {targets.shape} must be equal (B, k)")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_sum
    bsz = len(logits)
    loss = float(-(targets * log_p).sum() / bsz)
    grad = (np.exp(log_p) - targets) / logits.dtype.type(bsz)
    return loss, grad


# ---------------------------------------------------------------------------
# SLM1 model files

MODEL_MAGIC = b"SLM1"


def model_to_bytes(net: Network) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<BI", KIND_TAGS[layer.kind], len(layer.dims)))
        parts.append(struct.pack(f"<{len(layer.dims)}I", *layer.dims))
    for p in net.params:
        parts.append(p.astype("<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(raw: bytes, source: str = "<bytes>") -> Network:
    if raw[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{source}: bad magic {raw[:4]!r}")
    view = memoryview(raw)
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise TruncatedFileError(f"{source}: truncated model file")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    (n_layers,) = take("<I")
    layers = []
    for _ in range(n_layers):
        tag, n_dims = take("<BI")
        if tag not in TAG_KINDS:
            raise ArchitectureMismatchError(f"{source}: unknown layer tag {tag}")
        if n_dims > 8:
            raise ArchitectureMismatchError(f"{source}: implausible dimension count {n_dims}")
        layers.append(LayerSpec(TAG_KINDS[tag], tuple(take(f"<{n_dims}I"))))
    check_architecture(layers)
    params = []
    for layer in layers:
        for shape in layer.param_shapes:
            count = int(np.prod(shape))
            if pos + 4 * count > len(raw):
                raise TruncatedFileError(f"{source}: truncated parameter data")
            params.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(DTYPE))
            pos += 4 * count
    if pos != len(raw):
        raise ArchitectureMismatchError(f"{source}: {len(raw) - pos} unexpected trailing bytes")
    return Network(layers, params)


def save_model(path, net: Network) -> None:
    Path(path).write_bytes(model_to_bytes(net))


def load_model(path, num_classes: int | None = None) -> Network:
    net = model_from_bytes(Path(path).read_bytes(), str(path))
    if num_classes is not None:
        net.require_classes(num_classes)
    return net
