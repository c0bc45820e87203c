"""Feed-forward classifiers: construction, forward evaluation, checkpoints.

Weight matrices are stored ``[fan_in, fan_out]`` so a batch forward is
``x @ W + b``. A model is fully determined by its config and seed; the
checkpoint format round-trips parameters bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import FormatError, InputError
from .seeding import INIT_STREAM, mix64

Array = np.ndarray

ACTIVATIONS = ("relu",)
INIT_SCHEMES = ("he_uniform",)

_MAGIC = b"DMEM"
_VERSION = 1
_ACTIVATION_TAGS = {"relu": 0}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture spec: layer widths from input dim through class count."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    init_scheme: str = "he_uniform"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise InputError("layer_widths needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise InputError(f"layer widths must be positive, got {self.layer_widths}")
        if self.layer_widths[-1] < 2:
            raise InputError("output width (class count) must be at least 2")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise InputError(f"unknown init scheme {self.init_scheme!r}")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]


@dataclass
class Model:
    """Per-layer (weight, bias) parameter arrays plus the config they realize."""

    params: list[tuple[Array, Array]]
    config: ModelConfig

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.params)

    def flatten(self) -> Array:
        """All parameters as one vector: per layer, weights (row-major) then bias."""
        return np.concatenate([a.ravel() for w, b in self.params for a in (w, b)])

    def assign_flat(self, vec: Array) -> None:
        """Write a flat vector of :meth:`flatten` layout back into the parameters."""
        pos = 0
        for w, b in self.params:
            w[...] = vec[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = vec[pos:pos + b.size]
            pos += b.size
        if pos != vec.size:
            raise InputError(f"parameter vector has {vec.size} entries, expected {pos}")

    def copy(self) -> "Model":
        return Model([(w.copy(), b.copy()) for w, b in self.params], self.config)


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, seed-determined."""
    rng = np.random.default_rng(seed)
    params = []
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        params.append((w, b))
    return Model(params, config)


def attach(model: Model, tape: ad.Tape) -> list[tuple[ad.Tensor, ad.Tensor]]:
    """Register the model's parameters on a tape so backward reaches them."""
    return [(ad.Tensor(w, tape), ad.Tensor(b, tape)) for w, b in model.params]


def forward(model: Model, x, tape: ad.Tape | None = None,
            params: list[tuple[ad.Tensor, ad.Tensor]] | None = None) -> ad.Tensor:
    """Batch forward pass producing N x K logits.

    When ``tape`` is given the pass is recorded; parameters enter as
    constants unless ``params`` handles from :func:`attach` are supplied,
    which is what trainers do to obtain parameter gradients.
    """
    xt = x if isinstance(x, ad.Tensor) else ad.Tensor(x, tape)
    if xt.data.ndim != 2:
        raise InputError(f"input batch must be rank-2, got shape {xt.data.shape}")
    if xt.data.shape[1] != model.config.input_dim:
        raise InputError(
            f"input dim {xt.data.shape[1]} does not match model input width "
            f"{model.config.input_dim}")
    layers = params if params is not None else model.params
    h = xt
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, w), b)
        if i != last:
            h = ad.relu(h)
    return h


def logits_and_preactivations(model: Model, x: Array) -> tuple[Array, list[Array]]:
    """Plain-array forward pass returning logits and per-layer pre-activations.

    This is the fast path attacks iterate on; gradients w.r.t. the input come
    from :func:`input_gradient` and match the taped forward exactly.
    """
    h = np.asarray(x, dtype=np.float64)
    pre: list[Array] = []
    last = len(model.params) - 1
    for i, (w, b) in enumerate(model.params):
        z = h @ w + b
        pre.append(z)
        if i != last:
            h = np.maximum(z, 0.0)
    return pre[-1], pre


def input_gradient(model: Model, pre: list[Array], dlogits: Array) -> Array:
    """Backpropagate a logit gradient through the layers to the input batch."""
    g = dlogits
    for i in range(len(model.params) - 1, -1, -1):
        g = g @ model.params[i][0].T
        if i > 0:
            g = g * (pre[i - 1] > 0)
    return g


def predict(model: Model, x: Array) -> Array:
    """Predicted class indices for a batch."""
    logits, _ = logits_and_preactivations(model, x)
    return np.argmax(logits, axis=1)


def accuracy(model: Model, x: Array, y: Array) -> float:
    """Fraction of correctly classified samples."""
    if len(y) == 0:
        raise InputError("accuracy of an empty batch")
    return float(np.mean(predict(model, x) == np.asarray(y)))


def true_class_confidence(model: Model, x: Array, y: Array) -> Array:
    """Softmax probability assigned to each sample's true class."""
    logits, _ = logits_and_preactivations(model, x)
    probs = ad.softmax(logits)
    return probs[np.arange(len(y)), np.asarray(y)]


def member_seed(base_seed: int, model_index: int) -> int:
    """Training seed of ensemble member ``model_index``."""
    return mix64(base_seed, model_index)


def init_seed(run_seed: int) -> int:
    """Parameter-initialization seed of a training run."""
    return mix64(run_seed, INIT_STREAM)


def save_checkpoint(model: Model, path) -> None:
    """Write the little-endian binary checkpoint format.

    Layout: magic ``DMEM``, format version u32, layer count u32, per-layer
    (rows u32, cols u32), all weights and biases as f64 in layer order with
    weights row-major, then a u32 activation tag.
    """
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(model.params)))
        for w, _ in model.params:
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in model.params:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        f.write(struct.pack("<I", _ACTIVATION_TAGS[model.config.activation]))


def _read_exact(f, n: int, fieldname: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {fieldname}")
    return buf


def load_checkpoint(path) -> Model:
    """Read a checkpoint written by :func:`save_checkpoint`, bit-exactly."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        version, = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != _VERSION:
            raise FormatError(f"unsupported version {version}")
        n_layers, = struct.unpack("<I", _read_exact(f, 4, "layer count"))
        if n_layers < 1:
            raise FormatError("layer count must be positive")
        dims = []
        for i in range(n_layers):
            rows, cols = struct.unpack("<II", _read_exact(f, 8, f"layer {i} dims"))
            if rows < 1 or cols < 1:
                raise FormatError(f"layer {i} has empty dims {rows}x{cols}")
            dims.append((rows, cols))
        for i in range(1, n_layers):
            if dims[i][0] != dims[i - 1][1]:
                raise FormatError(
                    f"layer {i} fan-in {dims[i][0]} does not chain from "
                    f"previous fan-out {dims[i - 1][1]}")
        params = []
        for rows, cols in dims:
            w = np.frombuffer(_read_exact(f, 8 * rows * cols, "payload"),
                              dtype="<f8").reshape(rows, cols).copy()
            b = np.frombuffer(_read_exact(f, 8 * cols, "payload"), dtype="<f8").copy()
            params.append((w, b))
        tag, = struct.unpack("<I", _read_exact(f, 4, "activation tag"))
        if tag not in _TAG_ACTIVATIONS:
            raise FormatError(f"unknown activation tag {tag}")
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    widths = [dims[0][0]] + [c for _, c in dims]
    config = ModelConfig(tuple(widths), activation=_TAG_ACTIVATIONS[tag])
    return Model(params, config)
