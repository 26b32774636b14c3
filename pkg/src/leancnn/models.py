"""Model assembly for the two tumor-classification architectures.

btbcnn (binary head, single logit):
    [conv 3x3 pad1 -> bn -> relu -> maxpool]  in_channels -> 32
    [conv 3x3 pad1 -> bn -> relu -> maxpool]  32 -> 64
    flatten -> dense 512 -> relu -> dropout 0.5 -> dense 1

btmcnn (multi-class head) repeats the block a third time (64 -> 128) and
ends in dense num_classes.  Spatial size halves per block, so input_size
must divide by 4 (btbcnn) or 8 (btmcnn).

build() derives the weight-init and dropout random streams from one seed via
SeedSequence spawning, so models are bit-reproducible from (spec, seed).
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ConfigError, ShapeError
from .layers import (BatchNorm2d, Conv2d, Dense, Dropout, Flatten, MaxPool2x2,
                     ReLU)

KINDS = ("btbcnn", "btmcnn")
DROPOUT_RATE = 0.5
HIDDEN_UNITS = 512


@dataclass(frozen=True)
class ModelSpec:
    """Architecture selector; validation happens at construction."""

    kind: str
    in_channels: int = 1
    num_classes: int = None
    input_size: int = 224

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        if self.num_classes is None:
            object.__setattr__(self, "num_classes", 1 if self.kind == "btbcnn" else 4)
        if not isinstance(self.in_channels, int) or self.in_channels < 1:
            raise ConfigError(f"in_channels must be a positive int, got {self.in_channels}")
        if self.kind == "btbcnn":
            if self.num_classes != 1:
                raise ConfigError(
                    f"btbcnn has a single-logit head, num_classes must be 1, "
                    f"got {self.num_classes}")
        else:
            if not isinstance(self.num_classes, int) or self.num_classes < 2:
                raise ConfigError(
                    f"btmcnn needs num_classes >= 2, got {self.num_classes}")
        div = 4 if self.kind == "btbcnn" else 8
        if not isinstance(self.input_size, int) or self.input_size < 8:
            raise ConfigError(f"input_size must be an int >= 8, got {self.input_size}")
        if self.input_size % div != 0:
            raise ConfigError(
                f"{self.kind} halves the spatial size {2 if div == 4 else 3} times, "
                f"input_size must be divisible by {div}, got {self.input_size}")

    @property
    def blocks(self):
        return 2 if self.kind == "btbcnn" else 3

    @property
    def flat_features(self):
        side = self.input_size // (2 ** self.blocks)
        chans = 32 * (2 ** (self.blocks - 1))
        return chans * side * side

    def to_dict(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "num_classes": self.num_classes, "input_size": self.input_size}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], in_channels=int(d["in_channels"]),
                   num_classes=int(d["num_classes"]), input_size=int(d["input_size"]))


class Model:
    """Ordered layer chain with explicit forward/backward and named state."""

    def __init__(self, spec, named_layers, seed, dtype):
        self.spec = spec
        self.named_layers = named_layers  # list of (name, layer)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.training = True

    @property
    def default_loss(self):
        return "bce" if self.spec.kind == "btbcnn" else "ce"

    def set_mode(self, training):
        self.training = bool(training)
        for _, layer in self.named_layers:
            layer.set_mode(training)

    def forward(self, x):
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.in_channels, s.input_size, s.input_size):
            raise ShapeError(
                f"{s.kind} expects input (N, {s.in_channels}, {s.input_size}, "
                f"{s.input_size}), got {x.shape}")
        for _, layer in self.named_layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.named_layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        out = []
        for name, layer in self.named_layers:
            for pname, arr in layer.params():
                out.append((f"{name}.{pname}", arr))
        return out

    def grads(self):
        out = []
        for name, layer in self.named_layers:
            for pname, arr in layer.grads():
                out.append((f"{name}.{pname}", arr))
        return out

    def state_tensors(self):
        """Learnable params plus batchnorm running stats, in layer order."""
        out = []
        for name, layer in self.named_layers:
            for pname, arr in layer.state():
                out.append((f"{name}.{pname}", arr))
        return out

    def param_count(self):
        """Number of learnable scalars (running stats excluded)."""
        return int(sum(arr.size for _, arr in self.params()))

    def param_hash(self):
        """sha256 over state tensor names and raw little-endian bytes."""
        h = hashlib.sha256()
        for name, arr in self.state_tensors():
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            a = np.ascontiguousarray(arr)
            if a.dtype.byteorder == ">":
                a = a.astype(a.dtype.newbyteorder("<"))
            h.update(a.tobytes())
        return h.hexdigest()


PUBLISHED_BTMCNN_PARAMS = 51_476_484


def published_count_note(kind, count):
    """Explain a btmcnn count that differs from the widely quoted figure.

    The reference figure corresponds to a 3-channel 224px 4-class build;
    with 1-channel grayscale input the first conv carries 576 fewer weights.
    Returns None when there is nothing to explain.
    """
    if kind != "btmcnn" or count == PUBLISHED_BTMCNN_PARAMS:
        return None
    return (f"note: this btmcnn build counts {count:,} parameters; the "
            f"published reference figure {PUBLISHED_BTMCNN_PARAMS:,} assumes "
            "3-channel 224px input with 4 classes (1-channel input trims 576 "
            "weights from the first conv)")


def param_count_formula(spec):
    """Closed-form learnable-parameter count, kept independent of build().

    conv: Cout*Cin*3*3 + Cout; bn: 2*C; dense: in*out + out.
    """
    total = 0
    cin = spec.in_channels
    for b in range(spec.blocks):
        cout = 32 * (2 ** b)
        total += cout * cin * 9 + cout  # conv
        total += 2 * cout               # bn gamma+beta
        cin = cout
    total += spec.flat_features * HIDDEN_UNITS + HIDDEN_UNITS
    total += HIDDEN_UNITS * spec.num_classes + spec.num_classes
    return total


def build(spec, seed, dtype=tensor.DEFAULT_DTYPE):
    """Construct a freshly initialized model from one integer seed."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative int, got {seed!r}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"model dtype must be float32 or float64, got {dtype}")
    init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))

    layers = []
    cin = spec.in_channels
    idx = 0
    for b in range(spec.blocks):
        cout = 32 * (2 ** b)
        layers.append((f"{idx}.conv", Conv2d(cin, cout, 3, padding=1,
                                             rng=init_rng, dtype=dtype)))
        idx += 1
        layers.append((f"{idx}.bn", BatchNorm2d(cout, dtype=dtype)))
        idx += 1
        layers.append((f"{idx}.relu", ReLU()))
        idx += 1
        layers.append((f"{idx}.pool", MaxPool2x2()))
        idx += 1
        cin = cout
    layers.append((f"{idx}.flatten", Flatten()))
    idx += 1
    layers.append((f"{idx}.dense", Dense(spec.flat_features, HIDDEN_UNITS,
                                         rng=init_rng, dtype=dtype)))
    idx += 1
    layers.append((f"{idx}.relu", ReLU()))
    idx += 1
    layers.append((f"{idx}.dropout", Dropout(DROPOUT_RATE, rng=drop_rng)))
    idx += 1
    layers.append((f"{idx}.dense", Dense(HIDDEN_UNITS, spec.num_classes,
                                         rng=init_rng, dtype=dtype)))

    model = Model(spec, layers, int(seed), dtype)
    built = model.param_count()
    formula = param_count_formula(spec)
    if built != formula:
        raise ConfigError(
            f"internal inconsistency: built {built} parameters, "
            f"closed form says {formula}")
    return model
