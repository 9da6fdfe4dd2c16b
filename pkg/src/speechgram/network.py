"""Convolutional CTC acoustic model: layer specs, weights, forward pass and weight files.

Activations are laid out time x frequency x channels.  The three feature
types (static, delta, delta-delta) are the input channels, so convolution and
pooling windows are time x frequency.  Fully connected layers act on each time
step separately, on the flattened frequency x channel vector.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .frontend import DEFAULT, TOY, FrontendConfig

BN_EPS = 1e-5
MAGIC = b"MGW1"
PARAM_SUFFIXES = ("kernel", "bias", "bn_scale", "bn_shift", "bn_mean", "bn_var")


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv", "fc" or "output"
    out_channels: int
    filter_time: int = 1
    filter_freq: int = 1
    pool_time: int = 1
    pool_freq: int = 1
    dropout_keep: float = 1.0

    def __post_init__(self):
        if self.kind not in ("conv", "fc", "output"):
            raise ValueError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.filter_time % 2 == 0 or self.filter_freq % 2 == 0):
            raise ValueError(f"{self.name}: conv filters must be odd-sized")
        if self.pool_time < 1 or self.pool_freq < 1:
            raise ValueError(f"{self.name}: pool factors must be >= 1")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError(f"{self.name}: dropout_keep must be in (0, 1]")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    vocab_size: int
    frontend: FrontendConfig = DEFAULT
    input_types: int = 3

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        if not self.layers or self.layers[-1].kind != "output":
            raise ValueError("the last layer must be the output layer")

    @property
    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    @property
    def input_channels(self) -> int:
        return self.frontend.num_channels

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(f"unknown layer {name!r}; known layers: {', '.join(self.names)}")

    def output_shape(self, name: str, num_frames: int) -> tuple[int, int, int]:
        """(T', F', D) of a layer's recorded activations for ``num_frames`` input frames."""
        self.layer(name)
        t, f, d = num_frames, self.input_channels, self.input_types
        for l in self.layers:
            if l.kind == "conv":
                t, f, d = t // l.pool_time, f // l.pool_freq, l.out_channels
            else:
                f, d = 1, l.out_channels
            if l.name == name:
                return t, f, d
        raise AssertionError("unreachable")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        f, d = self.input_channels, self.input_types
        for l in self.layers:
            c = l.out_channels
            if l.kind == "conv":
                shapes[f"{l.name}.kernel"] = (l.filter_time, l.filter_freq, d, c)
                f, d = f // l.pool_freq, c
            else:
                shapes[f"{l.name}.kernel"] = (f * d, c)
                f, d = 1, c
            shapes[f"{l.name}.bias"] = (c,)
            if l.kind != "output":
                for s in PARAM_SUFFIXES[2:]:
                    shapes[f"{l.name}.{s}"] = (c,)
        return shapes

    def to_dict(self) -> dict:
        return {
            "layers": [asdict(l) for l in self.layers],
            "vocab_size": self.vocab_size,
            "frontend": self.frontend.to_dict(),
            "input_types": self.input_types,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            layers=tuple(LayerSpec(**l) for l in d["layers"]),
            vocab_size=int(d["vocab_size"]),
            frontend=FrontendConfig.from_dict(d["frontend"]),
            input_types=int(d.get("input_types", 3)),
        )


def full_spec(num_chars: int = 28) -> NetworkSpec:
    """The 13-layer network: C0-C9, FC0-FC1 and a CTC output over ``num_chars`` + blank."""
    conv = [
        LayerSpec("C0", "conv", 128, 5, 5, 2, 2, 0.75),
        LayerSpec("C1", "conv", 128, 5, 5, 1, 2, 0.75),
        LayerSpec("C2", "conv", 128, 5, 3, 1, 1, 0.75),
        LayerSpec("C3", "conv", 256, 5, 3, 1, 2, 0.75),
    ]
    conv += [LayerSpec(f"C{i}", "conv", 256, 5, 3, 1, 1, 0.75) for i in range(4, 10)]
    fc = [LayerSpec("FC0", "fc", 1024, dropout_keep=0.9), LayerSpec("FC1", "fc", 1024, dropout_keep=0.9)]
    return NetworkSpec(tuple(conv + fc + [LayerSpec("CTC", "output", num_chars + 1)]), num_chars + 1, DEFAULT)


def toy_spec(num_chars: int) -> NetworkSpec:
    """Desk-scale network with the same pooling pattern, on a 20-channel filterbank.

    Conv layers carry no dropout: with 8-16 channels a keep probability of
    0.75 stops CTC training from leaving the all-blank solution.
    """
    layers = (
        LayerSpec("C0", "conv", 8, 5, 5, 2, 2),
        LayerSpec("C1", "conv", 8, 5, 5, 1, 2),
        LayerSpec("C2", "conv", 8, 5, 3, 1, 1),
        LayerSpec("C3", "conv", 16, 5, 3, 1, 2),
        LayerSpec("C4", "conv", 16, 5, 3, 1, 1),
        LayerSpec("C5", "conv", 16, 5, 3, 1, 1),
        LayerSpec("FC0", "fc", 32, dropout_keep=0.9),
        LayerSpec("CTC", "output", num_chars + 1),
    )
    return NetworkSpec(layers, num_chars + 1, TOY)


@dataclass
class WeightStore:
    spec: NetworkSpec
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        missing = set(shapes) - set(self.arrays)
        extra = set(self.arrays) - set(shapes)
        if missing or extra:
            raise WeightFileError(f"weights do not match spec: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            a = np.ascontiguousarray(self.arrays[name], dtype=np.float32)
            if a.shape != shape:
                raise WeightFileError(f"{name}: shape {a.shape} does not match spec {shape}")
            if name.endswith(".bn_var") and np.any(a <= 0):
                raise WeightFileError(f"{name}: variances must be positive")
            self.arrays[name] = a

    def copy(self) -> "WeightStore":
        return WeightStore(self.spec, {k: v.copy() for k, v in self.arrays.items()})


def init_random(spec: NetworkSpec, seed: int = 0) -> WeightStore:
    rng = np.random.default_rng(seed)
    arrays = {}
    for l in spec.layers:
        shapes = {k: v for k, v in spec.param_shapes().items() if k.startswith(l.name + ".")}
        kshape = shapes[f"{l.name}.kernel"]
        fan_in = int(np.prod(kshape[:-1]))
        gain = 1.0 if l.kind == "output" else 2.0
        arrays[f"{l.name}.kernel"] = rng.normal(0.0, np.sqrt(gain / fan_in), size=kshape)
        c = kshape[-1]
        arrays[f"{l.name}.bias"] = np.zeros(c)
        if l.kind != "output":
            arrays[f"{l.name}.bn_scale"] = np.ones(c)
            arrays[f"{l.name}.bn_shift"] = np.zeros(c)
            arrays[f"{l.name}.bn_mean"] = np.zeros(c)
            arrays[f"{l.name}.bn_var"] = np.ones(c)
    return WeightStore(spec, arrays)


# ---------------------------------------------------------------------------
# Forward pass


def param_nodes(graph: ad.Graph, weights: WeightStore, trainable: bool = False) -> dict[str, ad.Node]:
    make = graph.variable if trainable else graph.constant
    return {k: make(v) for k, v in weights.arrays.items()}


def _frozen_affine(p, name):
    # folds bias and stored batch-norm statistics into one scale/shift pair
    scale = p[f"{name}.bn_scale"] / ad.sqrt(ad.add_scalar(p[f"{name}.bn_var"], BN_EPS))
    shift = (p[f"{name}.bias"] - p[f"{name}.bn_mean"]) * scale + p[f"{name}.bn_shift"]
    return scale, shift


def _batch_norm(z, p, name, stats):
    g = z.graph
    c = z.shape[-1]
    axes = tuple(range(z.value.ndim - 1))
    ones = g.constant(np.ones(c))
    z = ad.affine(z, ones, p[f"{name}.bias"])
    mu = ad.mean(z, axes)
    zc = ad.affine(z, ones, -mu)
    var = ad.mean(ad.square(zc), axes)
    inv = ones / ad.sqrt(ad.add_scalar(var, BN_EPS))
    if stats is not None:
        stats[name] = (mu.value.copy(), var.value.copy())
    return ad.affine(zc, inv * p[f"{name}.bn_scale"], p[f"{name}.bn_shift"])


def _dropout(x, keep, rng):
    if keep >= 1.0:
        return x
    mask = (rng.random(x.shape) < keep) / keep
    return x * x.graph.constant(mask)


def forward_nodes(x: ad.Node, params: dict[str, ad.Node], spec: NetworkSpec, upto: str | None = None,
                  mode: str = "inference", rng: np.random.Generator | None = None,
                  stats: dict | None = None) -> dict[str, ad.Node]:
    """Record the network on a T x F x 3 feature node; returns post-ReLU activations per layer.

    The output layer is recorded under its name as T' x V logits.  In training
    mode batch-norm uses per-utterance statistics (written to ``stats``) and
    dropout masks are drawn from ``rng``.
    """
    if mode not in ("inference", "training"):
        raise ValueError(f"unknown mode {mode!r}")
    if upto is not None:
        spec.layer(upto)
    if x.value.ndim != 3 or x.shape[1:] != (spec.input_channels, spec.input_types):
        raise ad.ShapeError(
            f"forward: expected T x {spec.input_channels} x {spec.input_types} features, got {x.shape}")
    training = mode == "training"
    if training and rng is None:
        rng = np.random.default_rng(0)
    g = x.graph
    acts: dict[str, ad.Node] = {}
    h = x
    for l in spec.layers:
        k = params[f"{l.name}.kernel"]
        if l.kind == "conv":
            if h.shape[0] < l.pool_time or h.shape[1] < l.pool_freq:
                raise ad.ShapeError(f"{l.name}: input {h.shape} too small for {l.pool_time}x{l.pool_freq} pooling")
            z = ad.conv2d(h, k)
        else:
            if h.value.ndim == 3:
                t = h.shape[0]
                h = ad.reshape(h, (t, h.shape[1] * h.shape[2]))
            z = h @ k
        if l.kind == "output":
            logits = ad.affine(z, g.constant(np.ones(l.out_channels)), params[f"{l.name}.bias"])
            acts[l.name] = logits
            break
        if training:
            z = _batch_norm(z, params, l.name, stats)
        else:
            z = ad.affine(z, *_frozen_affine(params, l.name))
        h = ad.relu(z)
        if l.kind == "conv":
            h = ad.maxpool2d(h, l.pool_time, l.pool_freq)
            acts[l.name] = h
        else:
            acts[l.name] = ad.reshape(h, (h.shape[0], 1, h.shape[1]))
        if training:
            h = _dropout(h, l.dropout_keep, rng)
        if l.name == upto:
            break
    return acts


def forward_collect(features: np.ndarray, weights: WeightStore, upto: str | None = None,
                    mode: str = "inference", seed: int = 0) -> dict[str, np.ndarray]:
    """Activation arrays per layer for one feature tensor."""
    g = ad.Graph()
    p = param_nodes(g, weights)
    acts = forward_nodes(g.constant(features), p, weights.spec, upto, mode, np.random.default_rng(seed))
    return {k: v.value for k, v in acts.items()}


# ---------------------------------------------------------------------------
# Weight files: b"MGW1" | u32 manifest length | JSON manifest | little-endian float32 blob


def save_weights(path, weights: WeightStore) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(weights))


def weights_to_bytes(weights: WeightStore) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in weights.spec.param_shapes():
        a = weights.arrays[name]
        raw = np.ascontiguousarray(a, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "length": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": "MGW1", "spec": weights.spec.to_dict(), "arrays": entries}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(text)) + text + b"".join(blobs)


def weights_from_bytes(data: bytes) -> WeightStore:
    if data[:4] != MAGIC:
        raise WeightFileError(f"bad magic {data[:4]!r}; expected {MAGIC!r}")
    if len(data) < 8:
        raise WeightFileError("truncated header")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        manifest = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFileError(f"unreadable manifest: {e}") from None
    blob = data[8 + n:]
    spec = NetworkSpec.from_dict(manifest["spec"])
    arrays = {}
    for e in manifest["arrays"]:
        start, length = e["offset"], e["length"]
        if start + length > len(blob) or length != 4 * int(np.prod(e["shape"])):
            raise WeightFileError(f"{e['name']}: blob range out of bounds or inconsistent with shape")
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=start).reshape(e["shape"]).astype(np.float32)
    return WeightStore(spec, arrays)


def load_weights(path) -> WeightStore:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
