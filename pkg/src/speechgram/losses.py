"""Gram statistics, content/style/energy loss terms and the weighted total loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .frontend import frame_energy

STYLE, CONTENT = "style", "content"


# ---------------------------------------------------------------------------
# Gram statistics on arrays


def gram_tensor(c: np.ndarray) -> np.ndarray:
    """F x F x D x D time-averaged uncentered correlations of a T x F x D activation tensor.

    Computed one frequency row at a time; the (j, i) blocks are filled by
    transposing the (i, j) ones so the result is exactly symmetric.
    """
    c = np.asarray(c)
    t, f, d = c.shape
    if t < 1:
        raise ValueError("gram_tensor needs at least one frame")
    g = np.empty((f, f, d, d), dtype=c.dtype)
    for i in range(f):
        block = np.einsum("tk,tjl->jkl", c[:, i, :], c[:, i:, :])
        g[i, i:] = block
        g[i:, i] = block.transpose(0, 2, 1)
    return g / t


def gram_matrix_image(c: np.ndarray) -> np.ndarray:
    """D x D Gram matrix of a W x H x D image activation map, averaged over all positions."""
    c = np.asarray(c)
    flat = c.reshape(-1, c.shape[-1])
    g = flat.T @ flat
    return 0.5 * (g + g.T) / flat.shape[0]


def gram_flat(c: np.ndarray) -> np.ndarray:
    """The Gram tensor laid out as an (F*D) x (F*D) matrix indexed [(i, k), (j, l)]."""
    t, f, d = c.shape
    return gram_tensor(c).transpose(0, 2, 1, 3).reshape(f * d, f * d)


def pooled_style_gram(utterances) -> np.ndarray:
    """Gram tensor over the time-concatenation of several activation tensors."""
    utterances = list(utterances)
    if not utterances:
        raise ValueError("pooled_style_gram needs at least one utterance")
    shapes = {u.shape[1:] for u in utterances}
    if len(shapes) != 1:
        raise ValueError(f"utterances disagree on (F, D): {sorted(shapes)}")
    return gram_tensor(np.concatenate(utterances, axis=0))


def gram_node(c: ad.Node) -> ad.Node:
    """Differentiable counterpart of :func:`gram_flat`."""
    t, f, d = c.shape
    m = ad.reshape(c, (t, f * d))
    return ad.mul_scalar(ad.transpose(m, (1, 0)) @ m, 1.0 / t)


# ---------------------------------------------------------------------------
# Loss specification


@dataclass(frozen=True)
class LossTerm:
    layer: str
    role: str
    weight: float

    def __post_init__(self):
        if self.role not in (STYLE, CONTENT):
            raise ValueError(f"{self.layer}: role must be 'style' or 'content', got {self.role!r}")
        if self.weight < 0:
            raise ValueError(f"{self.layer}: weight must be >= 0")


@dataclass(frozen=True)
class LossSpec:
    terms: tuple[LossTerm, ...] = ()
    energy_weight: float = 0.0

    def __post_init__(self):
        layers = [t.layer for t in self.terms]
        if len(set(layers)) != len(layers):
            raise ValueError("a layer may appear at most once in a loss spec")
        if self.energy_weight < 0:
            raise ValueError("energy_weight must be >= 0")

    @property
    def style_layers(self) -> list[str]:
        return [t.layer for t in self.terms if t.role == STYLE]

    @property
    def content_layers(self) -> list[str]:
        return [t.layer for t in self.terms if t.role == CONTENT]

    def scaled(self, factor: float) -> "LossSpec":
        return LossSpec(tuple(LossTerm(t.layer, t.role, t.weight * factor) for t in self.terms),
                        self.energy_weight * factor)


STYLE_WEIGHT = 1e5
MID_CONTENT_WEIGHT = 0.2
FC_CONTENT_WEIGHT = 10.0
ENERGY_WEIGHT = 1.0


def _is_fc(name: str) -> bool:
    return name.startswith("FC")


def default_loss_spec(layer_names) -> LossSpec:
    """Voice-conversion weights: style on C0-C5, content on C6-C9 and on the FC layers.

    Layers missing from the network are skipped.  The energy penalty is on
    whenever an FC layer is a content layer.
    """
    terms = []
    for name in layer_names:
        if name in {f"C{i}" for i in range(6)}:
            terms.append(LossTerm(name, STYLE, STYLE_WEIGHT))
        elif name in {f"C{i}" for i in range(6, 10)}:
            terms.append(LossTerm(name, CONTENT, MID_CONTENT_WEIGHT))
        elif _is_fc(name):
            terms.append(LossTerm(name, CONTENT, FC_CONTENT_WEIGHT))
    energy = ENERGY_WEIGHT if any(_is_fc(t.layer) for t in terms) else 0.0
    return LossSpec(tuple(terms), energy)


def content_spec(layer: str, weight: float = 1.0, energy_weight: float = 0.0) -> LossSpec:
    return LossSpec((LossTerm(layer, CONTENT, weight),), energy_weight)


def style_spec(layers, weight: float = STYLE_WEIGHT) -> LossSpec:
    return LossSpec(tuple(LossTerm(l, STYLE, weight) for l in layers))


def layer_range(expr: str, available) -> list[str]:
    """Expand ``"C0-C5"`` or ``"C0,C3,FC0"`` against the network's layer order."""
    available = list(available)
    out = []
    for part in expr.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (p.strip() for p in part.split("-", 1))
            for n in (lo, hi):
                if n not in available:
                    raise KeyError(f"unknown layer {n!r}")
            out.extend(available[available.index(lo):available.index(hi) + 1])
        else:
            if part not in available:
                raise KeyError(f"unknown layer {part!r}")
            out.append(part)
    return out


# ---------------------------------------------------------------------------
# Targets and the total loss


@dataclass
class LossTargets:
    content: dict[str, np.ndarray] = field(default_factory=dict)
    style: dict[str, np.ndarray] = field(default_factory=dict)  # flat (F*D) x (F*D) Gram matrices
    energy: np.ndarray | None = None


def make_targets(spec: LossSpec, content_acts: dict | None = None, content_features: np.ndarray | None = None,
                 style_acts: list[dict] | None = None) -> LossTargets:
    targets = LossTargets()
    for name in spec.content_layers:
        if content_acts is None:
            raise ValueError("content layers requested but no content activations given")
        targets.content[name] = np.asarray(content_acts[name])
    for name in spec.style_layers:
        if not style_acts:
            raise ValueError("style layers requested but no style activations given")
        utts = [np.asarray(a[name]) for a in style_acts]
        if len({u.shape[1:] for u in utts}) != 1:
            raise ValueError(f"{name}: style utterances disagree on (F, D)")
        # same arithmetic as the generated side, so identical activations give exactly zero
        targets.style[name] = gram_node(ad.Graph().constant(np.concatenate(utts, axis=0))).value
    if spec.energy_weight > 0:
        if content_features is None:
            raise ValueError("energy penalty requested but no content features given")
        targets.energy = frame_energy(content_features)
    return targets


def _check(name, a, b):
    if tuple(a) != tuple(b):
        raise ad.ShapeError(f"{name}: generated shape {tuple(a)} does not match reference {tuple(b)}")


def loss_terms(feats: ad.Node, acts: dict[str, ad.Node], targets: LossTargets, spec: LossSpec) -> dict[str, ad.Node]:
    """Weighted, dimension-normalized loss terms keyed by layer name (and ``"energy"``)."""
    g = feats.graph
    terms = {}
    for t in spec.terms:
        if t.layer not in acts:
            raise KeyError(f"layer {t.layer!r} was not computed")
        if t.role == STYLE:
            gen = gram_node(acts[t.layer])
            ref = targets.style[t.layer]
        else:
            gen = acts[t.layer]
            ref = targets.content[t.layer]
        _check(t.layer, gen.shape, ref.shape)
        diff = gen - g.constant(ref)
        terms[t.layer] = ad.mul_scalar(ad.sum(ad.square(diff)), t.weight / ref.size)
    if spec.energy_weight > 0:
        e = frame_energy(feats)
        _check("energy", e.shape, targets.energy.shape)
        diff = e - g.constant(targets.energy)
        terms["energy"] = ad.mul_scalar(ad.mean(ad.square(diff)), spec.energy_weight)
    return terms


def total_loss_node(feats: ad.Node, acts: dict[str, ad.Node], targets: LossTargets, spec: LossSpec) -> tuple[ad.Node, dict]:
    terms = loss_terms(feats, acts, targets, spec)
    if not terms:
        raise ValueError("loss spec has no terms")
    # fixed summation order: spec order, energy last
    names = [t.layer for t in spec.terms] + (["energy"] if "energy" in terms else [])
    total = terms[names[0]]
    for n in names[1:]:
        total = total + terms[n]
    return total, terms


def total_loss(feats: np.ndarray, acts: dict[str, np.ndarray], targets: LossTargets, spec: LossSpec) -> float:
    g = ad.Graph()
    node_acts = {k: g.constant(v) for k, v in acts.items()}
    total, _ = total_loss_node(g.constant(feats), node_acts, targets, spec)
    return float(total.value)
