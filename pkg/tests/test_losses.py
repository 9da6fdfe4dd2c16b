import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from speechgram import autodiff as ad
from speechgram import losses as L
from speechgram.frontend import frame_energy


def gram_oracle(c):
    t, f, d = c.shape
    g = np.zeros((f, f, d, d))
    for i in range(f):
        for j in range(f):
            for k in range(d):
                for l in range(d):
                    s = 0.0
                    for tt in range(t):
                        s += c[tt, i, k] * c[tt, j, l]
                    g[i, j, k, l] = s / t
    return g


def image_gram_oracle(c):
    w, h, d = c.shape
    g = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            g[i, j] = sum(c[a, b, i] * c[a, b, j] for a in range(w) for b in range(h)) / (w * h)
    return g


def test_gram_constant_field():
    np.testing.assert_array_equal(L.gram_tensor(np.ones((3, 2, 4))), np.ones((2, 2, 4, 4)))


def test_gram_worked_example():
    c = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 1, 2)
    np.testing.assert_array_equal(L.gram_tensor(c)[0, 0], [[5.0, 7.0], [7.0, 10.0]])


def test_gram_scaling(rng):
    c = rng.normal(size=(4, 3, 2))
    np.testing.assert_allclose(L.gram_tensor(2.5 * c), 6.25 * L.gram_tensor(c), rtol=1e-14)


def test_gram_matches_oracle_on_random_tensors(rng):
    for _ in range(200):
        c = rng.normal(size=tuple(rng.integers(1, 5, 3)))
        g = L.gram_tensor(c)
        assert np.abs(g - gram_oracle(c)).max() < 1e-12
        assert np.array_equal(g, g.transpose(1, 0, 3, 2))


def test_image_gram_matches_oracle(rng):
    for _ in range(50):
        c = rng.normal(size=tuple(rng.integers(1, 5, 3)))
        g = L.gram_matrix_image(c)
        assert np.abs(g - image_gram_oracle(c)).max() < 1e-12
        assert np.array_equal(g, g.T)


def test_image_gram_examples(rng):
    np.testing.assert_array_equal(L.gram_matrix_image(np.ones((3, 4, 2))), np.ones((2, 2)))
    c = rng.normal(size=(3, 4, 1))
    assert L.gram_matrix_image(c)[0, 0] == pytest.approx(np.mean(c ** 2), rel=1e-14)


def test_image_gram_is_mean_of_diagonal_blocks(rng):
    c = rng.normal(size=(5, 3, 4))
    g = L.gram_tensor(c)
    diag = sum(g[i, i] for i in range(3)) / 3
    np.testing.assert_allclose(L.gram_matrix_image(c), diag, atol=1e-14)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5),
                  elements=st.floats(-10, 10)))
def test_gram_symmetry_and_nonnegative_diagonal(c):
    g = L.gram_tensor(c)
    assert np.array_equal(g, g.transpose(1, 0, 3, 2))
    for i in range(g.shape[0]):
        assert np.all(np.diag(g[i, i]) >= 0)


def test_gram_flat_layout(rng):
    c = rng.normal(size=(4, 3, 2))
    flat = L.gram_flat(c)
    g = L.gram_tensor(c)
    assert flat[1 * 2 + 0, 2 * 2 + 1] == g[1, 2, 0, 1]
    gn = L.gram_node(ad.Graph().constant(c)).value
    np.testing.assert_allclose(gn, flat, atol=1e-14)


def test_pooled_gram(rng):
    a = rng.normal(size=(5, 2, 3))
    np.testing.assert_array_equal(L.pooled_style_gram([a]), L.gram_tensor(a))
    np.testing.assert_allclose(L.pooled_style_gram([a, a]), L.gram_tensor(a), atol=1e-14)
    x, y = rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3))
    expect = 0.5 * (np.einsum("ik,jl->ijkl", x[0], x[0]) + np.einsum("ik,jl->ijkl", y[0], y[0]))
    np.testing.assert_allclose(L.pooled_style_gram([x, y]), expect, atol=1e-14)
    with pytest.raises(ValueError):
        L.pooled_style_gram([])
    with pytest.raises(ValueError):
        L.pooled_style_gram([a, rng.normal(size=(5, 3, 3))])


def test_default_loss_spec_weights():
    names = [f"C{i}" for i in range(10)] + ["FC0", "FC1", "CTC"]
    spec = L.default_loss_spec(names)
    w = {t.layer: (t.role, t.weight) for t in spec.terms}
    assert all(w[f"C{i}"] == ("style", 1e5) for i in range(6))
    assert all(w[f"C{i}"] == ("content", 0.2) for i in range(6, 10))
    assert w["FC0"] == w["FC1"] == ("content", 10.0)
    assert "CTC" not in w
    assert spec.energy_weight == 1.0
    toy = L.default_loss_spec(["C0", "C1", "C2", "C3", "C4", "C5", "FC0", "CTC"])
    assert toy.content_layers == ["FC0"] and len(toy.style_layers) == 6


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        L.LossSpec((L.LossTerm("C0", "style", 1.0), L.LossTerm("C0", "content", 1.0)))
    with pytest.raises(ValueError):
        L.LossTerm("C0", "style", -1.0)
    with pytest.raises(ValueError):
        L.LossTerm("C0", "texture", 1.0)


def test_layer_range():
    names = ["C0", "C1", "C2", "C3", "FC0"]
    assert L.layer_range("C0-C2", names) == ["C0", "C1", "C2"]
    assert L.layer_range("C0,C3,FC0", names) == ["C0", "C3", "FC0"]
    with pytest.raises(KeyError):
        L.layer_range("C0-C7", names)


def _setup(rng, t=6):
    feats = rng.normal(size=(t, 4, 3))
    acts = {"A": np.abs(rng.normal(size=(t, 3, 2))), "B": np.abs(rng.normal(size=(t, 1, 5)))}
    return feats, acts


def test_total_loss_zero_at_reference(rng):
    feats, acts = _setup(rng)
    spec = L.LossSpec((L.LossTerm("A", "style", 3.0), L.LossTerm("B", "content", 2.0)), energy_weight=1.5)
    targets = L.make_targets(spec, acts, feats, [acts])
    assert L.total_loss(feats, acts, targets, spec) == 0.0


def test_total_loss_hand_formula(rng):
    feats, acts = _setup(rng)
    ref_feats, ref = _setup(rng)
    style_ref = {"A": np.abs(rng.normal(size=(9, 3, 2)))}
    spec = L.LossSpec((L.LossTerm("A", "style", 3.0), L.LossTerm("B", "content", 2.0)), energy_weight=1.5)
    targets = L.make_targets(spec, ref, ref_feats, [style_ref])
    ga, gs = gram_oracle(acts["A"]), gram_oracle(style_ref["A"])
    style = 3.0 * np.sum((ga - gs) ** 2) / ga.size
    content = 2.0 * np.sum((acts["B"] - ref["B"]) ** 2) / acts["B"].size
    e_gen, e_ref = feats[:, :, 0].sum(axis=1), ref_feats[:, :, 0].sum(axis=1)
    energy = 1.5 * np.mean((e_gen - e_ref) ** 2)
    assert L.total_loss(feats, acts, targets, spec) == pytest.approx(style + content + energy, rel=1e-12)


def test_doubling_weights_doubles_loss(rng):
    feats, acts = _setup(rng)
    ref_feats, ref = _setup(rng)
    spec = L.LossSpec((L.LossTerm("A", "style", 3.0), L.LossTerm("B", "content", 2.0)), energy_weight=1.5)
    t1 = L.make_targets(spec, ref, ref_feats, [ref])
    t2 = L.make_targets(spec.scaled(2.0), ref, ref_feats, [ref])
    assert L.total_loss(feats, acts, t2, spec.scaled(2.0)) == pytest.approx(
        2 * L.total_loss(feats, acts, t1, spec), rel=1e-13)


def test_replication_leaves_normalized_terms_unchanged(rng):
    feats, acts = _setup(rng)
    ref_feats, ref = _setup(rng)
    spec = L.LossSpec((L.LossTerm("A", "style", 1.0), L.LossTerm("B", "content", 1.0)))
    base = L.total_loss(feats, acts, L.make_targets(spec, ref, ref_feats, [ref]), spec)
    dup = lambda a: {k: np.concatenate([v, v], axis=1) for k, v in a.items()}  # noqa: E731
    rep = L.total_loss(feats, dup(acts), L.make_targets(spec, dup(ref), ref_feats, [dup(ref)]), spec)
    assert abs(rep - base) < 1e-10


def test_shape_mismatch(rng):
    feats, acts = _setup(rng)
    spec = L.content_spec("B")
    targets = L.make_targets(spec, {"B": np.zeros((5, 1, 5))})
    with pytest.raises(ad.ShapeError, match="B"):
        L.total_loss(feats, acts, targets, spec)


def test_frame_energy_node_matches_array(rng):
    feats = rng.normal(size=(5, 4, 3))
    np.testing.assert_allclose(frame_energy(ad.Graph().constant(feats)).value, frame_energy(feats), atol=1e-14)


def test_total_loss_gradient(rng):
    feats, _ = _setup(rng)
    ref_feats, ref = _setup(rng)
    spec = L.LossSpec((L.LossTerm("A", "style", 3.0), L.LossTerm("B", "content", 2.0)), energy_weight=1.5)
    targets = L.make_targets(spec, ref, ref_feats, [ref])
    a0, b0 = rng.normal(size=(6, 3, 2)), rng.normal(size=(6, 1, 5))

    def build(f, a, b):
        return L.total_loss_node(f, {"A": a, "B": b}, targets, spec)[0]

    assert ad.gradcheck(build, [feats, a0, b0]) < 1e-4


def test_style_target_is_pooled_gram(rng):
    utts = [{"A": rng.normal(size=(t, 3, 2))} for t in (2, 5)]
    targets = L.make_targets(L.style_spec(["A"]), style_acts=utts)
    pooled = gram_oracle(np.concatenate([u["A"] for u in utts]))
    np.testing.assert_allclose(targets.style["A"], pooled.transpose(0, 2, 1, 3).reshape(6, 6), atol=1e-12)
