import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hsidiff.classifier import (
    ClassifierConfig,
    ClassifierError,
    SpectralTransformer,
    TrainConfig,
    argmax_classes,
    build_classifier,
    load_classifier,
    predict,
    predict_logits,
    save_classifier,
    train_classifier,
)
from hsidiff.features import FeatureRepository

from oracles import classifier_gradcheck


def cfg(**kw):
    base = dict(n_classes=3, group_size=16, embed_dim=16, depth=2, heads=4, mlp_ratio=2.0, dropout=0.0, standardize=False)
    base.update(kw)
    return ClassifierConfig(**base)


def toy_repo(n=20, L=6, seed=0):
    """Two classes on either side of a hyperplane, balanced."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, L))
    y = np.where(np.arange(n) % 2 == 0, 1, 2)
    x[:, 0] += np.where(y == 1, -3.0, 3.0)
    return FeatureRepository(x, y, np.zeros((n, 2), int), np.ones(n, bool))


# -- tokenization ----------------------------------------------------------------------


def test_token_counts():
    m = SpectralTransformer(cfg(), 128)
    assert m.tokenize(torch.zeros(2, 128)).shape == (2, 9, 16)
    m = SpectralTransformer(cfg(), 130)
    assert m.n_groups == 9
    assert m.tokenize(torch.zeros(1, 130)).shape == (1, 10, 16)


def test_last_group_zero_padded():
    m = SpectralTransformer(cfg(), 130).eval()
    v = torch.randn(1, 130)
    with torch.no_grad():
        tok = m.tokenize(v)
        last = torch.cat([v[0, 128:], torch.zeros(14)])
        expected = m.proj(last) + m.pos_embed[0, 9]
    torch.testing.assert_close(tok[0, 9], expected, rtol=0, atol=1e-6)


def test_zero_projection_gives_positional_embeddings():
    m = SpectralTransformer(cfg(), 40)
    with torch.no_grad():
        m.proj.weight.zero_()
        m.proj.bias.zero_()
        tok = m.tokenize(torch.randn(3, 40))
    assert torch.equal(tok[:, 1:], m.pos_embed[:, 1:].expand(3, -1, -1))
    assert torch.equal(tok[:, 0], (m.cls_token + m.pos_embed[:, :1])[:, 0].expand(3, -1))


def test_width_guards():
    m = SpectralTransformer(cfg(), 32)
    with pytest.raises(ClassifierError):
        m.tokenize(torch.zeros(1, 33))
    with pytest.raises(ClassifierError):
        m.encode(torch.zeros(1, 3, 8))


@pytest.mark.parametrize("kw", [dict(embed_dim=10, heads=4), dict(group_size=0), dict(n_classes=1), dict(skip_fusion="dense")])
def test_config_guards(kw):
    with pytest.raises(ClassifierError):
        cfg(**kw)


# -- forward -----------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_normalization(seed):
    torch.manual_seed(seed)
    m = SpectralTransformer(cfg(), 37).eval()
    v = torch.randn(4, 37) * 10
    with torch.no_grad():
        p = torch.softmax(m(v), dim=-1)
    assert torch.allclose(p.sum(-1), torch.ones(4), atol=1e-6)


def test_inference_bitwise_repeatable():
    m = SpectralTransformer(cfg(dropout=0.3), 20)
    v = np.random.default_rng(0).standard_normal((5, 20)).astype(np.float32)
    assert np.array_equal(predict_logits(m, v), predict_logits(m, v))


def permuted_tokens(m, v, perm):
    tok = m.tokenize(v)
    return torch.cat([tok[:, :1], tok[:, 1:][:, perm]], dim=1)


def test_permutation_invariance_without_position():
    torch.manual_seed(0)
    m = SpectralTransformer(cfg(pos_embed=False, skip_fusion="off", depth=3), 64).eval()
    v = torch.randn(3, 64)
    rng = np.random.default_rng(1)
    with torch.no_grad():
        ref = m.encode(m.tokenize(v))
        for _ in range(10):
            perm = torch.from_numpy(rng.permutation(4))
            torch.testing.assert_close(m.encode(permuted_tokens(m, v, perm)), ref, rtol=0, atol=1e-5)


def test_position_embedding_breaks_invariance():
    torch.manual_seed(0)
    m = SpectralTransformer(cfg(pos_embed=True, skip_fusion="off", depth=3), 64).eval()
    with torch.no_grad():
        m.pos_embed.normal_()
        v = torch.randn(3, 64)
        # reorder the raw groups, so each token is re-paired with a different position
        perm = torch.tensor([3, 2, 1, 0])
        v_perm = v.reshape(3, 4, 16)[:, perm].reshape(3, 64)
        diff = (m(v) - m(v_perm)).abs().max()
    assert diff > 1e-4


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5, 6])
def test_skip_fusion_keeps_shapes(depth):
    torch.manual_seed(depth)
    on = SpectralTransformer(cfg(depth=depth, skip_fusion="cross-layer"), 40).eval()
    off = SpectralTransformer(cfg(depth=depth, skip_fusion="off"), 40).eval()
    off.load_state_dict({k: v for k, v in on.state_dict().items() if not k.startswith("gates")})
    v = torch.randn(2, 40)
    with torch.no_grad():
        a, b = on(v), off(v)
    assert a.shape == b.shape == (2, 3)
    assert len(on.gates) == max(depth - 2, 0)
    if depth >= 3:
        assert not torch.equal(a, b)


def test_argmax_rules():
    assert argmax_classes(np.array([[0.1, 0.9, 0.3]]))[0] == 2
    assert argmax_classes(np.array([[0.5, 0.5]]))[0] == 1


def test_gradient_matches_finite_differences():
    rows = classifier_gradcheck(n_samples=10, seed=2)
    assert len(rows) == 10
    assert max(r[-1] for r in rows) < 1e-4, rows


# -- training ----------------------------------------------------------------------------


def test_separable_toy_reaches_full_train_accuracy():
    repo = toy_repo()
    c = ClassifierConfig(n_classes=2, group_size=2, embed_dim=16, depth=2, heads=2, mlp_ratio=2.0, seed=1)
    model, trace = train_classifier(repo, c, TrainConfig(epochs=200, batch_size=8, learning_rate=1e-3, seed=1))
    assert (predict(model, repo) == repo.labels).mean() == 1.0
    best = np.minimum.accumulate([l for _, l, _ in trace])
    assert (np.diff(best) <= 0).all()
    assert best[-1] < trace[0][1]


def test_zero_epochs_is_untrained():
    # features independent of the balanced labels, so any fixed model scores ~0.5
    rng = np.random.default_rng(3)
    y = np.tile([1, 2], 200)
    repo = FeatureRepository(rng.standard_normal((400, 6)), y, np.zeros((400, 2), int), np.ones(400, bool))
    c = ClassifierConfig(n_classes=2, group_size=2, embed_dim=16, depth=2, heads=2, seed=4)
    model, trace = train_classifier(repo, c, TrainConfig(epochs=0))
    assert trace == []
    acc = (predict(model, repo) == repo.labels).mean()
    assert 0.4 <= acc <= 0.6


def test_training_is_deterministic():
    repo = toy_repo()
    c = ClassifierConfig(n_classes=2, group_size=2, embed_dim=8, depth=3, heads=2, seed=5)
    t = TrainConfig(epochs=5, batch_size=4, learning_rate=1e-3, seed=6)
    (a, ta), (b, tb) = train_classifier(repo, c, t), train_classifier(repo, c, t)
    assert ta == tb
    assert np.array_equal(predict_logits(a, repo.vectors), predict_logits(b, repo.vectors))


def test_bad_labels_rejected():
    repo = toy_repo()
    repo.labels[0] = 3
    with pytest.raises(ClassifierError):
        train_classifier(repo, ClassifierConfig(n_classes=2, group_size=2, embed_dim=8, heads=2), TrainConfig(epochs=1))


def test_save_load_round_trip(tmp_path):
    repo = toy_repo()
    c = ClassifierConfig(n_classes=2, group_size=4, embed_dim=8, depth=3, heads=2, seed=7)
    model, _ = train_classifier(repo, c, TrainConfig(epochs=2, batch_size=5, seed=1))
    back = load_classifier(save_classifier(model, tmp_path / "c.ckpt"))
    assert np.array_equal(predict_logits(model, repo.vectors), predict_logits(back, repo.vectors))


def test_build_is_seeded():
    a, b = build_classifier(cfg(seed=3), 20), build_classifier(cfg(seed=3), 20)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
