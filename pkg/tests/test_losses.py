import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jdsr.autodiff import DimensionError, Tensor, check_gradients, checkpoint
from jdsr.autodiff import functional as F
from jdsr.losses import (CriticScores, LossWeights, d_loss_ragan, d_loss_standard_gan, g_loss_ragan,
                         g_loss_standard_gan, g_loss_tragan, identity_extractor, l1_loss, mse_loss,
                         perceptual_loss, random_conv_extractor, relativistic_logits, total_generator_loss,
                         vgg19_extractor)

LN2 = math.log(2)
ADVERSARIAL_LOSSES = [d_loss_ragan, g_loss_ragan, lambda s: g_loss_tragan(s, 1.0), lambda s: g_loss_tragan(s, 2.5)]

score_arrays = st.lists(st.floats(-20, 20), min_size=1, max_size=8).map(np.array)


def sigmoid(x):
    return 1 / (1 + math.exp(-x))


def scores(real, fake, grad=False):
    return CriticScores(Tensor(np.asarray(real, float), requires_grad=grad),
                        Tensor(np.asarray(fake, float), requires_grad=grad))


# -- pixel and perceptual ------------------------------------------------------------

def test_l1_basic(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    assert l1_loss(Tensor(x), x).item() == 0
    assert l1_loss(Tensor(x + 0.25), x).item() == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(DimensionError):
        l1_loss(Tensor(x), x[:, :2])


def test_l1_subgradient_matches_sign(rng):
    sr = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    hr = rng.normal(size=(1, 2, 3, 3))
    l1_loss(sr, hr).backward()
    np.testing.assert_array_equal(sr.grad, np.sign(sr.data - hr) / sr.size)
    errs = check_gradients(lambda: l1_loss(sr, hr), [sr])
    assert errs[0] < 1e-6


def test_perceptual_identity_is_mse_bitwise(rng):
    a, b = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(2, 3, 5, 5))
    got = perceptual_loss(Tensor(a), b, identity_extractor).item()
    assert got == mse_loss(Tensor(a), b).item() == np.mean((a - b) ** 2)


def test_perceptual_zero_when_equal(rng):
    ext = random_conv_extractor(seed=1, dtype=np.float64)
    x = rng.uniform(size=(1, 3, 16, 16))
    assert perceptual_loss(Tensor(x), x, ext).item() == 0


def test_perceptual_decreases_along_line_for_linear_extractor(rng):
    ext = random_conv_extractor(seed=2, layer=1, dtype=np.float64)  # a single conv: affine
    sr, hr = rng.uniform(size=(1, 3, 12, 12)), rng.uniform(size=(1, 3, 12, 12))
    losses = [perceptual_loss(Tensor(sr + t * (hr - sr)), hr, ext).item() for t in np.linspace(0, 1, 11)]
    # affine features: the loss is (1 - t)^2 times its starting value
    np.testing.assert_allclose(losses, [(1 - t) ** 2 * losses[0] for t in np.linspace(0, 1, 11)],
                               rtol=1e-9, atol=1e-15)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_random_extractor_frozen_and_seeded():
    a, b = random_conv_extractor(seed=3), random_conv_extractor(seed=3)
    assert all(not p.requires_grad for p in a.parameters())
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert a(Tensor(np.zeros((1, 3, 8, 8), np.float32))).shape == (1, 32, 4, 4)


def test_perceptual_gradient(rng):
    ext = random_conv_extractor(seed=0, dtype=np.float64)
    sr = Tensor(rng.uniform(size=(1, 3, 8, 8)), requires_grad=True)
    hr = rng.uniform(size=(1, 3, 8, 8))
    errs = check_gradients(lambda: perceptual_loss(sr, hr, ext), [sr], max_coords=40)
    assert errs[0] < 1e-4


def test_vgg19_loader_first_conv(tmp_path, rng):
    arrays = {"features.0.weight": rng.normal(size=(64, 3, 3, 3)).astype(np.float32),
              "features.0.bias": rng.normal(size=64).astype(np.float32)}
    path = tmp_path / "vgg.jdsr"
    checkpoint.save(path, arrays)
    ext = vgg19_extractor(path, layer=1, dtype=np.float64)
    x = rng.uniform(size=(1, 3, 6, 6))
    norm = (x - np.array([0.485, 0.456, 0.406]).reshape(1, 3, 1, 1)) / np.array([0.229, 0.224, 0.225]).reshape(1, 3, 1, 1)
    expected = F.conv2d(Tensor(norm), Tensor(arrays["features.0.weight"].astype(np.float64)),
                        Tensor(arrays["features.0.bias"].astype(np.float64)), padding=1).data
    np.testing.assert_allclose(ext(Tensor(x)).data, expected, rtol=1e-12, atol=1e-12)
    with pytest.raises(KeyError):
        vgg19_extractor(path, layer=2)


# -- relativistic logits --------------------------------------------------------------

def test_relativistic_logits_examples():
    d_r, d_f = relativistic_logits(scores([0.3, 0.3], [0.3, 0.3, 0.3]))
    assert np.all(d_r.data == 0.5) and np.all(d_f.data == 0.5)
    d_r, d_f = relativistic_logits(scores([1.0], [0.0]))
    assert d_r.item() == pytest.approx(sigmoid(1), abs=1e-15)
    assert d_f.item() == pytest.approx(sigmoid(-1), abs=1e-15)
    assert d_r.item() == pytest.approx(0.7311, abs=1e-4)


def test_relativistic_logits_use_batch_means():
    real, fake = [1.0, 3.0], [0.0, 2.0, 4.0]
    d_r, d_f = relativistic_logits(scores(real, fake))
    np.testing.assert_allclose(d_r.data, [sigmoid(r - 2.0) for r in real], rtol=1e-15)
    np.testing.assert_allclose(d_f.data, [sigmoid(f - 2.0) for f in fake], rtol=1e-15)


def test_empty_scores_rejected():
    with pytest.raises(ValueError):
        scores([], [1.0])


# -- adversarial losses ----------------------------------------------------------------

@pytest.mark.parametrize("loss", [d_loss_ragan, g_loss_ragan])
def test_equilibrium_two_ln2(loss):
    assert loss(scores([0.7] * 4, [0.7] * 3)).item() == pytest.approx(2 * LN2, abs=1e-9)


def test_tragan_equilibrium_gamma_one():
    assert g_loss_tragan(scores([0.0] * 2, [0.0] * 2), 1.0).item() == pytest.approx(LN2, abs=1e-12)


def test_d_loss_separated_limit():
    assert d_loss_ragan(scores([30.0], [-30.0])).item() < 1e-6


def test_d_loss_decreases_with_real_scores(rng):
    base = rng.normal(size=4)
    fake = rng.normal(size=4)
    vals = [d_loss_ragan(scores(base + k, fake)).item() for k in np.linspace(0, 3, 7)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    s = scores(base, fake, grad=True)
    d_loss_ragan(s).backward()
    assert np.all(s.real.grad < 0)


def test_g_loss_is_role_swapped_d_loss(rng):
    real, fake = rng.normal(size=5), rng.normal(size=3)
    assert g_loss_ragan(scores(real, fake)).item() == pytest.approx(d_loss_ragan(scores(fake, real)).item(),
                                                                     abs=1e-12)


def test_g_loss_pushes_fake_scores_up(rng):
    s = scores(rng.normal(size=4), rng.normal(size=4), grad=True)
    g_loss_ragan(s).backward()
    assert np.all(s.fake.grad < 0)


def test_tragan_gamma_zero_is_ragan_over_batches():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = scores(rng.normal(scale=3, size=rng.integers(1, 9)), rng.normal(scale=3, size=rng.integers(1, 9)))
        assert abs(g_loss_tragan(s, 0.0).item() - g_loss_ragan(s).item()) <= 1e-12


def test_tragan_by_hand():
    real, fake, gamma = [0.5, -1.0], [0.2, 1.5, -0.3], 1.7
    mr, mf = np.mean(real), np.mean(fake)
    dr = [sigmoid(r - mf) for r in real]
    df = [sigmoid(f - mr) for f in fake]
    oracle = (-np.mean([p ** gamma * math.log(1 - p) for p in dr])
              - np.mean([(1 - p) ** gamma * math.log(p) for p in df]))
    assert g_loss_tragan(scores(real, fake), gamma).item() == pytest.approx(oracle, abs=1e-12)


def test_tragan_downweights_easy_fakes():
    # a fake the critic already rates as very real barely moves the generator
    grads = {}
    for gamma in (0.0, 2.0):
        s = scores([0.0, 0.0], [0.0, 12.0], grad=True)
        g_loss_tragan(s, gamma).backward()
        grads[gamma] = abs(s.fake.grad[1]) / abs(s.fake.grad[0])
    _, d_f = relativistic_logits(scores([0.0, 0.0], [0.0, 12.0]))
    assert (1 - d_f.data[1]) ** 2 < 1e-10
    assert grads[2.0] < 1e-3 * grads[0.0]


def test_tragan_rejects_negative_gamma():
    with pytest.raises(ValueError):
        g_loss_tragan(scores([0.0], [0.0]), -1.0)


def test_standard_gan_at_zero():
    s = scores([0.0] * 3, [0.0] * 2)
    assert d_loss_standard_gan(s).item() == pytest.approx(2 * LN2, abs=1e-12)
    assert g_loss_standard_gan(s).item() == pytest.approx(LN2, abs=1e-12)
    assert d_loss_standard_gan(scores([40.0], [-40.0])).item() < 1e-6
    assert g_loss_standard_gan(scores([0.0], [1.3])).item() == pytest.approx(-math.log(sigmoid(1.3)), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(real=score_arrays, fake=score_arrays, k=st.floats(-50, 50))
def test_translation_invariance(real, fake, k):
    for loss in ADVERSARIAL_LOSSES:
        a = loss(scores(real, fake)).item()
        b = loss(scores(real + k, fake + k)).item()
        assert abs(a - b) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(real=score_arrays, fake=score_arrays)
def test_losses_non_negative(real, fake):
    s = scores(real, fake)
    for loss in ADVERSARIAL_LOSSES + [d_loss_standard_gan, g_loss_standard_gan]:
        v = loss(s).item()
        assert math.isfinite(v) and v >= 0


def test_extreme_scores_finite():
    s = scores([1e4], [-1e4])
    for loss in ADVERSARIAL_LOSSES + [d_loss_standard_gan, g_loss_standard_gan]:
        assert math.isfinite(loss(s).item())


@pytest.mark.parametrize("idx", range(6))
def test_score_gradients(rng, idx):
    loss = (ADVERSARIAL_LOSSES + [d_loss_standard_gan, g_loss_standard_gan])[idx]
    s = scores(rng.normal(size=4), rng.normal(size=3), grad=True)
    errs = check_gradients(lambda: loss(s), [s.real, s.fake])
    assert max(errs.values()) < 1e-4


# -- total loss ---------------------------------------------------------------------

def test_total_loss_composition_by_hand(rng):
    sr, hr = rng.uniform(size=(2, 3, 6, 6)), rng.uniform(size=(2, 3, 6, 6))
    real, fake = [0.4, -0.2], [1.1, 0.3]
    w = LossWeights(adversarial=5e-3, l1=1e-2, gamma=1.0)
    s = scores(real, fake)
    mr, mf = np.mean(real), np.mean(fake)
    dr = [sigmoid(r - mf) for r in real]
    df = [sigmoid(f - mr) for f in fake]
    adv = -np.mean([p * math.log(1 - p) for p in dr]) - np.mean([(1 - p) * math.log(p) for p in df])
    oracle = np.mean((sr - hr) ** 2) + 5e-3 * adv + 1e-2 * np.mean(np.abs(sr - hr))
    parts = {}
    got = total_generator_loss(Tensor(sr), hr, s, w, identity_extractor, parts).item()
    assert got == pytest.approx(oracle, abs=1e-9)
    assert set(parts) == {"perceptual", "adversarial", "l1"}
    assert parts["adversarial"] == pytest.approx(adv, abs=1e-12)


def test_total_loss_limits(rng):
    sr, hr = rng.uniform(size=(1, 3, 8, 8)), rng.uniform(size=(1, 3, 8, 8))
    ext = random_conv_extractor(dtype=np.float64)
    s = scores(rng.normal(size=2), rng.normal(size=2))
    got = total_generator_loss(Tensor(sr), hr, s, LossWeights(0, 0), ext).item()
    assert got == perceptual_loss(Tensor(sr), hr, ext).item()
    eq = total_generator_loss(Tensor(hr), hr, scores([0.0], [0.0]), LossWeights(5e-3, 1e-2, gamma=0.0), ext)
    assert eq.item() == pytest.approx(5e-3 * 2 * LN2, abs=1e-12)


def test_default_loss_weights():
    w = LossWeights()
    assert (w.adversarial, w.l1) == (5e-3, 1e-2)
    with pytest.raises(ValueError):
        LossWeights(adversarial=-1)


def test_total_loss_gradient_wrt_sr(rng):
    sr = Tensor(rng.uniform(size=(1, 3, 8, 8)), requires_grad=True)
    hr = rng.uniform(size=(1, 3, 8, 8))
    ext = random_conv_extractor(seed=5, dtype=np.float64)
    real = Tensor(rng.normal(size=1))

    def f():
        fake = F.reshape(F.mean(sr), (1,)) * 3.0  # a stand-in critic so the adversarial term depends on sr
        return total_generator_loss(sr, hr, CriticScores(real, fake), LossWeights(0.5, 0.2), ext)

    errs = check_gradients(f, [sr], max_coords=40)
    assert errs[0] < 1e-4
