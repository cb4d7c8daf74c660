import numpy as np
import pytest

from conftest import tiny_model
from oracles import central_difference, max_relative_error
from socialvae.data import ObservationWindow, collate, transform_window
from socialvae.model import (ModelConfig, SocialVAE, backward_pass, encode_observation, predict,
                             rollout, training_loss)


def window(nb_offsets=(), T=8, H=12, speed=0.5):
    """Target walking along +x with neighbours at fixed offsets moving alongside."""
    L = T + H
    pos = np.column_stack([np.arange(L) * speed, np.zeros(L)])
    n = len(nb_offsets)
    nb_pos = np.zeros((L, n, 2))
    for j, off in enumerate(nb_offsets):
        nb_pos[:, j] = pos + np.asarray(off)
    nb_disp = np.zeros_like(nb_pos)
    nb_disp[1:] = np.diff(nb_pos, axis=0)
    return ObservationWindow("a", "s", 0, pos, np.arange(n), nb_pos, nb_disp,
                             np.ones((L, n), dtype=bool), obs_len=T, frame_dt=0.4)


def test_default_config_is_float32():
    m = SocialVAE(ModelConfig(), seed=0)
    assert m.dtype == np.float32
    assert m.config.latent_dim == 32
    names = [n for n, _ in m.named_params()]
    assert len(names) == len(set(names))
    assert any(n.startswith("posterior.") for n in names)


def test_single_neighbour_gets_full_attention():
    enc = encode_observation(tiny_model(), window([(1.0, 2.0)]))
    np.testing.assert_allclose(enc.attention[0, 1:, 0], 1.0)
    np.testing.assert_array_equal(enc.attention[0, 0], 0.0)


def test_mirrored_neighbours_share_attention():
    enc = encode_observation(tiny_model(), window([(1.0, 2.0), (1.0, -2.0)]))
    np.testing.assert_allclose(enc.attention[0, 1:], 0.5, atol=1e-12)


def test_no_neighbours():
    m = tiny_model()
    enc = encode_observation(m, window([]))
    assert np.all(enc.attention == 0.0)
    assert np.all(np.isfinite(enc.h_init.data))
    # a fully masked neighbour behaves like no neighbour
    w = window([(3.0, 0.0)])
    w.nb_mask[:] = False
    np.testing.assert_allclose(encode_observation(m, w).h_init.data, enc.h_init.data)


def test_neighbour_order_does_not_matter():
    m = tiny_model()
    w = window([(1.0, 2.0), (-3.0, 0.5), (2.0, -1.0)])
    perm = [2, 0, 1]
    w2 = ObservationWindow("a", "s", 0, w.positions, w.nb_ids[perm], w.nb_pos[:, perm],
                           w.nb_disp[:, perm], w.nb_mask[:, perm], 8, 0.4)
    e1, e2 = encode_observation(m, w), encode_observation(m, w2)
    np.testing.assert_allclose(e1.h_init.data, e2.h_init.data, atol=1e-12)
    np.testing.assert_allclose(e1.attention[0][:, perm], e2.attention[0], atol=1e-12)
    b1, b2 = backward_pass(m, w), backward_pass(m, w2)
    for s1, s2 in zip(b1, b2):
        np.testing.assert_allclose(s1.data, s2.data, atol=1e-12)
    l1 = training_loss(m, w, np.random.default_rng(0)).loss.data
    l2 = training_loss(m, w2, np.random.default_rng(0)).loss.data
    assert l1 == pytest.approx(l2, abs=1e-12)


def test_backward_pass_shapes_and_zero_params():
    m = tiny_model()
    states = backward_pass(m, window([(1.0, 0.0)], H=1))
    assert len(states) == 1 and states[0].shape == (1, 8)
    for p in m.bwd_gru.params():
        p.data[:] = 0.0
    for s in backward_pass(m, window([(1.0, 0.0)], H=3)):
        np.testing.assert_array_equal(s.data, 0.0)
    with pytest.raises(ValueError):
        backward_pass(m, window([], H=0))


def test_rollout_cumsum_identity_and_seed_determinism():
    m = tiny_model()
    enc = encode_observation(m, collate([window([(1.0, 1.0)]), window([])]))
    a = rollout(m, enc, 5, np.random.default_rng(3))
    b = rollout(m, enc, 5, np.random.default_rng(3))
    c = rollout(m, enc, 5, np.random.default_rng(4))
    np.testing.assert_array_equal(a.positions, b.positions)
    assert not np.allclose(a.positions, c.positions)
    np.testing.assert_allclose(a.offsets, np.cumsum(a.displacements, axis=1))
    np.testing.assert_allclose(a.positions, enc.last_position[:, None] + a.offsets)
    assert a.latents.shape == (2, 5, 4)


def test_rollout_deterministic_limit():
    # with the prior and decoder variances pinned at the floor every sample
    # collapses onto the mean path
    m = tiny_model()
    for head in (m.prior, m.decoder):
        n = head.n_out
        head.out.weight.data[:, n:] = 0.0
        head.out.bias.data[n:] = -1e3
    enc = encode_observation(m, window([(1.0, 1.0)]))
    a = rollout(m, enc, 6, np.random.default_rng(0))
    b = rollout(m, enc, 6, np.random.default_rng(1))
    np.testing.assert_allclose(a.positions, b.positions, atol=0.2)
    mean = rollout(m, enc, 6, np.random.default_rng(2), mean_only=True, keep_distributions=True)
    np.testing.assert_allclose(mean.displacements, mean.dec_mean)
    np.testing.assert_allclose(a.displacements, mean.displacements, atol=0.1)


def test_predict_shapes():
    m = tiny_model()
    s, enc = predict(m, collate([window([]), window([(2.0, 0.0)])]), 7, np.random.default_rng(0))
    assert s.positions.shape == (2, 7, 12, 2)
    assert enc.attention.shape == (2, 8, 1)
    s1, _ = predict(m, window([]), 3, np.random.default_rng(0), n_steps=1)
    assert s1.latents.shape == (1, 3, 1, 4)


def test_loss_nonnegative_and_both_estimators():
    w = collate([window([(1.0, 1.0)]), window([])])
    m = tiny_model()
    r = training_loss(m, w, np.random.default_rng(0))
    assert r.recon >= 0 and r.kl >= 0
    assert float(r.loss.data) == pytest.approx(r.recon + r.kl)
    ms = tiny_model(kl_estimator="sample")
    rs = training_loss(ms, w, np.random.default_rng(0))
    assert np.isfinite(rs.loss.data)
    with pytest.raises(ValueError):
        training_loss(tiny_model(kl_estimator="bogus"), w, np.random.default_rng(0))


def test_prior_ignores_future_posterior_uses_it():
    m = tiny_model()
    w = window([(1.0, 1.0)])
    moved = window([(1.0, 1.0)])
    moved.positions[8:] += np.array([0.0, 1.5])
    e1, e2 = encode_observation(m, collate([w]).observed()), encode_observation(m, collate([moved]).observed())
    np.testing.assert_array_equal(e1.h_init.data, e2.h_init.data)
    b1, b2 = backward_pass(m, w), backward_pass(m, moved)
    assert not np.allclose(b1[0].data, b2[0].data)


@pytest.mark.parametrize("shift", [(100.0, -50.0), (-3.0, 7.5)])
def test_translation_invariance(shift):
    m = tiny_model()
    w = window([(1.0, 2.0), (-2.0, 0.5)])
    w2 = transform_window(w, np.eye(2))
    w2.positions = w.positions + shift
    w2.nb_pos = w.nb_pos + shift
    a, _ = predict(m, w, 5, np.random.default_rng(0))
    b, _ = predict(m, w2, 5, np.random.default_rng(0))
    np.testing.assert_allclose(b.displacements, a.displacements, atol=1e-9)
    np.testing.assert_allclose(b.positions, a.positions + shift, atol=1e-9)


def test_full_loss_gradient_matches_finite_differences():
    m = tiny_model(seed=1)
    g = np.random.default_rng(5)
    for p in m.params():
        p.data += g.normal(scale=0.05, size=p.data.shape)
    w = window([(1.0, 1.5)], T=4, H=3)

    def loss():
        return training_loss(m, w, np.random.default_rng(11)).loss
    m.zero_grad()
    loss().backward()
    for name, p in m.named_params()[::7]:
        num = central_difference(lambda: float(loss().data), p)
        assert max_relative_error(p.grad, num) < 1e-4, name
