"""Timewise VAE for trajectory prediction with social-feature attention."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import geometry
from .data import Batch, ObservationWindow, collate
from .nn import (MLP, DiagGaussian, GaussianHead, GRUCell, Linear, Module, Tensor,
                 TrainingError, as_tensor, concat, gaussian_log_density, gaussian_sample,
                 kl_diag_gaussians, masked_softmax, no_grad)


@dataclass
class ModelConfig:
    latent_dim: int = 32
    obs_hidden: int = 256
    rnn_hidden: int = 256
    embed_dim: int = 64
    attn_dim: int = 32
    head_hidden: int = 128
    mpd_horizon: float = geometry.DEFAULT_MPD_HORIZON
    kl_estimator: str = "closed_form"   # or "sample"
    dtype: str = "float32"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedObservation:
    q_states: list            # T tensors (B, obs_hidden)
    h_init: Tensor            # (B, rnn_hidden)
    attention: np.ndarray     # (B, T, N); row 0 is zero (no attention at the first frame)
    last_position: np.ndarray  # (B, 2) float64
    last_disp: np.ndarray     # (B, 2) float64


@dataclass
class RolloutSample:
    latents: np.ndarray        # (B, H, latent_dim)
    displacements: np.ndarray  # (B, H, 2)
    offsets: np.ndarray        # (B, H, 2) running sum of displacements
    positions: np.ndarray      # (B, H, 2) last observed position + offsets
    dec_mean: np.ndarray | None = None
    dec_log_var: np.ndarray | None = None

    def __len__(self):
        return len(self.displacements)

    def take(self, idx) -> "RolloutSample":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return RolloutSample(*(pick(getattr(self, f)) for f in
                               ("latents", "displacements", "offsets", "positions",
                                "dec_mean", "dec_log_var")))


class SocialVAE(Module):
    """All learnable blocks.

    Observation side: ``f_s``, ``f_n``, ``f_init``, ``f_q``, ``f_k`` and the
    observation GRU. Generative side: ``psi_h``, ``psi_zd``, forward GRU,
    prior and decoder heads. Inference side (training only): its own
    ``f_s``/``f_n``, the backward GRU and the posterior head.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = cfg = config or ModelConfig()
        rng = np.random.default_rng(seed)
        dt = np.dtype(cfg.dtype)
        E, A, Q, R, Z, Hh = (cfg.embed_dim, cfg.attn_dim, cfg.obs_hidden, cfg.rnn_hidden,
                             cfg.latent_dim, cfg.head_hidden)
        self.f_s = MLP([4, E], rng, dt)
        self.f_n = MLP([4, E], rng, dt)
        self.f_init = MLP([2, Q], rng, dt)
        self.f_q = MLP([Q, A], rng, dt)
        self.f_k = MLP([3, A], rng, dt)
        self.obs_gru = GRUCell(2 * E, Q, rng, dt)
        self.psi_h = Linear(Q, R, rng, dt)
        self.psi_zd = MLP([Z + 2, E], rng, dt)
        self.fwd_gru = GRUCell(E, R, rng, dt)
        self.prior = GaussianHead(R, [Hh], Z, rng, dt)
        self.decoder = GaussianHead(Z + R, [Hh], 2, rng, dt)
        self.b_f_s = MLP([4, E], rng, dt)
        self.b_f_n = MLP([4, E], rng, dt)
        self.bwd_gru = GRUCell(2 * E, R, rng, dt)
        self.posterior = GaussianHead(2 * R, [Hh], Z, rng, dt)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def _t(self, x) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))


def _as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    if isinstance(data, ObservationWindow):
        return collate([data])
    return collate(list(data))


def _frame_inputs(batch: Batch, t: int, horizon: float):
    """Self-state, neighbour states and social features at window frame ``t`` (t >= 1)."""
    pos = batch.positions
    d_t = pos[:, t] - pos[:, t - 1]
    d_prev = pos[:, t - 1] - pos[:, t - 2] if t >= 2 else d_t
    s = geometry.self_state(d_t, d_prev)
    nb = geometry.neighbor_state(pos[:, t, None], d_t[:, None], batch.nb_pos[:, t], batch.nb_disp[:, t])
    # relative velocity per second uses each window's own frame interval
    feats = geometry.social_features(
        nb[..., :2], nb[..., 2:] / batch.frame_dt[:, None, None], d_t[:, None], 1.0, horizon)
    return s, nb, feats.stack(), batch.nb_mask[:, t]


def encode_observation(params: SocialVAE, data) -> EncodedObservation:
    """Run the observation GRU with per-frame neighbour attention over the observed frames."""
    batch = _as_batch(data)
    T = batch.obs_len
    if T < 2:
        raise ValueError("observation needs at least 2 frames")
    B, N = batch.nb_mask.shape[0], batch.nb_mask.shape[2]
    cfg = params.config
    m0 = batch.nb_mask[:, 0].astype(params.dtype)[..., None]
    rel0 = params._t(batch.nb_pos[:, 0] - batch.positions[:, 0, None])
    q = (params.f_init(rel0) * m0).sum(axis=1)
    q_states = [q]
    attention = np.zeros((B, T, N))
    for t in range(1, T):
        s, nb, k, mask = _frame_inputs(batch, t, cfg.mpd_horizon)
        fq = params.f_q(q).reshape(B, 1, cfg.attn_dim)
        fk = params.f_k(params._t(k))
        e = (fk * fq).sum(axis=-1).leaky_relu()
        w = masked_softmax(e, mask)
        attention[:, t] = w.data
        fn = params.f_n(params._t(nb))
        social = (fn * w.reshape(B, N, 1)).sum(axis=1)
        obs = concat([params.f_s(params._t(s)), social])
        q = params.obs_gru(obs, q)
        q_states.append(q)
    pos = batch.positions
    return EncodedObservation(q_states, params.psi_h(q), attention,
                              pos[:, T - 1].copy(), pos[:, T - 1] - pos[:, T - 2])


def backward_pass(params: SocialVAE, data) -> list:
    """Backward-recurrent states over the future frames, first future frame first.

    Future neighbours are summed with unit weights.
    """
    batch = _as_batch(data)
    H = batch.pred_len
    if H < 1:
        raise ValueError("backward pass needs ground-truth future frames")
    T = batch.obs_len
    B = len(batch)
    b = params._t(np.zeros((B, params.config.rnn_hidden)))
    states = [None] * H
    for k in reversed(range(H)):
        s, nb, _, mask = _frame_inputs(batch, T + k, params.config.mpd_horizon)
        fn = params.b_f_n(params._t(nb)) * mask.astype(params.dtype)[..., None]
        obs = concat([params.b_f_s(params._t(s)), fn.sum(axis=1)])
        b = params.bwd_gru(obs, b)
        states[k] = b
    return states


def _draw_noise(rng: np.random.Generator, B: int, H: int, Z: int, dtype):
    return (rng.standard_normal((B, H, Z)).astype(dtype),
            rng.standard_normal((B, H, 2)).astype(dtype))


def rollout(params: SocialVAE, encoded: EncodedObservation, n_steps: int,
            rng: np.random.Generator, mean_only: bool = False,
            keep_distributions: bool = False) -> RolloutSample:
    """Sample latents from the conditional prior and displacements from the decoder."""
    B = encoded.h_init.shape[0]
    Z = params.config.latent_dim
    eps_z, eps_d = _draw_noise(rng, B, n_steps, Z, params.dtype)
    h = encoded.h_init
    zs, ds, means, logvars = [], [], [], []
    with no_grad():
        for k in range(n_steps):
            prior = params.prior(h)
            z = gaussian_sample(prior, eps_z[:, k])
            dec = params.decoder(concat([z, h]))
            d = dec.mean if mean_only else gaussian_sample(dec, eps_d[:, k])
            h = params.fwd_gru(params.psi_zd(concat([z, d])), h)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"non-finite recurrent state at prediction step {k + 1}")
            zs.append(z.data)
            ds.append(d.data)
            if keep_distributions:
                means.append(dec.mean.data)
                logvars.append(dec.log_var.data)
    d = np.stack(ds, axis=1)
    offsets = np.cumsum(d, axis=1)
    return RolloutSample(
        latents=np.stack(zs, axis=1), displacements=d, offsets=offsets,
        positions=encoded.last_position[:, None, :] + offsets,
        dec_mean=np.stack(means, axis=1) if keep_distributions else None,
        dec_log_var=np.stack(logvars, axis=1) if keep_distributions else None)


def repeat_encoded(encoded: EncodedObservation, k: int) -> EncodedObservation:
    rep = lambda a: np.repeat(a, k, axis=0)  # noqa: E731
    return EncodedObservation([Tensor(rep(q.data)) for q in encoded.q_states],
                              Tensor(rep(encoded.h_init.data)), rep(encoded.attention),
                              rep(encoded.last_position), rep(encoded.last_disp))


@dataclass
class LossTerms:
    loss: Tensor
    recon: float
    kl: float


def training_loss(params: SocialVAE, data, rng: np.random.Generator) -> LossTerms:
    """Squared error on cumulative displacements plus KL(posterior || prior), averaged.

    Latents come from the posterior and displacements from the decoder, each
    sampled once with the reparameterization trick. Call
    ``result.loss.backward()`` to populate parameter gradients.
    """
    batch = _as_batch(data)
    T, H, B = batch.obs_len, batch.pred_len, len(batch)
    if H < 1:
        raise ValueError("training needs ground-truth future frames")
    cfg = params.config
    enc = encode_observation(params, batch.observed())
    b_states = backward_pass(params, batch)
    eps_z, eps_d = _draw_noise(rng, B, H, cfg.latent_dim, params.dtype)
    target = params._t(batch.positions[:, T:] - batch.positions[:, T - 1, None])
    h = enc.h_init
    cum = None
    recon_total = None
    kl_total = None
    for k in range(H):
        prior = params.prior(h)
        post = params.posterior(concat([b_states[k], h]))
        z = gaussian_sample(post, eps_z[:, k])
        dec = params.decoder(concat([z, h]))
        d = gaussian_sample(dec, eps_d[:, k])
        h = params.fwd_gru(params.psi_zd(concat([z, d])), h)
        cum = d if cum is None else cum + d
        err = target[:, k] - cum
        recon = (err * err).sum(axis=-1)
        if cfg.kl_estimator == "closed_form":
            kl = kl_diag_gaussians(post, prior)
        elif cfg.kl_estimator == "sample":
            kl = gaussian_log_density(post, z) - gaussian_log_density(prior, z)
        else:
            raise ValueError(f"unknown kl_estimator {cfg.kl_estimator!r}")
        recon_total = recon if recon_total is None else recon_total + recon
        kl_total = kl if kl_total is None else kl_total + kl
    scale = 1.0 / (H * B)
    loss = (recon_total + kl_total).sum() * scale
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite training loss")
    return LossTerms(loss, float(recon_total.data.sum() * scale), float(kl_total.data.sum() * scale))


def predict(params: SocialVAE, data, n_samples: int, rng: np.random.Generator,
            mean_only: bool = False, n_steps: int | None = None,
            ) -> tuple[RolloutSample, EncodedObservation]:
    """Draw ``n_samples`` rollouts per window.

    Returned arrays are shaped (B, K, H, ...) with windows in input order.
    """
    batch = _as_batch(data)
    with no_grad():
        enc = encode_observation(params, batch.observed())
    H = n_steps or batch.pred_len
    if H < 1:
        raise ValueError("prediction horizon must be at least 1 frame")
    sample = rollout(params, repeat_encoded(enc, n_samples), H, rng, mean_only=mean_only)
    B = len(batch)
    reshape = lambda a: a.reshape(B, n_samples, *a.shape[1:])  # noqa: E731
    return RolloutSample(reshape(sample.latents), reshape(sample.displacements),
                         reshape(sample.offsets), reshape(sample.positions)), enc
