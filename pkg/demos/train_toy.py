# Train a small model on a synthetic crowd and compare it with the baseline.
#
# Everything goes through the same functions the command-line tool uses.
# Takes a couple of minutes on one core. Run: python3 demos/train_toy.py

import numpy as np

from socialvae import pipeline
from socialvae.config import RunConfig
from socialvae.data import make_windows
from socialvae.synthetic import simulate_crowd

train_scene = simulate_crowd(n_agents=40, n_frames=200, seed=10, scene_id="train")
test_scene = simulate_crowd(n_agents=40, n_frames=120, seed=11, scene_id="test")
train_w = make_windows(train_scene)
test = {"test": make_windows(test_scene)}

# Narrower than the defaults so this finishes quickly.
cfg = RunConfig().update({
    "obs_hidden": 64, "rnn_hidden": 64, "head_hidden": 64, "latent_dim": 16,
    "batch_size": 64, "steps": 600, "lr": 1e-3, "k": 20, "fpc_rate": 20,
    "nll_samples": 500, "max_windows": 150,
})


def show(step, loss, recon, kl):
    if step % 100 == 0:
        print(f"step {step:4d}  loss {loss:.4f}  (recon {recon:.4f}, kl {kl:.4f})")


result = pipeline.train(cfg, train_w, callback=show)

reports = pipeline.evaluate(cfg, result.model, test)
line = pipeline.baseline(cfg, test)
print()
print(f"linear baseline:        ADE {line.ade:.3f}  FDE {line.fde:.3f}")
print(f"sampled, best of 20:    ADE {reports['vanilla'].ade:.3f}  FDE {reports['vanilla'].fde:.3f}"
      f"  NLL {reports['vanilla'].nll:.2f}")
print(f"with FPC at rate 20:    ADE {reports['fpc'].ade:.3f}  FDE {reports['fpc'].fde:.3f}")

# Attention weights are kept with the encoding, one row per observed frame.
from socialvae.data import collate
from socialvae.model import predict
w = max(test["test"], key=lambda w: w.nb_mask[:8].sum())
_, enc = predict(result.model, collate([w]), 1, np.random.default_rng(0))
print("\nattention at the last observed frame:",
      {int(i): round(float(a), 2) for i, a, m in zip(w.nb_ids, enc.attention[0, -1], w.nb_mask[7]) if m})
