# Evaluation metrics on a synthetic crowd: ADE/FDE, best-of-K and KDE NLL.
#
# Run: python3 demos/metrics_and_baseline.py

import numpy as np

from socialvae.data import make_windows
from socialvae.metrics import ade, best_of_k, fde, linear_baseline, nll_kde
from socialvae.synthetic import simulate_crowd

scene = simulate_crowd(n_agents=30, n_frames=120, seed=2)
windows = make_windows(scene)
print(f"{len(windows)} windows of 8 observed + 12 future frames")

# Constant-velocity extrapolation is the standard sanity baseline.
for mode in ("mean", "last"):
    pred = [linear_baseline(w.obs_positions, 12, mode) for w in windows]
    a = np.mean([ade(p, w.fut_positions) for p, w in zip(pred, windows)])
    f = np.mean([fde(p, w.fut_positions) for p, w in zip(pred, windows)])
    print(f"linear ({mode} velocity): ADE {a:.3f}  FDE {f:.3f}")

# Best-of-K rewards a set of guesses if any one of them is close.
# Jittering the baseline with noise shows how K changes the score.
rng = np.random.default_rng(0)
w = windows[0]
base = linear_baseline(w.obs_positions)
noisy = base + np.cumsum(rng.normal(scale=0.08, size=(200, 12, 2)), axis=1)
for k in (1, 5, 20, 200):
    print(f"best of {k:3d}: ADE/FDE %.3f / %.3f" % best_of_k(noisy[:k], w.fut_positions))

# NLL looks at the whole predicted distribution rather than the best guess.
# Lower is better; a tight, wrong prediction is punished hard.
wide = base + np.cumsum(rng.normal(scale=0.15, size=(2000, 12, 2)), axis=1)
tight = base + np.cumsum(rng.normal(scale=0.03, size=(2000, 12, 2)), axis=1)
print("NLL per step, wide spread:  %.2f" % nll_kde(wide, w.fut_positions).mean)
print("NLL per step, tight spread: %.2f" % nll_kde(tight, w.fut_positions).mean)
