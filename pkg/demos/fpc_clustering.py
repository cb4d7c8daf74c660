# Final position clustering on a hand-made set of predictions.
#
# Draw many candidate trajectories, cluster their end points, and keep the
# real sample nearest each cluster centre. Run: python3 demos/fpc_clustering.py

import numpy as np

from socialvae.fpc import fpc_select
from socialvae.metrics import best_of_k
from socialvae.model import RolloutSample

rng = np.random.default_rng(4)
H = 12
K = 5
ANGLES = np.array([0.6, 0.0, -0.6])


# A pedestrian at a fork: 80% of samples go left, 15% straight, 5% right.
def draw(n):
    branch = rng.choice(3, size=n, p=[0.8, 0.15, 0.05])
    angle = ANGLES[branch] + rng.normal(scale=0.05, size=n)
    speed = 0.5 + rng.normal(scale=0.03, size=n)
    step = np.stack([np.cos(angle), np.sin(angle)], -1) * speed[:, None]
    disp = np.repeat(step[:, None], H, axis=1)
    pos = np.cumsum(disp, axis=1)
    return RolloutSample(np.zeros((n, H, 1)), disp, pos, pos), branch


# This time the pedestrian takes the rare right-hand branch.
truth = np.cumsum(np.tile([0.5 * np.cos(-0.6), 0.5 * np.sin(-0.6)], (H, 1)), axis=0)

trials = 200
plain_hits, fpc_hits, plain_fde, fpc_fde = 0, 0, [], []
for _ in range(trials):
    plain, plain_branch = draw(K)
    plain_hits += 2 in plain_branch
    plain_fde.append(best_of_k(plain.positions, truth)[1])
    many, many_branch = draw(K * 20)
    picked = fpc_select(many, K, seed=0)
    fpc_hits += 2 in many_branch[picked.indices]
    fpc_fde.append(best_of_k(picked.samples.positions, truth)[1])
    # every kept trajectory was actually drawn, never an average
    assert np.array_equal(picked.samples.positions, many.positions[picked.indices])

print(f"random {K}:       right branch covered in {plain_hits / trials:5.1%} of trials,"
      f" mean best FDE {np.mean(plain_fde):.2f}")
print(f"FPC {K} of {K * 20}: right branch covered in {fpc_hits / trials:5.1%} of trials,"
      f" mean best FDE {np.mean(fpc_fde):.2f}")

# Clustering spends the K slots on distinct end points instead of
# on the most likely branch over and over.
