# What the attention mechanism sees: distance, bearing and minimal predicted distance.
#
# Each neighbour is summarised by three numbers relative to the target agent.
# Run: python3 demos/social_features.py

import numpy as np

from socialvae.geometry import social_features

# The target walks along +x at 0.5 m per frame (0.4 s frames, so 1.25 m/s).
heading = np.array([0.5, 0.0])

cases = {
    "ahead, walking towards us": ([6.0, 0.0], [-0.5, 0.0]),
    "ahead, same direction": ([6.0, 0.0], [0.5, 0.0]),
    "behind, catching up": ([-4.0, 0.0], [0.8, 0.0]),
    "to the left, crossing our path": ([4.0, 3.0], [0.5, -0.4]),
    "far away, standing still": ([15.0, 10.0], [0.0, 0.0]),
}

print(f"{'neighbour':34s} {'dist':>6s} {'bearing':>8s} {'mpd':>6s}")
for name, (rel_pos, nb_disp) in cases.items():
    rel_vel = np.asarray(nb_disp) - heading
    f = social_features(rel_pos, rel_vel, heading, frame_dt=0.4)
    print(f"{name:34s} {float(f.distance):6.2f} {float(f.bearing_cos):8.2f} {float(f.mpd):6.2f}")

# The oncoming walker is 6 m away but will be on top of us soon: mpd is 0.
# The one walking with us keeps its distance, so mpd equals distance.
# A cosine near 1 means the neighbour is straight ahead, -1 straight behind.

# The whole thing broadcasts, so a frame with many neighbours is one call.
rng = np.random.default_rng(0)
pos = rng.uniform(-8, 8, size=(50, 2))
vel = rng.normal(scale=0.5, size=(50, 2))
feats = social_features(pos, vel - heading, heading, 0.4).stack()
print("\nfeature matrix for 50 neighbours:", feats.shape)
print("neighbours predicted to come within 1 m:", int((feats[:, 2] < 1.0).sum()))
