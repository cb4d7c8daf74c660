import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialvae.container import load_windows, save_windows
from socialvae.data import (AugmentationConfig, DataError, ParseError, TrajectoryScene, augment,
                            build_split, collate, make_windows, parse_trajectory_file,
                            rotation_matrix, transform_window)


def straight_scene(n_frames, agents=1, dt=0.4):
    tracks = {}
    for a in range(agents):
        f = np.arange(n_frames)
        tracks[a] = (f, np.column_stack([f * 0.5, np.full(n_frames, float(a))]))
    return TrajectoryScene.from_tracks("line", dt, tracks)


def test_parse_whitespace_file(tmp_path):
    p = tmp_path / "scene.txt"
    p.write_text("# frame id x y\n0\t1\t1.0\t2.0\n\n10 1 1.5 2.5\n0 2 -1 0\n")
    s = parse_trajectory_file(p, frame_dt=0.4)
    assert s.scene_id == "scene"
    assert list(s.frames) == [0, 10]
    np.testing.assert_allclose(s.positions_at(10)[1], [1.5, 2.5])
    assert set(s.positions_at(0)) == {1, 2}


def test_parse_columns_delimiter_and_scale(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("3,4,7,1\n")
    s = parse_trajectory_file(p, ("x", "y", "id", "frame"), ",", unit_scale=0.5)
    np.testing.assert_allclose(s.positions_at(1)[7], [1.5, 2.0])


def test_parse_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1 2 3\n")
    with pytest.raises(ParseError, match="line 1"):
        parse_trajectory_file(p)
    p.write_text("0 1 0 0\n0 1 x 0\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_trajectory_file(p)
    p.write_text("0 1 0 0\n0 1 1 1\n")
    with pytest.raises(DataError, match="repeated"):
        parse_trajectory_file(p)


def test_empty_file_gives_empty_scene(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    s = parse_trajectory_file(p)
    assert s.agents == []
    assert make_windows(s) == []


@pytest.mark.parametrize("n_frames,expected", [(19, 0), (20, 1), (21, 2), (25, 6)])
def test_window_counts(n_frames, expected):
    assert len(make_windows(straight_scene(n_frames))) == expected


def test_window_stride_and_gaps():
    assert len(make_windows(straight_scene(25), stride=2)) == 3
    f = np.concatenate([np.arange(10), np.arange(11, 40)])
    s = TrajectoryScene.from_tracks("gap", 0.4, {1: (f, np.column_stack([f, f])),
                                                 2: (np.arange(40), np.zeros((40, 2)))})
    # agent 1 is missing frame 10, so its windows must start after it
    starts = sorted(w.start_frame for w in make_windows(s) if w.target_id == 1)
    assert starts == list(range(11, 21))


def test_window_neighbours_and_masks():
    s = straight_scene(20, agents=3)
    w = [x for x in make_windows(s, radius=1.5) if x.target_id == 0][0]
    assert list(w.nb_ids) == [1]
    assert w.nb_mask.all()
    np.testing.assert_allclose(w.neighbor_states(5), [[0.0, 1.0, 0.0, 0.0]])
    np.testing.assert_allclose(w.obs_positions[-1], [3.5, 0.0])
    assert w.fut_positions.shape == (12, 2)
    np.testing.assert_allclose(w.target_displacements()[1:], 0.5 * np.tile([1.0, 0.0], (19, 1)))


def test_late_neighbour_has_zero_entry_displacement():
    f = np.arange(20)
    tracks = {0: (f, np.column_stack([f * 0.5, np.zeros(20)])),
              1: (f[5:], np.column_stack([f[5:] * 0.5, np.ones(15)]))}
    w = make_windows(TrajectoryScene.from_tracks("s", 0.4, tracks))
    w0 = [x for x in w if x.target_id == 0][0]
    assert not w0.nb_mask[4, 0] and w0.nb_mask[5, 0]
    np.testing.assert_array_equal(w0.nb_disp[5, 0], [0.0, 0.0])
    np.testing.assert_allclose(w0.nb_disp[6, 0], [0.5, 0.0])


def test_augment_disabled_is_identity(crowd_windows):
    w = crowd_windows[0]
    out = augment(w, AugmentationConfig(False, False), np.random.default_rng(0))
    assert out is w


def test_rotation_by_pi_about_last_observed():
    w = make_windows(straight_scene(20))[0]
    r = transform_window(w, rotation_matrix(math.pi))
    c = w.positions[w.obs_len - 1]
    np.testing.assert_allclose(r.positions, 2 * c - w.positions, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augment_preserves_pairwise_distances(seed):
    s = straight_scene(20, agents=2)
    w = make_windows(s, radius=5.0)[0]
    out = augment(w, AugmentationConfig(True, True), np.random.default_rng(seed))
    before = np.linalg.norm(w.nb_pos[:, 0] - w.positions, axis=-1)
    after = np.linalg.norm(out.nb_pos[:, 0] - out.positions, axis=-1)
    np.testing.assert_allclose(after, before, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(np.diff(out.positions, axis=0), axis=-1), 0.5, atol=1e-9)
    np.testing.assert_allclose(out.positions[w.obs_len - 1], w.positions[w.obs_len - 1], atol=1e-12)


def test_augment_is_deterministic(crowd_windows):
    cfg = AugmentationConfig()
    a = augment(crowd_windows[3], cfg, np.random.default_rng(9))
    b = augment(crowd_windows[3], cfg, np.random.default_rng(9))
    np.testing.assert_array_equal(a.positions, b.positions)


def test_splits():
    splits = build_split(["eth", "hotel", "univ"])
    assert [s.test for s in splits] == [["eth"], ["hotel"], ["univ"]]
    assert splits[0].train == ["hotel", "univ"]
    assert build_split([], "fixed", ["a"], ["b"])[0].test == ["b"]
    with pytest.raises(ValueError, match="overlap"):
        build_split([], "fixed", ["a", "b"], ["b"])
    with pytest.raises(ValueError):
        build_split(["a"])


def test_collate_pads_neighbours(crowd_windows):
    b = collate(crowd_windows[:5])
    n_max = max(len(w.nb_ids) for w in crowd_windows[:5])
    assert b.nb_mask.shape == (5, 20, max(1, n_max))
    assert b.observed().positions.shape == (5, 8, 2)
    assert len(b.repeat(3)) == 15
    with pytest.raises(ValueError):
        collate([])


def test_window_cache_round_trip(tmp_path, crowd_windows):
    path = tmp_path / "windows.svae"
    save_windows(path, crowd_windows[:10])
    back = load_windows(path)
    assert len(back) == 10
    for a, b in zip(crowd_windows[:10], back):
        assert (a.target_id, a.scene_id, a.start_frame) == (b.target_id, b.scene_id, b.start_frame)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.nb_mask, b.nb_mask)
        np.testing.assert_array_equal(a.nb_pos, b.nb_pos)
        assert list(a.nb_ids) == list(b.nb_ids)


def test_windowing_is_byte_deterministic(tmp_path, crowd_scene):
    a, b = tmp_path / "a.svae", tmp_path / "b.svae"
    save_windows(a, make_windows(crowd_scene))
    save_windows(b, make_windows(crowd_scene))
    assert a.read_bytes() == b.read_bytes()


def test_flip_twice_and_zero_rotation_are_identity(crowd_windows):
    w = crowd_windows[2]
    flip = np.diag([-1.0, 1.0])
    twice = transform_window(transform_window(w, flip), flip)
    np.testing.assert_allclose(twice.positions, w.positions, atol=1e-12)
    np.testing.assert_allclose(twice.nb_disp, w.nb_disp, atol=1e-12)
    np.testing.assert_allclose(transform_window(w, rotation_matrix(0.0)).positions, w.positions)
    np.testing.assert_allclose(rotation_matrix(math.pi) @ [1.0, 0.0], [-1.0, 0.0], atol=1e-12)
