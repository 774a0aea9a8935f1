import numpy as np
import pytest
from scipy.spatial import cKDTree

from activelo.geom import transform_points
from activelo.synth import Segment, SynthSpec, benchmark_entries, build_trajectory, synth_sequence
from activelo.trajgraph import outlier_proportion, segment_trajectory


def test_straight_segment_frame_count():
    seq = synth_sequence(SynthSpec((Segment(100, 10),), point_spacing=1.0), seed=0)
    assert seq.frame_count == 101
    assert np.allclose(seq.positions[-1], [100, 0, 0])
    assert len(segment_trajectory(seq).nodes) == 2


def test_joints_land_on_frames():
    spec = SynthSpec((Segment(20, 10), Segment(15, 5, np.pi / 3), Segment(10, 10, -np.pi / 4)))
    traj = build_trajectory(spec)
    assert traj.joints == [20, 50]
    d = np.diff(traj.positions[:, :2], axis=0)
    heads = np.arctan2(d[:, 1], d[:, 0])
    assert heads[19] == pytest.approx(0.0)
    assert heads[20] == pytest.approx(np.pi / 3)
    assert heads[50] == pytest.approx(np.pi / 3 - np.pi / 4)


def test_deterministic_bytes():
    spec = SynthSpec((Segment(10, 10), Segment(8, 8, 0.7)), clutter_fraction=0.2, noise_sigma=0.01, point_spacing=1.0)
    a, b = synth_sequence(spec, seed=5, seq_id="x"), synth_sequence(spec, seed=5, seq_id="x")
    for i in range(a.frame_count):
        assert a.cloud(i).points.tobytes() == b.cloud(i).points.tobytes()
    c = synth_sequence(spec, seed=6, seq_id="x")
    assert c.cloud(3).points.tobytes() != a.cloud(3).points.tobytes()


def test_ground_truth_is_exact_for_structure():
    spec = SynthSpec((Segment(10, 10), Segment(10, 10, 1.0)), point_spacing=1.0)
    seq = synth_sequence(spec, seed=0)
    for i in (0, 9, 12):
        moved = transform_points(seq.relative_pose(i, i + 1), seq.cloud(i).points)
        d, _ = cKDTree(seq.cloud(i + 1).points).query(moved)
        assert d.max() < 1e-9


@pytest.mark.parametrize("f", [0.1, 0.2, 0.4])
def test_clutter_fraction_sets_outlier_proportion(f):
    spec = SynthSpec((Segment(15, 10), Segment(10, 10, 0.8)), clutter_fraction=f, point_spacing=1.0)
    _, s_o = outlier_proportion(synth_sequence(spec, seed=1), eps=0.3)
    assert abs(s_o - f) < 0.03


def test_spec_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        Segment(0, 10)
    with pytest.raises(ValueError):
        SynthSpec((Segment(1, 1),), clutter_fraction=1.0)
    spec = SynthSpec((Segment(10, 10), Segment(5, 5, 0.2)), clutter_fraction=0.1)
    assert SynthSpec.from_dict(spec.to_dict()) == spec


def test_benchmark_entries():
    e = benchmark_entries(2, 3, seed=1)
    assert [x["id"] for x in e] == ["clean_00", "clean_01", "clutter_00", "clutter_01", "clutter_02"]
    assert [x["weather"] for x in e] == ["general"] * 2 + ["snowy"] * 3
    assert e == benchmark_entries(2, 3, seed=1)
