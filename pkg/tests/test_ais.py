import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activelo.ais import (
    AisConfig,
    AugmentationConfig,
    PairMetrics,
    SelectionState,
    SequenceLossReport,
    UnusablePairError,
    combine_losses,
    evaluate_sequence,
    prediction_inconsistency,
    recover_pose,
    rotation_variance,
    run_active_loop,
    sample_augmentations,
    scene_recon_loss,
    select_increment,
    sequence_loss,
    translation_variance,
)
from activelo.geom import Pose, compose, geodesic_distance, random_pose, rot_x, rot_z, rotation_to_euler
from activelo.ingest import PointCloud, SamplePool
from activelo.predictor import IcpPredictor, NoisyOraclePredictor, OraclePredictor
from activelo.synth import Segment, SynthSpec, synth_sequence


def _plane(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(np.c_[rng.uniform(-5, 5, size=(n, 2)), np.full(n, -2.0)])


# --- scene reconstruction loss ----------------------------------------------


@pytest.mark.parametrize("delta", [0.0, 0.01, 0.1, 0.5])
def test_srl_of_normal_offset_equals_offset(delta):
    c = _plane()
    assert scene_recon_loss(Pose(np.eye(3), [0, 0, delta]), c, c) == pytest.approx(delta, abs=1e-12)


def test_srl_ignores_in_plane_slide_and_far_points():
    c = _plane(seed=1)
    assert scene_recon_loss(Pose(np.eye(3), [0.3, -0.2, 0.0]), c, c) < 1e-12
    with pytest.raises(UnusablePairError):
        scene_recon_loss(Pose(np.eye(3), [0, 0, 5.0]), c, c)


def test_srl_accepts_predictor():
    c = _plane(seed=2)

    class Fixed:
        name, deterministic = "fixed", True

        def predict(self, s, t):
            return Pose(np.eye(3), [0, 0, 0.2])

    assert scene_recon_loss(Fixed(), c, c) == pytest.approx(0.2)


# --- augmentation and recovery ----------------------------------------------


def test_augmentation_spread_matches_configuration():
    expected = Pose(rot_z(0.3) @ rot_x(0.05), [1.0, -0.4, 0.0])
    cfg = AugmentationConfig(c=20_000, aug_alpha=0.1, seed=3)
    draws = sample_augmentations(expected, cfg)
    comp = np.array([np.r_[dt, rotation_to_euler(dr, warn=False)] for dr, dt in draws])
    sigma = np.maximum(0.1 * np.abs(np.r_[expected.translation, 0.05, 0.0, 0.3]), [0.02] * 3 + [0.005] * 3)
    ratio = comp.std(axis=0) / sigma
    assert np.all(np.abs(ratio - 1.0) < 0.05)
    assert np.all(np.abs(comp.mean(axis=0)) < 4 * sigma / np.sqrt(cfg.c))


def test_augmentation_deterministic():
    p = Pose(rot_z(0.1), [0.5, 0, 0])
    cfg = AugmentationConfig(c=4, seed=11)
    a, b = sample_augmentations(p, cfg), sample_augmentations(p, cfg)
    assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        AugmentationConfig(c=1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recover_pose_identity(seed):
    rng = np.random.default_rng(seed)
    t, d = random_pose(rng), random_pose(rng)
    r = recover_pose(compose(d, t), d)
    assert geodesic_distance(r.rotation, t.rotation) < 1e-9
    assert np.linalg.norm(r.translation - t.translation) < 1e-9
    r2 = recover_pose(compose(d, t), (d.rotation, d.translation))
    assert r2 == r


def test_variance_examples():
    assert translation_variance([np.zeros(3), np.array([2.0, 0, 0])]) == pytest.approx(1.0)
    assert translation_variance([np.ones(3)] * 4) == 0.0
    assert rotation_variance([rot_z(0.1), rot_z(-0.1)]) == pytest.approx(0.01, rel=1e-9)
    assert rotation_variance([rot_x(0.2)] * 3) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        translation_variance([np.zeros(3)])


# --- prediction inconsistency -------------------------------------------------


def _seq(clutter=0.0, seed=1, sid="x", spacing=1.0):
    segs = (Segment(14, 10), Segment(10, 10, 0.9))
    spec = SynthSpec(segs, point_spacing=spacing, clutter_fraction=clutter, noise_sigma=0.02, corridor_half_width=4.0)
    return synth_sequence(spec, seed=seed, seq_id=sid)


def test_oracle_pil_is_zero():
    seq = _seq(seed=2)
    pool = SamplePool((seq,))
    pil, rec = prediction_inconsistency(OraclePredictor(pool), seq.cloud(3), seq.cloud(4), AugmentationConfig(c=6))
    assert pil < 1e-20 and len(rec) == 6


def test_sparse_clouds_are_less_consistent():
    seq = _seq(seed=1)
    pred = IcpPredictor(voxel=None)
    cfg = AugmentationConfig(c=8)
    rng = np.random.default_rng(0)

    def thin(c):
        return c.with_points(c.points[rng.random(len(c)) < 0.3])

    dense, sparse = [], []
    for i in range(0, 20, 3):
        s, t = seq.cloud(i), seq.cloud(i + 1)
        dense.append(prediction_inconsistency(pred, s, t, cfg, np.random.default_rng(i))[0])
        sparse.append(prediction_inconsistency(pred, thin(s), thin(t), cfg, np.random.default_rng(i))[0])
    assert np.mean(sparse) > 10 * np.mean(dense)


def test_clutter_raises_sequence_loss():
    cfg = AisConfig(stride=6, voxel=None, aug=AugmentationConfig(c=6))
    pred = IcpPredictor(voxel=None)
    clean = sequence_loss(pred, _seq(0.0), cfg)
    noisy = sequence_loss(pred, _seq(0.4), cfg)
    assert noisy.loss > clean.loss
    assert noisy.mean_srl > clean.mean_srl and noisy.mean_pil > clean.mean_pil
    assert clean.n_pairs == 4


def test_evaluate_sequence_skips_unusable_pairs(caplog):
    seq = _seq(seed=3)
    pool = SamplePool((seq,))

    class Flaky(OraclePredictor):
        def predict(self, s, t):
            if s.frame_index == 6:
                return Pose(np.eye(3), [0, 0, 50.0])
            return super().predict(s, t)

    out = evaluate_sequence(Flaky(pool), seq, AisConfig(stride=3, voxel=None, aug=AugmentationConfig(c=3)))
    assert [m.index for m in out] == [0, 3, 9, 12, 15, 18, 21]
    assert "pair 6 unusable" in caplog.text


# --- combining and selection --------------------------------------------------


def _metrics(srl, pil):
    return [PairMetrics(0, srl, pil)]


def test_combine_losses_normalization():
    m = {"a": _metrics(0.1, 1.0), "b": _metrics(0.3, 0.0), "c": _metrics(0.2, 0.5)}
    rep = {r.id: r for r in combine_losses(m, AisConfig(srl_weight=1.0, pil_weight=1.0))}
    assert rep["a"].loss == pytest.approx(1.0) and rep["b"].loss == pytest.approx(1.0)
    assert rep["c"].loss == pytest.approx(1.0)
    raw = {r.id: r for r in combine_losses(m, AisConfig(srl_weight=1.0, pil_weight=0.0, normalize=False))}
    assert raw["b"].loss == pytest.approx(0.3)
    # equal values across the pool normalize to 0
    flat = combine_losses({"a": _metrics(0.1, 0.2), "b": _metrics(0.1, 0.2)}, AisConfig())
    assert [r.loss for r in flat] == [0.0, 0.0]


def _report(sid, loss):
    return SequenceLossReport(sid, 0.0, 0.0, loss, 1)


def test_select_increment_ranks_and_breaks_ties_by_id():
    state = SelectionState.initial(["a", "b", "c", "d", "e"], ["a"], h=2)
    reps = [_report("b", 0.5), _report("c", 0.9), _report("d", 0.5), _report("e", 0.1)]
    nxt = select_increment(state, reps)
    assert nxt.selected == ("a", "c", "b") and nxt.remaining == ("d", "e") and nxt.itr == 1
    assert dict(nxt.admitted) == {"a": 0, "c": 1, "b": 1}


def test_select_increment_takes_all_when_h_exceeds_remaining():
    state = SelectionState.initial(["a", "b", "c"], ["a"], h=5)
    nxt = select_increment(state, [_report("b", 0.0), _report("c", 1.0)])
    assert nxt.remaining == () and set(nxt.selected) == {"a", "b", "c"}
    with pytest.raises(ValueError):
        select_increment(nxt, [])
    with pytest.raises(ValueError, match="no loss report"):
        select_increment(state, [_report("b", 0.0)])


def test_selection_state_validation():
    with pytest.raises(ValueError):
        SelectionState.initial(["a"], [])
    with pytest.raises(ValueError, match="not in pool"):
        SelectionState.initial(["a"], ["z"])
    with pytest.raises(ValueError):
        AisConfig(h=0)


# --- loop -------------------------------------------------------------------


def _small_pool(n=6):
    segs = (Segment(10, 10), Segment(8, 10, 0.7))
    seqs = []
    for i in range(n):
        spec = SynthSpec(segs, point_spacing=1.5, clutter_fraction=0.1 * (i % 3), corridor_half_width=4.0)
        seqs.append(synth_sequence(spec, seed=i, seq_id=f"s{i}"))
    return SamplePool(tuple(seqs))


def _loop(pool, workers=1, iter=3, sigma=0.02):
    pred = NoisyOraclePredictor(pool, sigma, sigma, seed=1)
    cfg = AisConfig(h=2, iter=iter, stride=4, voxel=None, workers=workers, aug=AugmentationConfig(c=3))
    return run_active_loop(pool, ["s0"], lambda sel: pred, cfg)


def test_loop_selections_are_nested():
    pool = _small_pool()
    hist = _loop(pool)
    assert len(hist) == 4 and hist[0].selected == ("s0",)
    for a, b in zip(hist, hist[1:]):
        assert b.selected[: len(a.selected)] == a.selected
        assert len(b.selected) == len(a.selected) + min(2, len(a.remaining))
        assert set(b.selected) | set(b.remaining) == set(pool.ids)


def test_loop_stops_when_pool_exhausted():
    pool = _small_pool(3)
    hist = run_active_loop(pool, pool.ids, lambda sel: OraclePredictor(pool), AisConfig(iter=4))
    assert len(hist) == 1
    hist = _loop(pool, iter=10)
    assert len(hist) == 2 and hist[-1].remaining == ()


def test_loop_deterministic_and_worker_independent(monkeypatch):
    pool = _small_pool()
    a = _loop(pool)
    b = _loop(pool)
    monkeypatch.setenv("ACTIVELO_WORKERS", "3")
    c = _loop(pool)
    for x in (b, c):
        assert [s.admitted for s in x] == [s.admitted for s in a]
        assert [[r.to_dict() for r in rd] for rd in x[-1].rounds] == [[r.to_dict() for r in rd] for rd in a[-1].rounds]


def test_loop_calls_factory_with_current_selection():
    pool = _small_pool(5)
    seen = []

    def factory(sel):
        seen.append(tuple(sel))
        return NoisyOraclePredictor(pool, 0.01, 0.01, seed=len(seen))

    cfg = AisConfig(h=1, iter=2, stride=4, voxel=None, aug=AugmentationConfig(c=3))
    hist = run_active_loop(pool, ["s1"], factory, cfg, on_round=lambda s: seen.append(("round", s.itr)))
    assert seen[0] == ("s1",) and seen[1] == ("round", 1)
    assert seen[2] == hist[1].selected and seen[3] == ("round", 2)
