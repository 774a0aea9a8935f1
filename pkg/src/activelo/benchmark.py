"""Clutter-targeting check for the active loop on a synthetic pool.

Clean sequences are tagged ``general`` and cluttered ones ``snowy``; the
initial set is drawn from the clean half with ITSS, then the loop runs
with the ICP predictor until the pool is exhausted.
"""

from __future__ import annotations

from pathlib import Path

from .ais import AisConfig, AugmentationConfig, run_active_loop
from .diversity import ItssConfig, score_pool, select_itss
from .ingest import SamplePool, build_sequence
from .predictor import IcpPredictor
from .synth import benchmark_entries
from .trajgraph import sequence_features


def run_one(seed: int, n_clean=6, n_cluttered=6, u=3, h=2, stride=8, c=6) -> dict[str, int]:
    """Admission round of every sequence for one seeded pool."""
    entries = benchmark_entries(n_clean, n_cluttered, seed=seed)
    pool = SamplePool(tuple(build_sequence(e, Path(".")) for e in entries))
    feats = [sequence_features(s, stride=stride)[0] for s in pool if s.weather == "general"]
    icfg = ItssConfig(u=u)
    initial = select_itss(score_pool(feats, icfg), icfg).selected
    cfg = AisConfig(h=h, iter=len(pool), stride=stride, voxel=None, aug=AugmentationConfig(c=c, seed=seed))
    pred = IcpPredictor(voxel=None)
    history = run_active_loop(pool, initial, lambda sel: pred, cfg)
    return dict(history[-1].admitted)


def targeted(admitted: dict[str, int]) -> tuple[bool, bool]:
    """(all cluttered before the last clean one, all cluttered before any remaining clean one)."""
    clutter = [r for k, r in admitted.items() if k.startswith("clutter")]
    clean = [r for k, r in admitted.items() if k.startswith("clean") and r > 0]
    if not clean:
        return True, True
    return max(clutter) < max(clean), max(clutter) <= min(clean)
