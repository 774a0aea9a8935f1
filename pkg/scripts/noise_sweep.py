"""Mean SRL and PIL of the noisy oracle as its noise level grows.

    python scripts/noise_sweep.py --seeds 5
"""

import argparse

import numpy as np

from activelo.ais import AisConfig, AugmentationConfig, evaluate_sequence
from activelo.ingest import SamplePool
from activelo.predictor import NoisyOraclePredictor
from activelo.synth import Segment, SynthSpec, synth_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.01, 0.05, 0.1])
    args = ap.parse_args()
    table = np.zeros((args.seeds, len(args.sigmas), 2))
    for seed in range(args.seeds):
        spec = SynthSpec((Segment(15, 10), Segment(12, 10, 0.8)), noise_sigma=0.02, point_spacing=1.5,
                         corridor_half_width=4.0)
        seq = synth_sequence(spec, seed=seed, seq_id=f"n{seed}")
        pool = SamplePool((seq,))
        cfg = AisConfig(stride=4, voxel=None, aug=AugmentationConfig(c=8, seed=seed))
        for k, s in enumerate(args.sigmas):
            m = evaluate_sequence(NoisyOraclePredictor(pool, s, s, seed=seed), seq, cfg)
            table[seed, k] = np.mean([p.f_recon for p in m]), np.mean([p.f_incon for p in m])
    print(f"{'sigma':>8} {'mean SRL (m)':>14} {'mean PIL':>12}")
    for k, s in enumerate(args.sigmas):
        print(f"{s:8.3f} {table[:, k, 0].mean():14.5f} {table[:, k, 1].mean():12.3e}")


if __name__ == "__main__":
    main()
