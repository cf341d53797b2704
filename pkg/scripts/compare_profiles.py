#!/usr/bin/env python3
"""Compare random / matched-codebook / optimized RIS phase profiles by the
weighted position bound in the blocked-direct-link regime."""

import argparse

import numpy as np

from isac_mp_sim.bcrb import initial_bim, position_indices, transition_blocks
from isac_mp_sim.channel import complex_gain
from isac_mp_sim.config import preset_config
from isac_mp_sim.harness import _Scene
from isac_mp_sim.protocol import TransmitSchedule, dft_ris_schedule
from isac_mp_sim.risopt import BoundContext, PhaseProfile, objective, optimize
from isac_mp_sim.scenario import UserState, link_geometry, ris_to_bs_geometry
from isac_mp_sim.synth import build_slot_channel


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--trials", type=int, default=8)
    parser.add_argument("--sigma-z", type=float, default=1e-10)
    args = parser.parse_args()

    cfg = preset_config("desk")
    cfg.run.seed = args.seed
    scene = _Scene(cfg)
    rng = np.random.default_rng(args.seed)
    weights = np.zeros(6)
    weights[position_indices(0)] = 1.0
    print(f"{'trial':>5} {'random':>12} {'dft':>12} {'optimized':>12} {'iters':>6}")
    for trial in range(args.trials):
        user = UserState(rng.uniform([25, -20], [65, 15]), rng.uniform(-10, 10, 2))
        chan = build_slot_channel([user], scene.bss, scene.riss, cfg.wavelength,
                                  np.zeros((1, 2)), np.ones((1, 2)), np.ones((2, 2)),
                                  lambda d: complex_gain(d, cfg.wavelength, "geometric"))
        ctx = BoundContext(
            chan=chan, tx=TransmitSchedule(symbols=np.array([1.0 + 0j]),
                                           power=cfg.power_w),
            grid=scene.grid, bs_anchors=scene.bss, ris_anchors=scene.riss,
            users=[user], zeta_s=cfg.zeta_s, wavelength=cfg.wavelength,
            sigma_z=args.sigma_z, prev_bim=initial_bim(1, 1.0, 1.0),
            blocks=transition_blocks(scene.mobility, 1))
        rand_prof = PhaseProfile([rng.uniform(0, 2 * np.pi, (16, scene.grid.q1))
                                  for _ in range(2)])
        f_rand = objective(rand_prof, ctx, weights)
        aods = np.array([[ris_to_bs_geometry(scene.riss[r], scene.bss[g])[1].aoa
                          for g in range(2)] for r in range(2)])
        aoas = np.array([[link_geometry(user, scene.riss[r], cfg.wavelength).aoa
                          for r in range(2)]])
        dft = dft_ris_schedule(scene.riss, aods, aoas, scene.grid.q1, cfg.zeta_s)
        f_dft = objective(PhaseProfile([np.angle(m) for m in dft.matrices]),
                          ctx, weights)
        opt, rep = optimize(rand_prof, ctx, weights, max_iters=25, eps=1e-7)
        f_opt = objective(opt, ctx, weights)
        print(f"{trial:>5} {f_rand:>12.4e} {f_dft:>12.4e} {f_opt:>12.4e} "
              f"{rep.iterations:>6}")


if __name__ == "__main__":
    main()
