#!/usr/bin/env python3
"""Train the IK network on self-generated forward-kinematics pairs and
report the held-out joint error before and after."""

import argparse
import time

import numpy as np

from handkit import bio_dof, ik_net, kinematics as kin
from handkit.hand_model import make_desk_hand


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=20000)
    parser.add_argument("--holdout", type=int, default=1000)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--checkpoint", help="optional output path")
    args = parser.parse_args()

    model = make_desk_hand()
    limits = bio_dof.DofLimits.default()
    axes = bio_dof.derive_axes(model)

    data = ik_net.generate_pairs(model, args.pairs, limits, seed=args.seed)
    held = ik_net.generate_pairs(model, args.holdout, limits,
                                 seed=args.seed + 1)
    feats_held = ik_net.featurize_batch(held.skeletons)

    def held_l_pose(net):
        theta, beta = net.forward(feats_held, training=False)
        art = bio_dof.expand_batch(theta, axes)
        joints = kin.fk_forward(model, art, beta,
                                want_regressed=True).regressed_joints
        return float(np.abs(joints - held.skeletons).mean())

    net = ik_net.MlpIk(seed=args.seed)
    before = held_l_pose(net)
    print(f"untrained held-out joint error: {before:.3f} mm")

    decay = tuple(d for d in (30, 35) if d < args.epochs)
    config = ik_net.TrainConfig(epochs=args.epochs, decay_epochs=decay,
                                seed=args.seed)
    start = time.time()
    net, curve = ik_net.train(net, data, config)
    for row in curve:
        print(f"epoch {row['epoch']:3d}: total {row['total']:8.4f} "
              f"(theta {row['theta']:.4f}, beta {row['beta']:.4f}, "
              f"pose {row['pose']:8.4f})")
    after = held_l_pose(net)
    print(f"trained held-out joint error: {after:.3f} mm "
          f"({before / after:.1f}x lower) in {time.time() - start:.0f} s")

    if args.checkpoint:
        ik_net.save_checkpoint(net, args.checkpoint)
        print(f"wrote {args.checkpoint}")


if __name__ == "__main__":
    main()
