#!/usr/bin/env python3
"""Train a small forest on synthetic windows, compile it to a network, and
verify decision-for-decision equivalence on random windows.

Usage: python3 scripts/run_compile_check.py [--trees 32] [--samples 10000]
"""

import argparse

import numpy as np

from pedcascade.channels import ChannelConfig, compute_channels
from pedcascade.data import WindowGeometry, extract_window, jittered_negatives, random_boxes
from pedcascade.forest import default_candidate_rects, train_forest
from pedcascade.forest2nn import compile_forest, verify_equivalence
from pedcascade.geometry import iou
from pedcascade.synth import SynthSpec, synth_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trees", type=int, default=32)
    ap.add_argument("--samples", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, frames = synth_dataset(SynthSpec(n_frames=30, clutter=3.0), seed=args.seed)
    ccfg = ChannelConfig("G_LUV")
    geom = WindowGeometry()
    rng = np.random.default_rng(args.seed)
    pos, neg = [], []
    for img, ann in zip(images, frames):
        for b in ann.gt_boxes:
            pos.append(compute_channels(extract_window(img, b, geom), ccfg))
        negs = [
            b for b in random_boxes(10, (img.height, img.width), rng, geom)
            if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < 0.5
        ] + jittered_negatives(ann.gt_boxes, 3, (img.height, img.width), rng)
        for b in negs:
            neg.append(compute_channels(extract_window(img, b, geom), ccfg))

    rects = default_candidate_rects(ccfg, geom.window)
    model = train_forest(pos, neg, args.trees, rects, ccfg, geom.window)
    print(f"forest: {len(model.trees)} trees (early_stop={model.early_stop})")

    net = compile_forest(model)
    report = verify_equivalence(model, net, samples=args.samples, seed=args.seed)
    print(f"verified on {report.samples} windows: "
          f"{report.decision_mismatches} mismatches, "
          f"max score diff {report.max_score_diff:.3e}")


if __name__ == "__main__":
    main()
