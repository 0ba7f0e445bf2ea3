"""Command-line orchestration: dataset synthesis, training, compilation,
detection, evaluation, sweeps, and timing reports.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every run writes a RunManifest before its output artifacts.  The output
directory defaults to $PEDCASCADE_OUT (else the current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cascade import (
    CascadeConfig,
    CascadeError,
    IdentityRescorer,
    NetRescorer,
    run_cascade,
)
from .channels import ChannelConfig
from .convnet import (
    NetModel,
    TrainConfig,
    TrainingDiverged,
    default_cifarnet,
    load_net,
    save_net,
)
from .data import (
    BatchRatio,
    BatchSampler,
    DataError,
    LabelingPolicy,
    WindowGeometry,
    annotations_to_json,
    detections_from_json,
    detections_to_json,
    extract_window,
    jittered_negatives,
    label_proposals,
    load_annotations,
    random_boxes,
    LABEL_NEG,
    LABEL_POS,
)
from .evaluate import (
    LamrConfig,
    average_precision,
    fp_overlap_histogram,
    height_histogram,
    lamr,
    recall_vs_iou,
    touching_fp_analysis,
)
from .forest import (
    SlidingWindowConfig,
    default_candidate_rects,
    detect,
    load_forest,
    save_forest,
    train_forest,
)
from .forest2nn import compile_forest, soften, to_netmodel, verify_equivalence
from .geometry import iou
from .imageops import Image, read_pnm, write_pnm
from .manifest import RunManifest
from .svm import SvmConfig, train_svm
from .sweep import grid_sweep, sweep_to_csv
from .synth import SynthSpec, synth_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CONFIG_FILE_VERSION = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get("PEDCASCADE_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if cfg.get("version") != CONFIG_FILE_VERSION:
        raise DataError(f"{path}: unsupported config version {cfg.get('version')!r}")
    return cfg


def _load_images(path) -> List[Tuple[str, Image]]:
    p = Path(path)
    if p.is_dir():
        files = sorted(list(p.glob("*.ppm")) + list(p.glob("*.pgm")))
        if not files:
            raise DataError(f"{path}: no .ppm/.pgm images found")
        return [(f.stem, read_pnm(f)) for f in files]
    return [(p.stem, read_pnm(p))]


def _write_manifest(args, command: str, config: dict, seeds: dict, inputs: Sequence) -> RunManifest:
    man = RunManifest(command=command, config=config, seeds=seeds)
    man.record_inputs([p for p in inputs if p and Path(p).exists()])
    man.write(_out_dir(args) / f"manifest_{command.replace(' ', '_')}.json")
    return man


def _collect_training_pool(images, frames, policy, geometry, proposals_by_frame, rng):
    """Labeled context windows (net layout) for rescorer training."""
    windows, labels = [], []
    frames_by_id = {f.frame_id: f for f in frames}
    for fid, img in images:
        ann = frames_by_id.get(fid)
        if ann is None:
            raise DataError(f"no annotation for frame {fid}")
        props = [d.box for d in proposals_by_frame.get(fid, [])]
        labs = label_proposals(props, ann.gt_boxes, policy)
        pos = [b for b, l in zip(props, labs) if l == LABEL_POS] + list(ann.gt_boxes)
        if policy.neg_source == "random":
            cand = random_boxes(len(props) + 4, (img.height, img.width), rng, geometry)
            neg = [b for b in cand
                   if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < policy.neg_iou]
        else:
            neg = [b for b, l in zip(props, labs) if l == LABEL_NEG]
        for b, lab in [(b, 1) for b in pos] + [(b, 0) for b in neg]:
            w = extract_window(img, b, geometry)
            w = w.transpose(2, 0, 1) if w.ndim == 3 else w[None]
            windows.append(w)
            labels.append(lab)
    return windows, labels


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args) -> int:
    spec = SynthSpec(
        n_frames=args.frames,
        image_hw=(args.height, args.width),
        clutter=args.clutter,
        noise=args.noise,
    )
    out = _out_dir(args)
    _write_manifest(
        args, "synth",
        {"frames": args.frames, "height": args.height, "width": args.width,
         "clutter": args.clutter, "noise": args.noise},
        {"seed": args.seed}, [],
    )
    images, frames = synth_dataset(spec, seed=args.seed)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    for (fid, _), img in zip(((f.frame_id, None) for f in frames), images):
        write_pnm(img_dir / f"{fid}.ppm", img)
    (out / "annotations.json").write_text(
        json.dumps(annotations_to_json(frames), indent=1, sort_keys=True)
    )
    print(f"wrote {len(images)} frames to {img_dir} and annotations.json")
    return EXIT_OK


def _forest_training_pool(images, frames, channel_cfg, geometry, neg_per_frame, neg_iou, rng):
    from .channels import compute_channels

    frames_by_id = {f.frame_id: f for f in frames}
    pos, neg = [], []
    for fid, img in images:
        ann = frames_by_id.get(fid)
        if ann is None:
            raise DataError(f"no annotation for frame {fid}")
        for b in ann.gt_boxes:
            pos.append(compute_channels(extract_window(img, b, geometry), channel_cfg))
        cand = [
            b for b in random_boxes(neg_per_frame, (img.height, img.width), rng, geometry)
            if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < neg_iou
        ]
        cand += jittered_negatives(ann.gt_boxes, 3, (img.height, img.width), rng, neg_iou)
        for b in cand:
            neg.append(compute_channels(extract_window(img, b, geometry), channel_cfg))
    return pos, neg


def _cmd_train_forest(args) -> int:
    cfgfile = _load_config_file(args.config)
    channel_kind = args.channels or cfgfile.get("channels", "G_LUV")
    n_trees = args.trees or cfgfile.get("trees", 64)
    images = _load_images(args.images)
    frames = load_annotations(args.annotations, args.format)
    _write_manifest(
        args, "train-forest",
        {"channels": channel_kind, "trees": n_trees},
        {"seed": args.seed}, [args.annotations],
    )
    rng = np.random.default_rng(args.seed)
    channel_cfg = ChannelConfig(channel_kind)
    geometry = WindowGeometry()
    pos, neg = _forest_training_pool(
        images, frames, channel_cfg, geometry, args.negatives_per_frame, 0.5, rng
    )
    if not pos or not neg:
        raise DataError("training pool has an empty class")
    rects = default_candidate_rects(channel_cfg, geometry.window)
    model = train_forest(pos, neg, n_trees, rects, channel_cfg, geometry.window)
    save_forest(model, args.model_out)
    print(f"trained {len(model.trees)} trees (early_stop={model.early_stop}) -> {args.model_out}")
    return EXIT_OK


def _cmd_compile_forest(args) -> int:
    model = load_forest(args.model)
    _write_manifest(args, "compile-forest", {"sharpness": args.sharpness},
                    {"seed": args.seed}, [args.model])
    net = compile_forest(model)
    if args.verify:
        report = verify_equivalence(model, net, samples=args.samples, seed=args.seed)
        print(f"{report.decision_mismatches} mismatches over {report.samples} windows, "
              f"max score diff {report.max_score_diff:.3e}")
    if args.net_out:
        save_net(to_netmodel(soften(net, args.sharpness)), args.net_out)
        print(f"softened net (sharpness {args.sharpness}) -> {args.net_out}")
    return EXIT_OK


def _cmd_train_net(args) -> int:
    cfgfile = _load_config_file(args.config)
    images = _load_images(args.images)
    frames = load_annotations(args.annotations, args.format)
    proposals = detections_from_json(json.loads(Path(args.proposals).read_text()))
    train_kwargs = {k: cfgfile[k] for k in
                    ("lr", "momentum", "batch", "weight_decay", "epochs", "extra_epochs")
                    if k in cfgfile}
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    if args.batch is not None:
        train_kwargs["batch"] = args.batch
    tc = TrainConfig(seed=args.seed, **train_kwargs)
    policy = LabelingPolicy(neg_source=args.neg_source)
    ratio = None if args.ratio == "none" else BatchRatio(*map(int, args.ratio.split(":")))
    _write_manifest(args, "train-net", {"train": vars(tc), "ratio": args.ratio},
                    {"seed": args.seed}, [args.annotations, args.proposals])

    rng = np.random.default_rng(args.seed)
    geometry = WindowGeometry()
    windows, labels = _collect_training_pool(images, frames, policy, geometry, proposals, rng)
    if not any(labels) or all(labels):
        raise DataError("training pool is single-class")
    in_ch = windows[0].shape[0]
    spec_kwargs = cfgfile.get("net", {})
    spec = default_cifarnet(input_channels=in_ch, input_hw=geometry.window, **spec_kwargs)
    model = NetModel(spec, seed=args.seed, init_sigma=tc.init_sigma,
                     first_layer_sigma=tc.first_layer_sigma)
    sampler = BatchSampler(windows, labels, tc.batch, ratio, seed=args.seed)
    from .convnet import sgd_train

    sgd_train(model, sampler, tc)
    save_net(model, args.net_out)
    print(f"trained net ({model.n_parameters} parameters) -> {args.net_out}")
    return EXIT_OK


def _cmd_train_svm(args) -> int:
    images = _load_images(args.images)
    frames = load_annotations(args.annotations, args.format)
    proposals = detections_from_json(json.loads(Path(args.proposals).read_text()))
    model = load_net(args.net)
    cfg = SvmConfig(C=args.C, neg_overlap=args.neg_overlap, feature_layer=args.feature_layer)
    _write_manifest(args, "train-svm", {"C": cfg.C, "neg_overlap": cfg.neg_overlap},
                    {"seed": args.seed}, [args.annotations, args.proposals, args.net])

    rng = np.random.default_rng(args.seed)
    policy = LabelingPolicy(neg_iou=cfg.neg_overlap)
    windows, labels = _collect_training_pool(
        images, frames, policy, WindowGeometry(), proposals, rng
    )
    if not any(labels) or all(labels):
        raise DataError("training pool is single-class")
    phi = model.features(np.stack(windows), cfg.feature_layer)
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    w, b = train_svm(phi, y, cfg)
    Path(args.svm_out).write_text(json.dumps(
        {"version": 1, "feature_layer": cfg.feature_layer, "w": list(w), "b": b},
        sort_keys=True,
    ))
    print(f"trained SVM head ({phi.shape[1]} features) -> {args.svm_out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    images = _load_images(args.images)
    model = load_forest(args.model)
    _write_manifest(args, "detect", {"threshold": args.threshold, "avg": args.proposals_avg},
                    {}, [args.model])
    sliding = SlidingWindowConfig(score_threshold=args.threshold)
    rescorer = NetRescorer(load_net(args.net)) if args.net else IdentityRescorer()
    cfg = CascadeConfig(
        proposal_model=model, rescorer=rescorer,
        proposal_filter_avg=args.proposals_avg,
        score_blend="replace" if args.net else "none",
        sliding=sliding,
    )
    dets, report = run_cascade(images, cfg)
    Path(args.dets_out).write_text(
        json.dumps(detections_to_json(dets), indent=1, sort_keys=True)
    )
    total = sum(len(v) for v in dets.values())
    print(f"{total} detections over {len(images)} images -> {args.dets_out}")
    print(f"timing: {report.ms_per_image_total:.1f} ms/image, "
          f"{report.ms_per_window:.2f} ms/window ({report.windows_scored} windows)")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    dets = detections_from_json(json.loads(Path(args.dets).read_text()))
    frames = load_annotations(args.ann, args.format)
    _write_manifest(args, f"evaluate {args.metric}", {"metric": args.metric}, {},
                    [args.dets, args.ann])
    out = _out_dir(args)
    cfg = LamrConfig()
    if args.metric == "lamr":
        curve, summary = lamr(dets, frames, cfg)
    elif args.metric == "ap":
        curve, summary = average_precision(dets, frames)
    elif args.metric == "recall":
        curve = recall_vs_iou(dets, frames)
        summary = curve.summary
    elif args.metric == "fp-hist":
        curve = fp_overlap_histogram(dets, frames)
        summary = curve.summary
    elif args.metric == "touching-fp":
        mr_std, mr_filt, delta = touching_fp_analysis(dets, frames, cfg)
        print(f"standard {mr_std:.5f} filtered {mr_filt:.5f} delta {delta:.5f}")
        return EXIT_OK
    elif args.metric == "heights":
        curve = height_histogram(frames)
        summary = curve.summary
    else:  # pragma: no cover - argparse restricts choices
        raise _UsageError(f"unknown metric {args.metric}")
    csv_path = out / f"{args.metric}.csv"
    csv_path.write_text(curve.to_csv())
    if args.svg:
        (out / f"{args.metric}.svg").write_text(curve.to_svg())
    print(f"{summary:.5f}")
    print(f"curve -> {csv_path}")
    return EXIT_OK


def _sweep_run_factory(task: dict):
    """Build the per-cell runner for a sweep config.

    Task "net-synth" trains the parameterized net on a small synthetic
    window pool and reports held-out classification error.
    """
    kind = task.get("task", "net-synth")
    if kind != "net-synth":
        raise DataError(f"unknown sweep task {kind!r}")
    n_frames = int(task.get("frames", 12))
    epochs = int(task.get("epochs", 3))
    hw = tuple(task.get("window", [32, 16]))

    def run(params: dict, seed: int) -> float:
        spec_train = SynthSpec(n_frames=n_frames, clutter=2.0)
        images, frames = synth_dataset(spec_train, seed=seed)
        rng = np.random.default_rng(seed)
        geometry = WindowGeometry(window=hw, pedestrian_extent=(hw[0] * 3 // 4, hw[1] * 3 // 4))
        windows, labels = [], []
        for img, ann in zip(images, frames):
            for b in ann.gt_boxes:
                windows.append(extract_window(img, b, geometry).transpose(2, 0, 1))
                labels.append(1)
            for b in random_boxes(3, (img.height, img.width), rng, geometry):
                if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < 0.3:
                    windows.append(extract_window(img, b, geometry).transpose(2, 0, 1))
                    labels.append(0)
        n_test = max(2, len(windows) // 5)
        order = rng.permutation(len(windows))
        test_i, train_i = order[:n_test], order[n_test:]
        spec = default_cifarnet(
            input_hw=hw,
            conv_filters=tuple(params.get("filters", (8, 8, 16))),
            conv_kernels=tuple(params.get("kernels", (3, 3, 3))),
            fc_units=int(params.get("fc_units", 16)),
        )
        tc = TrainConfig(batch=16, epochs=epochs, extra_epochs=1, seed=seed)
        model = NetModel(spec, seed=seed, init_sigma=tc.init_sigma,
                         first_layer_sigma=tc.first_layer_sigma)
        sampler = BatchSampler([windows[i] for i in train_i],
                               [labels[i] for i in train_i], tc.batch, None, seed=seed)
        from .convnet import sgd_train

        sgd_train(model, sampler, tc)
        probs = model.scores(np.stack([windows[i] for i in test_i]))
        pred = (probs >= 0.5).astype(int)
        truth = np.asarray([labels[i] for i in test_i])
        return float(np.mean(pred != truth))

    return run


def _cmd_sweep(args) -> int:
    cfg = _load_config_file(args.config)
    axes = [(name, values) for name, values in cfg.get("axes", {}).items()]
    if not axes:
        raise DataError(f"{args.config}: config needs a non-empty 'axes' mapping")
    _write_manifest(args, "sweep", cfg, {"base_seed": args.seed}, [args.config])
    run = _sweep_run_factory(cfg.get("task_config", {}))
    cells = grid_sweep(axes, run, n_seeds=args.seeds_per_cell, base_seed=args.seed)
    csv_path = _out_dir(args) / "sweep.csv"
    csv_path.write_text(sweep_to_csv(cells))
    failed = sum(1 for c in cells if c.error)
    print(f"{len(cells)} cells ({failed} failed) -> {csv_path}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    images = _load_images(args.images)
    model = load_forest(args.model)
    net = load_net(args.net) if args.net else None
    _write_manifest(args, "bench", {}, {}, [args.model])
    cfg = CascadeConfig(
        proposal_model=model,
        rescorer=NetRescorer(net) if net else IdentityRescorer(),
        score_blend="replace" if net else "none",
    )
    _, report = run_cascade(images, cfg)
    ok = report.consistent(len(images))
    print(f"ms_per_window {report.ms_per_window:.3f}")
    print(f"ms_per_image_proposals {report.ms_per_image_proposals:.3f}")
    print(f"ms_per_image_total {report.ms_per_image_total:.3f}")
    print(f"windows_scored {report.windows_scored}")
    print(f"internally_consistent {ok}")
    (_out_dir(args) / "bench.json").write_text(json.dumps(vars(report), sort_keys=True))
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser

def build_parser() -> _Parser:
    p = _Parser(prog="pedcascade", description=__doc__)
    p.add_argument("--out-dir", default=None, help="output directory (default $PEDCASCADE_OUT or .)")
    p.add_argument("--jobs", type=int, default=1, help="worker count (results independent of N)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--clutter", type=float, default=2.0)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("train-forest", help="train the proposal forest")
    s.add_argument("--images", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--format", default="json", choices=["json", "kitti_txt"])
    s.add_argument("--model-out", required=True)
    s.add_argument("--channels", default=None)
    s.add_argument("--trees", type=int, default=None)
    s.add_argument("--negatives-per-frame", type=int, default=20)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_train_forest)

    s = sub.add_parser("compile-forest", help="compile a forest into a network")
    s.add_argument("--model", required=True)
    s.add_argument("--verify", action="store_true")
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--net-out", default=None)
    s.add_argument("--sharpness", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_compile_forest)

    s = sub.add_parser("train-net", help="train the rescoring convnet")
    s.add_argument("--images", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--format", default="json", choices=["json", "kitti_txt"])
    s.add_argument("--proposals", required=True)
    s.add_argument("--net-out", required=True)
    s.add_argument("--ratio", default="1:5", help='"pos:neg" or "none"')
    s.add_argument("--neg-source", default="proposals", choices=["proposals", "random"])
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_train_net)

    s = sub.add_parser("train-svm", help="train a linear SVM head on net features")
    s.add_argument("--images", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--format", default="json", choices=["json", "kitti_txt"])
    s.add_argument("--proposals", required=True)
    s.add_argument("--net", required=True)
    s.add_argument("--svm-out", required=True)
    s.add_argument("--C", type=float, default=1e-3)
    s.add_argument("--neg-overlap", type=float, default=0.5)
    s.add_argument("--feature-layer", default="fc1")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_train_svm)

    s = sub.add_parser("detect", help="run the detector (optionally with a rescoring net)")
    s.add_argument("--images", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--net", default=None)
    s.add_argument("--dets-out", required=True)
    s.add_argument("--threshold", type=float, default=0.0)
    s.add_argument("--proposals-avg", type=float, default=3.0)
    s.set_defaults(func=_cmd_detect)

    s = sub.add_parser("evaluate", help="evaluate detections against annotations")
    s.add_argument("metric", choices=["lamr", "ap", "recall", "fp-hist", "touching-fp", "heights"])
    s.add_argument("--dets", required=True)
    s.add_argument("--ann", required=True)
    s.add_argument("--format", default="json", choices=["json", "kitti_txt"])
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("sweep", help="grid sweep from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds-per-cell", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_sweep)

    s = sub.add_parser("bench", help="timing report for the cascade")
    s.add_argument("--images", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--net", default=None)
    s.set_defaults(func=_cmd_bench)

    return p


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError, CascadeError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:  # console entry point
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
