"""Two-stage detector: forest proposals, window extraction, rescoring
(convnet, SVM head, compiled net, or identity), final NMS."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channels import ChannelConfig, compute_channels
from .convnet import NetModel, NetSpec, TrainConfig, default_cifarnet, sgd_train
from .data import (
    BatchRatio,
    BatchSampler,
    FrameAnnotation,
    LabelingPolicy,
    WindowGeometry,
    extract_window,
    jittered_negatives,
    label_proposals,
    random_boxes,
    LABEL_NEG,
    LABEL_POS,
)
from .forest import (
    ForestModel,
    SlidingWindowConfig,
    default_candidate_rects,
    detect,
    filter_proposals,
    train_forest,
)
from .forest2nn import CompiledNet
from .geometry import Detection, iou, nms
from .imageops import Image
from .svm import SvmConfig, train_svm


class CascadeError(RuntimeError):
    pass


def _window_batch(img, boxes, geom: WindowGeometry) -> np.ndarray:
    """Extracted context windows stacked in image layout (n, H, W[, 3])."""
    return np.stack([extract_window(img, b, geom) for b in boxes])


def _net_layout(windows: np.ndarray) -> np.ndarray:
    if windows.ndim == 4:
        return windows.transpose(0, 3, 1, 2)
    return windows[:, None, :, :]


class IdentityRescorer:
    """Keeps the proposal scores; the cascade degenerates to stage one."""

    def __call__(self, windows: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64)


class NetRescorer:
    """Positive-class softmax probability of a trained net.

    `input_mean` is subtracted from every window before scoring; it must match
    the centering used when the net was trained.
    """

    def __init__(self, model: NetModel, input_mean: float = 0.0):
        self.model = model
        self.input_mean = float(input_mean)

    def __call__(self, windows: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return self.model.scores(_net_layout(windows) - self.input_mean)


class SvmRescorer:
    """Linear SVM over intermediate net features (w.phi(x) + b)."""

    def __init__(self, model: NetModel, w: np.ndarray, b: float,
                 feature_layer: str = "fc1", input_mean: float = 0.0):
        self.model = model
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.feature_layer = feature_layer
        self.input_mean = float(input_mean)

    def __call__(self, windows: np.ndarray, scores: np.ndarray) -> np.ndarray:
        phi = self.model.features(_net_layout(windows) - self.input_mean,
                                  self.feature_layer)
        return phi @ self.w + self.b


class CompiledNetRescorer:
    """Scores each window with a compiled forest net on its own channels."""

    def __init__(self, net: CompiledNet, channel_cfg: ChannelConfig):
        self.net = net
        self.channel_cfg = channel_cfg

    def __call__(self, windows: np.ndarray, scores: np.ndarray) -> np.ndarray:
        out = np.empty(len(windows))
        for i, win in enumerate(windows):
            stack = compute_channels(win, self.channel_cfg)
            pooled = self.net.pooled_features(stack, [(0, 0)])
            out[i] = self.net.forward(pooled)[0][0]
        return out


@dataclass
class CascadeConfig:
    proposal_model: ForestModel
    rescorer: object  # callable(windows, scores) -> scores
    proposal_filter_avg: float = 3.0
    final_nms_iou: float = 0.5
    score_blend: str = "replace"  # "replace" or "none"
    apply_final_nms: bool = True
    sliding: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    geometry: WindowGeometry = field(default_factory=WindowGeometry)

    def __post_init__(self):
        if self.proposal_filter_avg <= 0:
            raise ValueError("proposal_filter_avg must be > 0")
        if self.score_blend not in ("replace", "none"):
            raise ValueError(f"bad score_blend {self.score_blend!r}")


@dataclass
class TimingReport:
    ms_per_window: float
    ms_per_image_proposals: float
    ms_per_image_total: float
    windows_scored: int

    def consistent(self, n_images: int, tol: float = 1e-6) -> bool:
        """Component times must not exceed the total (up to rounding)."""
        if n_images == 0:
            return (self.ms_per_window == 0 and self.ms_per_image_total == 0
                    and self.windows_scored == 0)
        rescore_total = self.ms_per_window * self.windows_scored
        component = self.ms_per_image_proposals * n_images + rescore_total
        return component <= self.ms_per_image_total * n_images + tol


def run_cascade(
    images: Sequence[Tuple[str, Image]], cfg: CascadeConfig
) -> Tuple[Dict[str, List[Detection]], TimingReport]:
    """Proposals, global score-threshold filtering to the target average,
    window rescoring, optional final NMS.

    Rescoring only rewrites scores; box geometry is untouched before NMS.
    """
    if not images:
        return {}, TimingReport(0.0, 0.0, 0.0, 0)
    ids = [fid for fid, _ in images]
    if len(set(ids)) != len(ids):
        raise CascadeError("duplicate frame ids")

    t0 = time.perf_counter()
    proposals: List[List[Detection]] = []
    for fid, img in images:
        try:
            proposals.append(detect(img, cfg.proposal_model, cfg.sliding))
        except Exception as exc:
            raise CascadeError(f"frame {fid}: proposal stage failed: {exc}") from exc
    t_prop = time.perf_counter() - t0

    _, filtered = filter_proposals(proposals, cfg.proposal_filter_avg)

    windows_scored = 0
    t_rescore = 0.0
    out: Dict[str, List[Detection]] = {}
    for (fid, img), dets in zip(images, filtered):
        if dets and cfg.score_blend == "replace":
            t1 = time.perf_counter()
            try:
                wins = _window_batch(img, [d.box for d in dets], cfg.geometry)
                new_scores = cfg.rescorer(wins, np.array([d.score for d in dets]))
            except Exception as exc:
                raise CascadeError(f"frame {fid}: rescoring failed: {exc}") from exc
            t_rescore += time.perf_counter() - t1
            windows_scored += len(dets)
            dets = [replace(d, score=float(s)) for d, s in zip(dets, new_scores)]
        out[fid] = nms(dets, cfg.final_nms_iou) if cfg.apply_final_nms else list(dets)

    total = time.perf_counter() - t0
    n = len(images)
    report = TimingReport(
        ms_per_window=(t_rescore / windows_scored * 1e3) if windows_scored else 0.0,
        ms_per_image_proposals=t_prop / n * 1e3,
        ms_per_image_total=total / n * 1e3,
        windows_scored=windows_scored,
    )
    return out, report


# ---------------------------------------------------------------------------
# training

@dataclass
class CascadeTrainConfig:
    n_trees: int = 64
    channel_cfg: ChannelConfig = field(default_factory=lambda: ChannelConfig("G_LUV"))
    sliding: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    geometry: WindowGeometry = field(default_factory=WindowGeometry)
    policy: LabelingPolicy = field(default_factory=LabelingPolicy)
    net_geometry: Optional[WindowGeometry] = None  # rescorer windows; default: geometry
    ratio: Optional[BatchRatio] = field(default_factory=lambda: BatchRatio(1, 5))
    net_train: TrainConfig = field(default_factory=TrainConfig)
    net_spec: Optional[NetSpec] = None  # default: cifarnet sized to the window
    rescorer_kind: str = "net"  # "net", "svm", or "identity"
    svm: SvmConfig = field(default_factory=SvmConfig)
    forest_negatives_per_frame: int = 20
    proposal_filter_avg: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.rescorer_kind not in ("net", "svm", "identity"):
            raise ValueError(f"bad rescorer_kind {self.rescorer_kind!r}")


def _window_stacks(img, boxes, geom, channel_cfg):
    return [compute_channels(extract_window(img, b, geom), channel_cfg) for b in boxes]


def _collect_rescorer_pool(images, frames, proposals, cfg: CascadeTrainConfig, rng):
    """Labeled (window, 0/1) pool for the second stage, per the policy."""
    geom = cfg.net_geometry or cfg.geometry
    windows: List[np.ndarray] = []
    labels: List[int] = []
    for (fid, img), ann, props in zip(images, frames, proposals):
        boxes = [d.box for d in props]
        labs = label_proposals(boxes, ann.gt_boxes, cfg.policy)
        pos = [b for b, l in zip(boxes, labs) if l == LABEL_POS]
        pos.extend(ann.gt_boxes)
        if cfg.policy.neg_source == "random":
            cand = random_boxes(
                len(boxes) + 4, (img.height, img.width), rng, geom,
                min_height=max(1, int(cfg.sliding.min_height)),
            )
            neg = [
                b for b in cand
                if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < cfg.policy.neg_iou
            ]
        else:
            neg = [b for b, l in zip(boxes, labs) if l == LABEL_NEG]
        for b in pos:
            windows.append(extract_window(img, b, geom))
            labels.append(1)
        for b in neg:
            windows.append(extract_window(img, b, geom))
            labels.append(0)
    return windows, labels


def train_rescorer(
    images: Sequence[Tuple[str, Image]],
    frames: Sequence[FrameAnnotation],
    proposals: Sequence[Sequence[Detection]],
    cfg: CascadeTrainConfig,
):
    """Train the second-stage rescorer on windows labeled from filtered
    proposals.  Returns a callable rescorer (net or SVM head per the config)."""
    rng = np.random.default_rng(cfg.seed)
    windows, labels = _collect_rescorer_pool(images, frames, proposals, cfg, rng)
    if not any(labels) or all(labels):
        raise CascadeError("rescorer pool is single-class; adjust the policy")

    net_geom = cfg.net_geometry or cfg.geometry
    input_mean = float(np.mean([w.mean() for w in windows]))
    net_windows = [_net_layout(w[None])[0] - input_mean for w in windows]
    in_ch = net_windows[0].shape[0]
    spec = cfg.net_spec or default_cifarnet(input_channels=in_ch, input_hw=net_geom.window)
    model = NetModel(
        spec, seed=cfg.seed,
        init_sigma=cfg.net_train.init_sigma,
        first_layer_sigma=cfg.net_train.first_layer_sigma,
    )
    sampler = BatchSampler(net_windows, labels, cfg.net_train.batch, cfg.ratio, seed=cfg.seed)
    sgd_train(model, sampler, cfg.net_train)

    if cfg.rescorer_kind == "net":
        return NetRescorer(model, input_mean=input_mean)
    phi = model.features(np.stack(net_windows), cfg.svm.feature_layer)
    y = np.where(np.asarray(labels) == 1, 1.0, -1.0)
    w, b = train_svm(phi, y, cfg.svm)
    return SvmRescorer(model, w, b, cfg.svm.feature_layer, input_mean=input_mean)


def train_cascade(
    images: Sequence[Tuple[str, Image]],
    frames: Sequence[FrameAnnotation],
    cfg: CascadeTrainConfig,
) -> CascadeConfig:
    """Train the proposal forest on GT vs random negatives, run it over the
    training frames, label its proposals per the policy, train the rescorer
    on the extracted windows, and assemble the cascade."""
    if len(images) != len(frames) or not images:
        raise CascadeError("need aligned, non-empty images and frames")
    rng = np.random.default_rng(cfg.seed)

    pos_stacks, neg_stacks = [], []
    for (fid, img), ann in zip(images, frames):
        pos_stacks.extend(_window_stacks(img, ann.gt_boxes, cfg.geometry, cfg.channel_cfg))
        cand = random_boxes(
            cfg.forest_negatives_per_frame, (img.height, img.width), rng, cfg.geometry,
            min_height=max(1, int(cfg.sliding.min_height)),
        )
        keep = [
            b for b in cand
            if max((iou(b, g) for g in ann.gt_boxes), default=0.0) < cfg.policy.neg_iou
        ]
        keep += jittered_negatives(
            ann.gt_boxes, 3, (img.height, img.width), rng, cfg.policy.neg_iou
        )
        neg_stacks.extend(_window_stacks(img, keep, cfg.geometry, cfg.channel_cfg))
    if not pos_stacks or not neg_stacks:
        raise CascadeError("training frames yielded an empty class")

    rects = default_candidate_rects(cfg.channel_cfg, cfg.geometry.window)
    forest = train_forest(
        pos_stacks, neg_stacks, cfg.n_trees, rects, cfg.channel_cfg, cfg.geometry.window
    )

    if cfg.rescorer_kind == "identity":
        return CascadeConfig(
            proposal_model=forest, rescorer=IdentityRescorer(),
            proposal_filter_avg=cfg.proposal_filter_avg, score_blend="none",
            sliding=cfg.sliding, geometry=cfg.geometry,
        )

    proposals = [detect(img, forest, cfg.sliding) for _, img in images]
    _, proposals = filter_proposals(proposals, cfg.proposal_filter_avg)
    rescorer = train_rescorer(images, frames, proposals, cfg)

    return CascadeConfig(
        proposal_model=forest, rescorer=rescorer,
        proposal_filter_avg=cfg.proposal_filter_avg,
        sliding=cfg.sliding, geometry=cfg.net_geometry or cfg.geometry,
    )
