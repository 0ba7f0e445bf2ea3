"""Boosted forest of depth-2 trees over rectangular channel sums, trained with
discrete AdaBoost and run as a sliding-window proposal detector."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .channels import ChannelConfig, ChannelStack, compute_channels
from .geometry import Box, Detection, nms
from .imageops import Image, bilinear_resize

# Fraction of the model window occupied by the object extent (96/128 = 48/64).
OBJECT_EXTENT_RATIO = 0.75

N_THRESHOLD_QUANTILES = 256


@dataclass(frozen=True)
class SplitNode:
    channel: int
    rect: Box  # model-window coordinates
    threshold: float  # compared against the area-normalized rectangle sum
    polarity: int  # +1 or -1

    def __post_init__(self):
        if self.polarity not in (+1, -1):
            raise ValueError(f"polarity must be +-1, got {self.polarity}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class Tree2:
    """Depth-2 tree: root, two child splits, four leaf values (LL, LR, RL, RR)."""

    root: SplitNode
    left_child: SplitNode
    right_child: SplitNode
    leaf_values: Tuple[float, float, float, float]


@dataclass
class ForestModel:
    trees: List[Tree2]
    tree_weights: List[float]
    channel_cfg: ChannelConfig
    model_window: Tuple[int, int] = (128, 64)  # (height, width)
    score_offset: float = 0.0
    early_stop: bool = False
    training_log: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.trees) != len(self.tree_weights) or not self.trees:
            raise ValueError("need equally many trees and weights, at least one")


@dataclass(frozen=True)
class SlidingWindowConfig:
    stride: int = 4
    scale_step: float = 2 ** (1 / 8)
    min_height: int = 50
    score_threshold: float = 0.0
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.scale_step <= 1:
            raise ValueError("scale_step must be > 1")


def _scaled_rect(rect: Box, scale: float) -> Tuple[int, int, int, int]:
    x = int(round(rect.x * scale))
    y = int(round(rect.y * scale))
    w = max(1, int(round(rect.w * scale)))
    h = max(1, int(round(rect.h * scale)))
    return x, y, w, h


def _node_feature(node: SplitNode, stack: ChannelStack, ox: int, oy: int, scale: float) -> float:
    x, y, w, h = _scaled_rect(node.rect, scale)
    ii = stack.integrals[node.channel]
    x += ox
    y += oy
    if x < 0 or y < 0 or x + w > stack.width or y + h > stack.height:
        raise ValueError("window rectangle out of bounds")
    s = ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x]
    return float(s) / (w * h)


def _node_decision(node: SplitNode, stack: ChannelStack, ox: int, oy: int, scale: float) -> bool:
    f = _node_feature(node, stack, ox, oy, scale)
    return node.polarity * (f - node.threshold) > 0


def eval_tree(
    t: Tree2, stack: ChannelStack, window_origin: Tuple[int, int], scale: float = 1.0
) -> float:
    """Evaluate one tree on the window at `window_origin` (x, y).

    Rectangle coordinates are scaled by `scale` and sums are normalized by
    rectangle area, so thresholds are comparable across scales.
    """
    ox, oy = window_origin
    if _node_decision(t.root, stack, ox, oy, scale):
        idx = 3 if _node_decision(t.right_child, stack, ox, oy, scale) else 2
    else:
        idx = 1 if _node_decision(t.left_child, stack, ox, oy, scale) else 0
    return t.leaf_values[idx]


def score_window(
    model: ForestModel, stack: ChannelStack, window_origin: Tuple[int, int], scale: float = 1.0
) -> float:
    leaves = np.array([eval_tree(t, stack, window_origin, scale) for t in model.trees])
    return float(np.dot(np.asarray(model.tree_weights), leaves)) + model.score_offset


def default_candidate_rects(
    channel_cfg: ChannelConfig,
    model_window: Tuple[int, int] = (128, 64),
    sizes: Sequence[int] = (8, 16, 24, 32),
    grid: int = 8,
) -> List[Tuple[int, Box]]:
    """All square pooling regions of the given sizes on a regular grid,
    for every channel."""
    win_h, win_w = model_window
    rects = []
    for size in sizes:
        for y in range(0, win_h - size + 1, grid):
            for x in range(0, win_w - size + 1, grid):
                rects.append(Box(x, y, size, size))
    return [(c, r) for c in range(channel_cfg.n_channels) for r in rects]


def compute_feature_matrix(
    stacks: Sequence[ChannelStack], candidate_rects: Sequence[Tuple[int, Box]]
) -> np.ndarray:
    """(n_windows, n_candidates) matrix of area-normalized rectangle sums."""
    ch = np.array([c for c, _ in candidate_rects], dtype=np.intp)
    x1 = np.array([int(r.x) for _, r in candidate_rects], dtype=np.intp)
    y1 = np.array([int(r.y) for _, r in candidate_rects], dtype=np.intp)
    x2 = x1 + np.array([int(r.w) for _, r in candidate_rects], dtype=np.intp)
    y2 = y1 + np.array([int(r.h) for _, r in candidate_rects], dtype=np.intp)
    area = ((x2 - x1) * (y2 - y1)).astype(np.float64)

    out = np.empty((len(stacks), len(candidate_rects)), dtype=np.float64)
    for i, stack in enumerate(stacks):
        ii = np.stack(stack.integrals)
        out[i] = (ii[ch, y2, x2] - ii[ch, y1, x2] - ii[ch, y2, x1] + ii[ch, y1, x1]) / area
    return out


class _StumpSearch:
    """Shared quantized-threshold search over all candidate features."""

    def __init__(self, X: np.ndarray):
        self.n, self.f = X.shape
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        k = N_THRESHOLD_QUANTILES
        # k thresholds uniformly spanning each feature's empirical range.
        self.thresholds = lo[None, :] + (hi - lo)[None, :] * (np.arange(k) / (k - 1))[:, None]
        # bin[i, f] = number of thresholds strictly below X[i, f], in [0, k]
        bins = np.empty((self.n, self.f), dtype=np.int64)
        for j in range(self.f):
            bins[:, j] = np.searchsorted(self.thresholds[:, j], X[:, j], side="left")
        self.keys = bins + np.arange(self.f, dtype=np.int64)[None, :] * (k + 1)
        self.X = X

    def best_stump(self, idx: np.ndarray, w: np.ndarray, y: np.ndarray):
        """Minimum weighted-error stump over samples `idx`.

        Returns (feature, threshold, polarity, error). Polarity +1 predicts
        positive where the normalized sum exceeds the threshold.
        """
        k = N_THRESHOLD_QUANTILES
        keys = self.keys[idx].ravel()
        rep = self.f
        wp = np.repeat(w * (y > 0), rep)
        wn = np.repeat(w * (y < 0), rep)
        size = self.f * (k + 1)
        hp = np.bincount(keys, weights=wp, minlength=size).reshape(self.f, k + 1)
        hn = np.bincount(keys, weights=wn, minlength=size).reshape(self.f, k + 1)
        cp = np.cumsum(hp, axis=1)[:, :k]  # pos weight with value <= threshold_k
        cn = np.cumsum(hn, axis=1)[:, :k]
        p_tot = float(np.sum(w * (y > 0)))
        n_tot = float(np.sum(w * (y < 0)))
        err_pos = cp + (n_tot - cn)  # polarity +1: predict + above the threshold
        err_neg = (p_tot + n_tot) - err_pos
        if err_pos.min() <= err_neg.min():
            fi, ki = np.unravel_index(np.argmin(err_pos), err_pos.shape)
            return int(fi), float(self.thresholds[ki, fi]), +1, float(err_pos[fi, ki])
        fi, ki = np.unravel_index(np.argmin(err_neg), err_neg.shape)
        return int(fi), float(self.thresholds[ki, fi]), -1, float(err_neg[fi, ki])


def _tree_decisions(tree_feat, tree_thr, tree_pol, X):
    """(d0, d1, d2) boolean arrays for a tree given a feature matrix."""
    return tuple(
        p * (X[:, f] - t) > 0 for f, t, p in zip(tree_feat, tree_thr, tree_pol)
    )


def _leaf_index(d0, d1, d2):
    return np.where(d0, 2 + d2.astype(np.intp), d1.astype(np.intp))


def train_forest(
    pos_windows: Sequence[ChannelStack],
    neg_windows: Sequence[ChannelStack],
    n_trees: int,
    candidate_rects: Sequence[Tuple[int, Box]],
    channel_cfg: ChannelConfig,
    model_window: Tuple[int, int] = (128, 64),
) -> ForestModel:
    """Discrete AdaBoost over greedily-fit depth-2 trees.

    Each split is the best (rect, threshold, polarity) stump on its sample
    subset, thresholds searched over 256 uniform quantiles of the feature's
    empirical range; leaf values are the +-1 weighted majority of their
    partition.  A degenerate round (error 0 or >= 1/2) stops training early
    and flags the returned model.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not pos_windows or not neg_windows:
        raise ValueError("need at least one positive and one negative window")
    if not candidate_rects:
        raise ValueError("candidate_rects must be non-empty")

    stacks = list(pos_windows) + list(neg_windows)
    y = np.concatenate([np.ones(len(pos_windows)), -np.ones(len(neg_windows))])
    X = compute_feature_matrix(stacks, candidate_rects)
    search = _StumpSearch(X)
    n = len(stacks)
    w = np.full(n, 1.0 / n)
    all_idx = np.arange(n)

    trees: List[Tree2] = []
    weights: List[float] = []
    log: List[Dict[str, float]] = []
    early_stop = False
    eps_floor = 1e-12

    for _ in range(n_trees):
        f0, t0, p0, _ = search.best_stump(all_idx, w, y)
        d0 = p0 * (X[:, f0] - t0) > 0
        side = [all_idx[~d0], all_idx[d0]]
        children = []
        for s in side:
            if s.size > 0:
                children.append(search.best_stump(s, w[s], y[s])[:3])
            else:
                children.append((0, float(search.thresholds[-1, 0]), +1))
        (f1, t1, p1), (f2, t2, p2) = children

        feat, thr, pol = (f0, f1, f2), (t0, t1, t2), (p0, p1, p2)
        dd0, dd1, dd2 = _tree_decisions(feat, thr, pol, X)
        leaf_idx = _leaf_index(dd0, dd1, dd2)
        leaves = []
        for li in range(4):
            mask = leaf_idx == li
            balance = np.sum(w[mask] * y[mask])
            leaves.append(1.0 if balance >= 0 else -1.0)
        leaves = tuple(leaves)

        h = np.take(np.asarray(leaves), leaf_idx)
        eps = float(np.sum(w[h != y]))
        degenerate = eps < eps_floor or eps >= 0.5
        if eps >= 0.5:
            early_stop = True
            break
        eps_eff = max(eps, eps_floor)
        alpha = 0.5 * math.log((1.0 - eps_eff) / eps_eff)

        chans = [candidate_rects[f][0] for f in feat]
        rects = [candidate_rects[f][1] for f in feat]
        trees.append(
            Tree2(
                root=SplitNode(chans[0], rects[0], thr[0], pol[0]),
                left_child=SplitNode(chans[1], rects[1], thr[1], pol[1]),
                right_child=SplitNode(chans[2], rects[2], thr[2], pol[2]),
                leaf_values=leaves,
            )
        )
        weights.append(alpha)

        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
        log.append({"epsilon": eps, "alpha": alpha})
        if degenerate:
            early_stop = True
            break

    if not trees:
        raise ValueError("no usable tree could be fit (first round degenerate)")
    return ForestModel(
        trees=trees,
        tree_weights=weights,
        channel_cfg=channel_cfg,
        model_window=model_window,
        early_stop=early_stop,
        training_log=log,
    )


def score_window_grid(
    model: ForestModel, stack: ChannelStack, stride: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forest scores for every stride-aligned model window in the stack.

    Returns (scores[ny, nx], xs, ys) with window origins (xs[j], ys[i]).
    """
    win_h, win_w = model.model_window
    xs = np.arange(0, stack.width - win_w + 1, stride, dtype=np.intp)
    ys = np.arange(0, stack.height - win_h + 1, stride, dtype=np.intp)
    if xs.size == 0 or ys.size == 0:
        return np.zeros((0, 0)), xs, ys
    scores = np.full((ys.size, xs.size), model.score_offset, dtype=np.float64)

    def decisions(node: SplitNode) -> np.ndarray:
        x, y, w, h = _scaled_rect(node.rect, 1.0)
        ii = stack.integrals[node.channel]
        yy = ys[:, None]
        xx = xs[None, :]
        s = (
            ii[yy + y + h, xx + x + w]
            - ii[yy + y, xx + x + w]
            - ii[yy + y + h, xx + x]
            + ii[yy + y, xx + x]
        )
        return node.polarity * (s / (w * h) - node.threshold) > 0

    for tree, alpha in zip(model.trees, model.tree_weights):
        d0 = decisions(tree.root)
        d1 = decisions(tree.left_child)
        d2 = decisions(tree.right_child)
        idx = _leaf_index(d0, d1, d2)
        scores += alpha * np.take(np.asarray(tree.leaf_values), idx)
    return scores, xs, ys


def pyramid_ratios(
    img_h: int, img_w: int, model: ForestModel, cfg: SlidingWindowConfig
) -> List[float]:
    """Resize ratios of the scale pyramid, finest (largest ratio) first."""
    win_h, win_w = model.model_window
    extent_h = win_h * OBJECT_EXTENT_RATIO
    r = extent_h / cfg.min_height
    ratios = []
    while round(img_h * r) >= win_h and round(img_w * r) >= win_w:
        ratios.append(r)
        r /= cfg.scale_step
    return ratios


def detect(
    img: Image, model: ForestModel, cfg: SlidingWindowConfig
) -> List[Detection]:
    """Sliding-window detection over a scale pyramid.

    Reported boxes are the object extent (central 3/4 of the model window)
    mapped back to original image coordinates.  Returns [] when the image is
    too small for even the coarsest scale.
    """
    arr = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    win_h, win_w = model.model_window
    margin_x = win_w * (1.0 - OBJECT_EXTENT_RATIO) / 2.0
    margin_y = win_h * (1.0 - OBJECT_EXTENT_RATIO) / 2.0

    dets: List[Detection] = []
    for r in pyramid_ratios(arr.shape[0], arr.shape[1], model, cfg):
        if abs(r - 1.0) < 1e-12:
            scaled = arr
        else:
            scaled = bilinear_resize(arr, int(round(arr.shape[0] * r)), int(round(arr.shape[1] * r)))
        stack = compute_channels(scaled, model.channel_cfg)
        scores, xs, ys = score_window_grid(model, stack, cfg.stride)
        keep_i, keep_j = np.nonzero(scores > cfg.score_threshold)
        for i, j in zip(keep_i, keep_j):
            x = (xs[j] + margin_x) / r
            y = (ys[i] + margin_y) / r
            dets.append(
                Detection(
                    Box(x, y, win_w * OBJECT_EXTENT_RATIO / r, win_h * OBJECT_EXTENT_RATIO / r),
                    float(scores[i, j]),
                )
            )
    return nms(dets, cfg.nms_iou)


def filter_proposals(
    dets: Sequence[Sequence[Detection]], target_avg: float
) -> Tuple[float, List[List[Detection]]]:
    """Smallest score threshold keeping mean proposals/image <= target_avg.

    Detections with score >= the returned threshold survive.
    """
    if target_avg <= 0:
        raise ValueError("target_avg must be > 0")
    n_images = len(dets)
    scores = np.sort(np.array([d.score for per in dets for d in per]))[::-1]
    allowed = math.floor(target_avg * n_images)
    if scores.size <= allowed:
        threshold = -math.inf
    else:
        uniq = np.unique(scores)[::-1]
        # cumulative count of detections at or above each unique score
        cum = np.searchsorted(-scores, -uniq, side="right")
        ok = np.nonzero(cum <= allowed)[0]
        threshold = float(uniq[ok[-1]]) if ok.size else math.inf
    filtered = [[d for d in per if d.score >= threshold] for per in dets]
    return threshold, filtered


# ---------------------------------------------------------------------------
# serialization (versioned JSON)

FOREST_FORMAT_VERSION = 1


def _node_to_json(n: SplitNode) -> dict:
    return {
        "channel": n.channel,
        "rect": [n.rect.x, n.rect.y, n.rect.w, n.rect.h],
        "threshold": n.threshold,
        "polarity": n.polarity,
    }


def _node_from_json(d: dict) -> SplitNode:
    return SplitNode(d["channel"], Box(*d["rect"]), d["threshold"], d["polarity"])


def forest_to_json(model: ForestModel) -> dict:
    return {
        "version": FOREST_FORMAT_VERSION,
        "model_window": list(model.model_window),
        "score_offset": model.score_offset,
        "early_stop": model.early_stop,
        "channel_cfg": {
            "kind": model.channel_cfg.kind,
            "orientation_bins": model.channel_cfg.orientation_bins,
            "pre_blur": model.channel_cfg.pre_blur,
        },
        "tree_weights": list(model.tree_weights),
        "trees": [
            {
                "root": _node_to_json(t.root),
                "left": _node_to_json(t.left_child),
                "right": _node_to_json(t.right_child),
                "leaves": list(t.leaf_values),
            }
            for t in model.trees
        ],
        "training_log": model.training_log,
    }


def forest_from_json(d: dict) -> ForestModel:
    if d.get("version") != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {d.get('version')!r}")
    cfg = ChannelConfig(**d["channel_cfg"])
    trees = [
        Tree2(
            root=_node_from_json(t["root"]),
            left_child=_node_from_json(t["left"]),
            right_child=_node_from_json(t["right"]),
            leaf_values=tuple(t["leaves"]),
        )
        for t in d["trees"]
    ]
    return ForestModel(
        trees=trees,
        tree_weights=list(d["tree_weights"]),
        channel_cfg=cfg,
        model_window=tuple(d["model_window"]),
        score_offset=d["score_offset"],
        early_stop=d.get("early_stop", False),
        training_log=d.get("training_log", []),
    )


def save_forest(model: ForestModel, path) -> None:
    Path(path).write_text(json.dumps(forest_to_json(model), indent=1, sort_keys=True))


def load_forest(path) -> ForestModel:
    return forest_from_json(json.loads(Path(path).read_text()))
