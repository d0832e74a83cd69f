"""HoG pedestrian detector and the region-of-interest warning rule.

Conventions: images are 2-D float arrays (rows, cols) in [0, 1]; boxes are
``(x, y, w, h)`` in pixels of the image they were detected on.

Gradients are centered differences ``[-1, 0, 1]`` on interior pixels and
zero on the one-pixel border. Unsigned orientations in [0, 180) degrees vote
linearly into the two nearest of 9 bins centred at 0, 20, ..., 160 degrees
(wrapping from 160 back to 0), weighted by gradient magnitude.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .tensor import Rng

WIN_W, WIN_H = 64, 128
CELL = 8
BLOCK = 2
NBINS = 9
CLIP = 0.2
EPS = 1e-3
BLOCKS_X = WIN_W // CELL - BLOCK + 1
BLOCKS_Y = WIN_H // CELL - BLOCK + 1
BLOCK_LEN = BLOCK * BLOCK * NBINS
DESCRIPTOR_LEN = BLOCKS_X * BLOCKS_Y * BLOCK_LEN
PYRAMID = (1.0, 1.25 ** -1, 1.25 ** -2)
REF_ROI = (128, 0, 383, 255)
REF_SIZE = (512, 256)


@dataclass(frozen=True)
class HogParams:
    window: tuple = (WIN_W, WIN_H)
    cell: int = CELL
    block: int = BLOCK
    bins: int = NBINS
    clip: float = CLIP

    @property
    def descriptor_length(self):
        bx = self.window[0] // self.cell - self.block + 1
        by = self.window[1] // self.cell - self.block + 1
        return bx * by * self.block * self.block * self.bins


def to_gray(rgb):
    """Luminance 0.299 R + 0.587 G + 0.114 B of a (3, H, W) or (H, W, 3) image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 3 and rgb.shape[0] == 3 and rgb.shape[-1] != 3:
        r, g, b = rgb
    else:
        r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def gradients(gray):
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[1:-1, 1:-1] = gray[1:-1, 2:] - gray[1:-1, :-2]
    gy[1:-1, 1:-1] = gray[2:, 1:-1] - gray[:-2, 1:-1]
    return gx, gy


def cell_histograms(gray):
    """Orientation histograms of every full 8x8 cell: shape (rows, cols, 9)."""
    gray = np.asarray(gray, dtype=np.float64)
    gx, gy = gradients(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    pos = ang / (180.0 / NBINS)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(int) % NBINS
    hi = (lo + 1) % NBINS
    H, W = gray.shape
    rows, cols = H // CELL, W // CELL
    votes = np.zeros((H, W, NBINS))
    np.put_along_axis(votes, lo[..., None], (mag * (1 - frac))[..., None], axis=-1)
    hi_votes = np.zeros((H, W, NBINS))
    np.put_along_axis(hi_votes, hi[..., None], (mag * frac)[..., None], axis=-1)
    votes += hi_votes
    votes = votes[: rows * CELL, : cols * CELL]
    return votes.reshape(rows, CELL, cols, CELL, NBINS).sum(axis=(1, 3))


def l2_hys(v):
    v = v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + EPS * EPS)
    v = np.minimum(v, CLIP)
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + EPS * EPS)


def block_grid(gray):
    """L2-hys normalized 2x2-cell blocks at 1-cell stride: (rows-1, cols-1, 36)."""
    hist = cell_histograms(gray)
    blocks = np.concatenate([hist[:-1, :-1], hist[:-1, 1:], hist[1:, :-1], hist[1:, 1:]], axis=-1)
    return l2_hys(blocks)


def hog_descriptor(window):
    """3780-long descriptor of a 128-row by 64-column grayscale window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (WIN_H, WIN_W):
        raise ContractError(f"HoG window must be {WIN_H}x{WIN_W} (rows x cols), got {window.shape}")
    return block_grid(window).reshape(-1)


# ----------------------------------------------------------- resampling

def resize(gray, out_h, out_w):
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    H, W = gray.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (H / out_h) - 0.5, 0, H - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (W / out_w) - 0.5, 0, W - 1)
    return _sample(gray, ys, xs)


def crop_resize(gray, box, out_w=WIN_W, out_h=WIN_H):
    """Resample the box ``(x, y, w, h)`` to ``out_h x out_w``; outside pixels clamp to the edge."""
    x, y, w, h = box
    H, W = gray.shape
    ys = np.clip(y + (np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, H - 1)
    xs = np.clip(x + (np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, W - 1)
    return _sample(gray, ys, xs)


def _sample(gray, ys, xs):
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gray.shape[0] - 1)
    x1 = np.minimum(x0 + 1, gray.shape[1] - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = gray[np.ix_(y0, x0)] * (1 - fx) + gray[np.ix_(y0, x1)] * fx
    bot = gray[np.ix_(y1, x0)] * (1 - fx) + gray[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


# ------------------------------------------------------------ classifier

@dataclass
class LinearClassifier:
    w: np.ndarray
    b: float
    train_accuracy: float = float("nan")

    def score(self, X):
        return np.asarray(X) @ self.w + self.b

    def params(self):
        from .tensor import Parameter
        return [Parameter("hog.w", self.w.copy()), Parameter("hog.b", np.array([self.b]))]

    @classmethod
    def from_params(cls, params):
        by = {p.name: p.value for p in params}
        return cls(np.asarray(by["hog.w"], dtype=np.float64), float(by["hog.b"][0]))


def train_linear_classifier(pos, neg, epochs=40, lr=0.05, seed=0, reg=1e-4, batch_size=32):
    """L2-regularized hinge-loss linear model fit by seeded mini-batch SGD."""
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0:
        raise ContractError("need both positive and negative samples to train the classifier")
    X = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    # balance the two classes' contribution to the loss
    weight = np.where(y > 0, len(X) / (2 * len(pos)), len(X) / (2 * len(neg)))
    rng = Rng(seed).child("hog-classifier")
    w = np.zeros(X.shape[1])
    b = 0.0
    for epoch in range(epochs):
        step = lr / (1 + epoch)
        order = rng.permutation(len(X))
        for i in range(0, len(X), batch_size):
            idx = order[i : i + batch_size]
            margin = y[idx] * (X[idx] @ w + b)
            active = margin < 1
            coef = -(y[idx] * weight[idx] * active) / len(idx)
            w -= step * (X[idx].T @ coef + reg * w)
            b -= step * coef.sum()
    acc = float(np.mean(np.sign(X @ w + b + 1e-300) == y))
    return LinearClassifier(w, b, acc)


# ------------------------------------------------------------- detection

@dataclass
class Detection:
    x: float
    y: float
    w: float
    h: float
    score: float

    @property
    def center(self):
        return self.x + self.w / 2, self.y + self.h / 2


def score_windows(gray, classifier, stride=CELL):
    """Classifier margin for every window position: array (ny, nx) and cell steps."""
    if stride % CELL:
        raise ContractError(f"window stride must be a multiple of the cell size {CELL}")
    blocks = block_grid(gray)
    if blocks.shape[0] < BLOCKS_Y or blocks.shape[1] < BLOCKS_X:
        return np.zeros((0, 0)), stride // CELL
    w = classifier.w.reshape(BLOCKS_Y, BLOCKS_X, BLOCK_LEN)
    step = stride // CELL
    view = sliding_window_view(blocks, (BLOCKS_Y, BLOCKS_X), axis=(0, 1))[::step, ::step]
    scores = np.einsum("yxcij,ijc->yx", view, w) + classifier.b
    return scores, step


def iou(a, b):
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(detections, threshold=0.5):
    """Greedy suppression, highest score first; ties keep scan order."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    keep = []
    for i in order:
        d = detections[i]
        if all(iou(d, k) <= threshold for k in keep):
            keep.append(d)
    return keep


def detect(gray, classifier, scales=PYRAMID, stride=CELL, threshold=0.0, nms_iou=0.5):
    """Sliding-window detection over an image pyramid, followed by NMS.

    Boxes are reported in the coordinates of ``gray``.
    """
    gray = np.asarray(gray, dtype=np.float64)
    H, W = gray.shape
    found = []
    for s in scales:
        h, w = int(round(H * s)), int(round(W * s))
        if h < WIN_H or w < WIN_W:
            continue
        level = gray if s == 1.0 else resize(gray, h, w)
        scores, step = score_windows(level, classifier, stride)
        ys, xs = np.nonzero(scores > threshold)
        for cy, cx in zip(ys, xs):
            found.append(Detection(cx * step * CELL / s, cy * step * CELL / s,
                                   WIN_W / s, WIN_H / s, float(scores[cy, cx])))
    return nms(found, nms_iou)


# --------------------------------------------------------- warning rule

@dataclass(frozen=True)
class RoiRule:
    """Inclusive pixel corners of the dangerous region."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ContractError(f"ROI corners must satisfy x0 < x1 and y0 < y1: {self}")

    @classmethod
    def scaled(cls, width, height):
        """The 512x256 reference ROI mapped onto a ``width`` x ``height`` image."""
        sx, sy = width / REF_SIZE[0], height / REF_SIZE[1]
        x0, y0, x1, y1 = REF_ROI
        return cls(x0 * sx, y0 * sy, (x1 + 1) * sx - 1, (y1 + 1) * sy - 1)

    def contains(self, x, y):
        return self.x0 <= x < self.x1 + 1 and self.y0 <= y < self.y1 + 1


NO_DETECTION = -math.inf


def warning_decision(detections, roi):
    """Largest score among detections centred in the ROI, or ``-inf``."""
    best = NO_DETECTION
    for d in detections:
        if roi.contains(*d.center) and d.score > best:
            best = d.score
    return best
