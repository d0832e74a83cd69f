"""Detection-based warning baseline: fit the HoG detector, then score images.

Images are brought to the 512x256 reference frame before detection, so the
64x128 detector window keeps its intended size relative to the scene at any
dataset resolution. Detections are mapped back to dataset pixels for export.
"""

import csv
import logging

import numpy as np

from . import hog
from .datagen import REF_H, REF_W, load_sample
from .errors import ContractError
from .tensor import Rng

log = logging.getLogger(__name__)

PERSON_FILL = 0.75  # person height / window height in the training crops
MIN_WINDOWS = 50


def reference_frame(image):
    """Grayscale (3, H, W) image resampled to the 512x256 reference frame."""
    return hog.resize(hog.to_gray(image), int(REF_H), int(REF_W))


def person_window(agent):
    h = (agent.y1 - agent.y0) / PERSON_FILL
    w = h * hog.WIN_W / hog.WIN_H
    cx, cy = 0.5 * (agent.x0 + agent.x1), 0.5 * (agent.y0 + agent.y1)
    return hog.Detection(cx - w / 2, cy - h / 2, w, h, 0.0)


def _window_sizes():
    return [(hog.WIN_W / s, hog.WIN_H / s) for s in hog.PYRAMID]


def training_windows(manifest, scenes, rng, negatives_per_image=4, min_height=hog.WIN_H * 0.6):
    """Descriptors of pedestrian crops (plus mirrors) and random background crops."""
    pos, neg = [], []
    sizes = _window_sizes()
    for entry, scene in zip(manifest.entries, scenes):
        frame = reference_frame(load_sample(manifest, entry).image)
        people = [person_window(a) for a in scene.agents]
        for agent, box in zip(scene.agents, people):
            if agent.kind != "pedestrian" or box.h < min_height:
                continue
            crop = hog.crop_resize(frame, (box.x, box.y, box.w, box.h))
            pos.append(hog.hog_descriptor(crop))
            pos.append(hog.hog_descriptor(crop[:, ::-1]))
        made = 0
        for _ in range(negatives_per_image * 10):
            if made == negatives_per_image:
                break
            w, h = sizes[int(rng.integers(len(sizes)))]
            cand = hog.Detection(rng.uniform(0, REF_W - w), rng.uniform(0, REF_H - h), w, h, 0.0)
            if any(hog.iou(cand, p) > 0.2 for p in people):
                continue
            neg.append(hog.hog_descriptor(hog.crop_resize(frame, (cand.x, cand.y, cand.w, cand.h))))
            made += 1
    return np.array(pos), np.array(neg)


def hard_negatives(manifest, scenes, classifier, limit_images=None, per_image=5):
    """False positives of ``classifier`` on training images (one mining round)."""
    out = []
    pairs = list(zip(manifest.entries, scenes))[:limit_images]
    for entry, scene in pairs:
        frame = reference_frame(load_sample(manifest, entry).image)
        people = [person_window(a) for a in scene.agents]
        dets = hog.detect(frame, classifier, threshold=-0.5)
        taken = 0
        for d in dets:
            if taken == per_image:
                break
            if any(hog.iou(d, p) > 0.2 for p in people):
                continue
            out.append(hog.hog_descriptor(hog.crop_resize(frame, (d.x, d.y, d.w, d.h))))
            taken += 1
    return np.array(out).reshape(-1, hog.DESCRIPTOR_LEN)


def fit_detector(manifest, scenes, seed, epochs=40, lr=0.05, mining_images=200):
    """Train the linear HoG classifier with one seeded round of hard-negative mining."""
    rng = Rng(seed).child("baseline/windows")
    pos, neg = training_windows(manifest, scenes, rng)
    log.info("baseline: %d positive / %d negative windows", len(pos), len(neg))
    if min(len(pos), len(neg)) < MIN_WINDOWS:
        raise ContractError(f"baseline needs >= {MIN_WINDOWS} windows per class, got {len(pos)} positive / "
                            f"{len(neg)} negative; generate more training images")
    clf = hog.train_linear_classifier(pos, neg, epochs=epochs, lr=lr, seed=seed)
    hard = hard_negatives(manifest, scenes, clf, limit_images=mining_images)
    if len(hard):
        log.info("baseline: %d hard negatives", len(hard))
        clf = hog.train_linear_classifier(pos, np.concatenate([neg, hard]), epochs=epochs, lr=lr, seed=seed)
    return clf


def score_images(manifest, classifier, threshold=-1.0):
    """Per-image warning scores plus detections in dataset pixel coordinates."""
    roi = hog.RoiRule(*hog.REF_ROI)
    scores, exported = [], []
    for entry in manifest.entries:
        image = load_sample(manifest, entry).image
        dets = hog.detect(reference_frame(image), classifier, threshold=threshold)
        scores.append(hog.warning_decision(dets, roi))
        sx, sy = image.shape[2] / REF_W, image.shape[1] / REF_H
        exported.extend((entry.image, d.x * sx, d.y * sy, d.w * sx, d.h * sy, d.score) for d in dets)
    return np.array(scores), exported


def write_detections(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "x", "y", "w", "h", "score"])
        for image, x, y, bw, bh, score in rows:
            w.writerow([image, repr(float(x)), repr(float(y)), repr(float(bw)), repr(float(bh)), repr(float(score))])
