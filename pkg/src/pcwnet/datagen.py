"""Deterministic synthetic street scenes with segmentation and warning labels.

Scene geometry lives in a 512 x 256 reference frame and is rasterized at the
requested resolution by sampling pixel centers. A scene is labelled
``warning = 1`` exactly when the footprint (bottom edge) of at least one
pedestrian or cyclist overlaps the road surface.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ParseError
from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .tensor import Rng

REF_W, REF_H = 512.0, 256.0

BACKGROUND, ROAD, SIDEWALK, VEHICLE, PEDESTRIAN, CYCLIST = range(6)
CLASS_NAMES = ("background", "road", "sidewalk", "vehicle", "pedestrian", "cyclist")
NUM_CLASSES = len(CLASS_NAMES)
AGENT_CLASSES = {"pedestrian": PEDESTRIAN, "cyclist": CYCLIST}


@dataclass(frozen=True)
class SceneParams:
    """Distribution of scene geometry, in reference-frame units."""

    horizon: tuple = (0.34, 0.44)          # fraction of image height
    road_top_half: tuple = (4.0, 14.0)     # half-width of the road at the horizon
    road_bottom_half: tuple = (80.0, 250.0)
    road_offset: tuple = (-90.0, 90.0)     # bottom-center shift from the vanishing point
    vanishing_x: tuple = (200.0, 312.0)
    sidewalk_bottom: tuple = (50.0, 130.0)
    agent_height_min: float = 44.0
    agent_scale: tuple = (0.75, 0.95)      # agent height / (foot y - horizon)
    max_agents: int = 3
    cyclist_prob: float = 0.3
    max_vehicles: int = 2
    buildings: tuple = (3, 8)
    noise: float = 0.03

    def validate(self):
        for name in ("horizon", "road_top_half", "road_bottom_half", "road_offset", "vanishing_x",
                     "sidewalk_bottom", "agent_scale", "buildings"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"scene parameter {name}: lower bound {lo} exceeds upper bound {hi}")
        if not (0.1 <= self.horizon[0] and self.horizon[1] <= 0.7):
            raise ConfigError(f"scene parameter horizon must lie in [0.1, 0.7], got {self.horizon}")
        if self.road_top_half[0] <= 0 or self.road_bottom_half[0] <= self.road_top_half[1]:
            raise ConfigError("road must widen from the horizon towards the camera")
        if self.agent_height_min <= 0 or self.agent_height_min > 0.9 * REF_H * (1 - self.horizon[1]):
            raise ConfigError(f"agent_height_min {self.agent_height_min} cannot fit below the horizon")
        if not 0 <= self.cyclist_prob <= 1:
            raise ConfigError(f"cyclist_prob must be in [0, 1], got {self.cyclist_prob}")
        if self.max_agents < 1 or self.max_vehicles < 0 or self.noise < 0:
            raise ConfigError("max_agents must be >= 1, max_vehicles and noise >= 0")


@dataclass
class Agent:
    kind: str
    x0: float
    y0: float
    x1: float
    y1: float  # foot row
    colors: list = field(default_factory=list)

    @property
    def footprint(self):
        return self.x0, self.x1, self.y1


@dataclass
class Scene:
    horizon: float
    road: tuple  # (top_left, top_right, bottom_left, bottom_right) x coordinates
    sidewalk: tuple  # (left, right) widths at the bottom row
    agents: list
    vehicles: list
    buildings: list
    palette: dict
    noise: float

    def road_interval(self, y):
        """Open x-interval covered by road at reference row ``y`` (None above the horizon)."""
        if y <= self.horizon:
            return None
        t = (y - self.horizon) / (REF_H - self.horizon)
        tl, tr, bl, br = self.road
        return tl + (bl - tl) * t, tr + (br - tr) * t

    def sidewalk_intervals(self, y):
        lo, hi = self.road_interval(y)
        t = (y - self.horizon) / (REF_H - self.horizon)
        return (lo - self.sidewalk[0] * t, lo), (hi, hi + self.sidewalk[1] * t)

    @property
    def warning(self):
        return int(any(footprint_on_road(self, a) for a in self.agents))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["agents"] = [Agent(**a) for a in d["agents"]]
        d["road"] = tuple(d["road"])
        d["sidewalk"] = tuple(d["sidewalk"])
        return cls(**d)


def footprint_on_road(scene, agent):
    if agent.kind not in AGENT_CLASSES:
        return False
    interval = scene.road_interval(agent.y1)
    if interval is None:
        return False
    lo, hi = interval
    return agent.x0 < hi and agent.x1 > lo


# ---------------------------------------------------------------- sampling

def _color(rng, base, jitter):
    return np.clip(np.asarray(base) + rng.uniform(-jitter, jitter, 3), 0.0, 1.0).tolist()


def _palette(rng):
    grey = rng.uniform(0.25, 0.45)
    side = rng.uniform(0.55, 0.75)
    return {
        "sky": _color(rng, (0.55, 0.7, 0.9), 0.1),
        "terrain": _color(rng, [(0.3, 0.45, 0.2), (0.45, 0.38, 0.28), (0.5, 0.5, 0.45)][rng.integers(3)], 0.07),
        "road": _color(rng, (grey, grey, grey + 0.02), 0.03),
        "sidewalk": _color(rng, (side, side * 0.95, side * 0.85), 0.05),
        "marking": _color(rng, (0.9, 0.9, 0.85), 0.05),
    }


def sample_scene(rng, warning, params=SceneParams()):
    """Draw one scene whose ``warning`` property equals the requested label."""
    P = params
    horizon = rng.uniform(*P.horizon) * REF_H
    vx = rng.uniform(*P.vanishing_x)
    top = rng.uniform(*P.road_top_half)
    bottom = rng.uniform(*P.road_bottom_half)
    cx = vx + rng.uniform(*P.road_offset)
    road = (vx - top, vx + top, cx - bottom, cx + bottom)
    sidewalk = (rng.uniform(*P.sidewalk_bottom), rng.uniform(*P.sidewalk_bottom))
    scene = Scene(horizon, road, sidewalk, [], [], [], _palette(rng), P.noise)

    for _ in range(int(rng.integers(P.buildings[0], P.buildings[1] + 1))):
        w = rng.uniform(30, 110)
        x = rng.uniform(-20, REF_W - w + 20)
        h = rng.uniform(0.3, 0.95) * horizon
        scene.buildings.append({"box": [x, horizon - h, x + w, horizon + 2.0],
                                "color": _color(rng, (0.55, 0.5, 0.45), 0.25),
                                "window": _color(rng, (0.2, 0.25, 0.3), 0.1)})

    for _ in range(int(rng.integers(0, P.max_vehicles + 1))):
        y = rng.uniform(horizon + 30, REF_H - 4)
        lo, hi = scene.road_interval(y)
        h = 0.55 * (y - horizon)
        w = min(1.6 * h, hi - lo)
        if w < 8:
            continue
        x = rng.uniform(lo, hi - w)
        if y - h < 0:
            continue
        scene.vehicles.append({"box": [x, y - h, x + w, y],
                               "color": _color(rng, (0.5, 0.3, 0.3), 0.35)})

    if warning:
        for _attempt in range(1000):
            if _place_agent(scene, rng, P, on_road=True):
                break
        else:
            raise ConfigError("could not place an agent on the road; check the scene parameters")
    n_side = int(rng.integers(0, P.max_agents)) if warning else int(rng.integers(0, P.max_agents + 1))
    for _ in range(n_side):
        for _attempt in range(20):
            if _place_agent(scene, rng, P, on_road=False):
                break
    scene.agents.sort(key=lambda a: a.y1)
    if scene.warning != int(warning):
        raise AssertionError("scene sampler produced an inconsistent label")
    return scene


def _place_agent(scene, rng, P, on_road):
    kind = "cyclist" if rng.uniform() < P.cyclist_prob else "pedestrian"
    y_min = scene.horizon + P.agent_height_min / P.agent_scale[0]
    if y_min >= REF_H - 2:
        raise ConfigError("agents cannot reach their minimum height below the horizon")
    y = rng.uniform(y_min, REF_H - 2)
    h = rng.uniform(*P.agent_scale) * (y - scene.horizon)
    if kind == "cyclist":
        h *= 0.95
    w = h * (0.75 if kind == "cyclist" else 0.38)
    if h < P.agent_height_min or y - h < 0:
        return False
    lo, hi = scene.road_interval(y)
    if on_road:
        a, b = max(lo, w / 2), min(hi, REF_W - w / 2)
    else:
        (l0, l1), (r0, r1) = scene.sidewalk_intervals(y)
        if rng.uniform() < 0.5:
            a, b = max(l0, w / 2), min(l1 - w / 2 - 1.0, REF_W - w / 2)
        else:
            a, b = max(r0 + w / 2 + 1.0, w / 2), min(r1, REF_W - w / 2)
    if a >= b:
        return False
    x = rng.uniform(a, b)
    agent = Agent(kind, x - w / 2, y - h, x + w / 2, y, _agent_colors(rng))
    if footprint_on_road(scene, agent) != on_road:
        return False
    scene.agents.append(agent)
    return True


def _agent_colors(rng):
    skin = _color(rng, (0.8, 0.6, 0.45), 0.12)
    return [skin, _color(rng, (0.5, 0.4, 0.4), 0.45), _color(rng, (0.2, 0.2, 0.3), 0.2)]


# ------------------------------------------------------------- rendering

def render(scene, width, height, rng):
    """Rasterize ``scene``; returns (rgb uint8 (H,W,3), labels uint8 (H,W))."""
    u = (np.arange(width) + 0.5) * (REF_W / width)
    v = (np.arange(height) + 0.5) * (REF_H / height)
    X, Y = np.meshgrid(u, v)
    img = np.empty((height, width, 3))
    lab = np.zeros((height, width), dtype=np.uint8)
    pal = scene.palette

    sky = Y <= scene.horizon
    shade = np.clip((Y - scene.horizon) / (REF_H - scene.horizon), 0, 1)[..., None]
    img[:] = np.asarray(pal["terrain"]) * (0.8 + 0.3 * shade)
    img[sky] = pal["sky"]
    for b in scene.buildings:
        x0, y0, x1, y1 = b["box"]
        m = (X >= x0) & (X < x1) & (Y >= y0) & (Y < min(y1, scene.horizon + 1e-9))
        img[m] = b["color"]
        win = m & (np.mod(X - x0, 14.0) > 7.0) & (np.mod(Y - y0, 16.0) > 8.0)
        img[win] = b["window"]

    below = ~sky
    t = np.where(below, (Y - scene.horizon) / (REF_H - scene.horizon), 0.0)
    tl, tr, bl, br = scene.road
    lo = tl + (bl - tl) * t
    hi = tr + (br - tr) * t
    road = below & (X > lo) & (X < hi)
    side = below & ~road & (X > lo - scene.sidewalk[0] * t) & (X < hi + scene.sidewalk[1] * t)
    img[side] = pal["sidewalk"]
    lab[side] = SIDEWALK
    img[road] = pal["road"]
    lab[road] = ROAD
    mid = 0.5 * (lo + hi)
    dash = road & (np.abs(X - mid) < 0.6 + 2.5 * t) & (np.mod(np.sqrt(np.maximum(t, 0)) * 12.0, 1.0) < 0.5)
    img[dash] = pal["marking"]

    things = [(v["box"][3], "vehicle", v) for v in scene.vehicles] + [(a.y1, "agent", a) for a in scene.agents]
    for _, kind, obj in sorted(things, key=lambda item: item[0]):
        if kind == "vehicle":
            _draw_vehicle(img, lab, X, Y, obj)
        else:
            _draw_agent(img, lab, X, Y, obj)

    if scene.noise:
        img = img + rng.normal(img.shape, scene.noise)
    rgb = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return rgb, lab


def _box(X, Y, x0, y0, x1, y1):
    return (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)


def _draw_vehicle(img, lab, X, Y, v):
    x0, y0, x1, y1 = v["box"]
    h, w = y1 - y0, x1 - x0
    body = _box(X, Y, x0, y0 + 0.3 * h, x1, y1 - 0.15 * h)
    cabin = _box(X, Y, x0 + 0.15 * w, y0, x1 - 0.15 * w, y0 + 0.3 * h)
    wheels = _box(X, Y, x0 + 0.05 * w, y1 - 0.2 * h, x0 + 0.3 * w, y1) | _box(X, Y, x1 - 0.3 * w, y1 - 0.2 * h, x1 - 0.05 * w, y1)
    img[body] = v["color"]
    img[cabin] = (0.15, 0.2, 0.25)
    img[wheels] = (0.05, 0.05, 0.05)
    lab[body | cabin | wheels] = VEHICLE


def _draw_agent(img, lab, X, Y, a):
    skin, top, bottom = a.colors
    x0, y0, x1, y1 = a.x0, a.y0, a.x1, a.y1
    h, w = y1 - y0, x1 - x0
    cx = 0.5 * (x0 + x1)
    parts = []
    if a.kind == "pedestrian":
        parts.append((_box(X, Y, cx - 0.22 * w, y0, cx + 0.22 * w, y0 + 0.14 * h), skin))
        parts.append((_box(X, Y, cx - 0.36 * w, y0 + 0.14 * h, cx + 0.36 * w, y0 + 0.55 * h), top))
        parts.append((_box(X, Y, x0, y0 + 0.16 * h, cx - 0.36 * w, y0 + 0.5 * h), top))
        parts.append((_box(X, Y, cx + 0.36 * w, y0 + 0.16 * h, x1, y0 + 0.5 * h), top))
        parts.append((_box(X, Y, cx - 0.34 * w, y0 + 0.55 * h, cx - 0.04 * w, y1), bottom))
        parts.append((_box(X, Y, cx + 0.04 * w, y0 + 0.55 * h, cx + 0.34 * w, y1), bottom))
    else:
        r = 0.3 * w
        for wx in (x0 + r, x1 - r):
            ring = ((X - wx) ** 2 + (Y - (y1 - r)) ** 2 <= r * r) & ((X - wx) ** 2 + (Y - (y1 - r)) ** 2 >= (0.55 * r) ** 2)
            parts.append((ring, (0.05, 0.05, 0.05)))
        parts.append((_box(X, Y, x0 + r, y1 - 1.25 * r, x1 - r, y1 - 0.95 * r), bottom))
        parts.append((_box(X, Y, cx - 0.1 * w, y0, cx + 0.12 * w, y0 + 0.13 * h), skin))
        parts.append((_box(X, Y, cx - 0.16 * w, y0 + 0.13 * h, cx + 0.16 * w, y0 + 0.5 * h), top))
        parts.append((_box(X, Y, cx - 0.12 * w, y0 + 0.5 * h, cx + 0.08 * w, y1 - 1.25 * r), bottom))
    cls = AGENT_CLASSES[a.kind]
    for mask, color in parts:
        img[mask] = color
        lab[mask] = cls


# ------------------------------------------------------- dataset on disk

@dataclass
class Entry:
    image: str
    seg: str
    warning: int


@dataclass
class Manifest:
    entries: list
    split: str = "train"
    seed: int = 0
    root: str = "."

    def labels(self):
        return np.array([e.warning for e in self.entries], dtype=int)

    def path(self, rel):
        return os.path.join(self.root, rel)

    def __len__(self):
        return len(self.entries)


@dataclass
class Sample:
    image: np.ndarray      # (3, H, W) in [0, 1]
    seg_label: np.ndarray  # (H, W) class ids
    warning: int

    @property
    def seg_target(self):
        return encode_segmentation(self.seg_label)


def encode_segmentation(labels):
    """Per-pixel regression target ``class_id / (num_classes - 1)``, flattened row-major."""
    return np.asarray(labels, dtype=np.float64).ravel() / (NUM_CLASSES - 1)


def generate_dataset(out_dir, count, split="train", width=64, height=32, warning_fraction=1 / 6,
                     seed=0, params=SceneParams()):
    """Render ``count`` scenes into ``out_dir`` and write ``<split>.csv``.

    Exactly ``round(count * warning_fraction)`` scenes are warnings. Scene
    geometry is saved alongside in ``<split>_scenes.json``.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if not 0 < warning_fraction < 1:
        raise ConfigError(f"warning_fraction must be in (0, 1), got {warning_fraction}")
    if width < 8 or height < 4:
        raise ConfigError(f"image size {width}x{height} is too small")
    params.validate()
    root = Rng(seed).child(f"datagen/{split}")
    n_warn = int(round(count * warning_fraction))
    warn = np.zeros(count, dtype=int)
    warn[root.child("labels").permutation(count)[:n_warn]] = 1

    img_dir = os.path.join(out_dir, split)
    os.makedirs(img_dir, exist_ok=True)
    entries, scenes = [], []
    for i in range(count):
        rng = root.child(i)
        scene = sample_scene(rng.child("geometry"), int(warn[i]), params)
        rgb, lab = render(scene, width, height, rng.child("noise"))
        image = f"{split}/{i:05d}.ppm"
        seg = f"{split}/{i:05d}.pgm"
        write_ppm(os.path.join(out_dir, image), rgb)
        write_pgm(os.path.join(out_dir, seg), lab)
        entries.append(Entry(image, seg, scene.warning))
        scenes.append(scene.to_dict())

    manifest = Manifest(entries, split, seed, out_dir)
    write_manifest(manifest, os.path.join(out_dir, f"{split}.csv"))
    with open(os.path.join(out_dir, f"{split}_scenes.json"), "w") as fh:
        json.dump({"split": split, "seed": seed, "width": width, "height": height,
                   "params": asdict(params), "scenes": scenes}, fh, sort_keys=True)
    return manifest


def load_scenes(out_dir, split):
    with open(os.path.join(out_dir, f"{split}_scenes.json")) as fh:
        meta = json.load(fh)
    return [Scene.from_dict(s) for s in meta["scenes"]]


def write_manifest(manifest, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "seg", "warning"])
        for e in manifest.entries:
            w.writerow([e.image, e.seg, e.warning])


def read_manifest(path, split=None, seed=0):
    root = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["image", "seg", "warning"]:
        raise ParseError(f"{path}: expected header image,seg,warning", 0)
    entries = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != 3 or row[2] not in ("0", "1"):
            raise ParseError(f"{path}: bad manifest row {n}: {row}")
        entries.append(Entry(row[0], row[1], int(row[2])))
    split = split or os.path.splitext(os.path.basename(path))[0]
    return Manifest(entries, split, seed, root)


def balance(manifest):
    """Duplicate minority-class entries until both classes have equal counts.

    Every minority entry is repeated ``maj // mino`` times and the first
    ``maj % mino`` of them once more; copies follow their original entry.
    """
    labels = manifest.labels()
    counts = np.bincount(labels, minlength=2)
    if counts.min() == 0:
        missing = int(np.argmin(counts))
        raise ContractError(f"cannot balance: class {missing} is absent")
    minority = int(np.argmin(counts)) if counts[0] != counts[1] else None
    if minority is None:
        return Manifest(list(manifest.entries), manifest.split, manifest.seed, manifest.root)
    maj, mino = int(counts.max()), int(counts.min())
    base, extra = divmod(maj, mino)
    out, seen = [], 0
    for e in manifest.entries:
        if e.warning != minority:
            out.append(e)
            continue
        reps = base + (1 if seen < extra else 0)
        seen += 1
        out.extend([e] * reps)
    return Manifest(out, manifest.split, manifest.seed, manifest.root)


def load_sample(manifest, entry):
    rgb = read_ppm(manifest.path(entry.image))
    lab = read_pgm(manifest.path(entry.seg))
    if rgb.shape[:2] != lab.shape:
        raise ParseError(f"{entry.seg}: size {lab.shape} does not match image {rgb.shape[:2]}")
    if lab.max(initial=0) >= NUM_CLASSES:
        raise ParseError(f"{entry.seg}: class id {int(lab.max())} outside the palette")
    image = rgb.transpose(2, 0, 1).astype(np.float64) / 255.0
    return Sample(image, lab.astype(np.int64), entry.warning)


def load_arrays(manifest):
    """Stack a manifest into (images, labels, seg_targets) arrays.

    Duplicated entries are read from disk once.
    """
    cache = {}
    images, targets = [], []
    for e in manifest.entries:
        if e.image not in cache:
            s = load_sample(manifest, e)
            cache[e.image] = (s.image, s.seg_target)
        img, tgt = cache[e.image]
        images.append(img)
        targets.append(tgt)
    return np.stack(images), manifest.labels(), np.stack(targets)
