"""The dual-branch warning network: prediction + semantic segmentation.

Layout (names are the parameter prefixes used in checkpoints)::

    image -> conv1 -> relu -> pool1 -> conv2 -> relu -> pool2   (shared)
    pool2 -> conv3 -> relu -> conv4 -> relu -> pool3 -> fc1 -> relu
    pool2 -> fc3 -> fc4                                          (segmentation)
    [fc1 | fc3] -> fc2 -> relu -> cls -> softmax                 (prediction)

The segmentation features only reach fc2 when the segmentation loss weight
``lam`` is positive; with ``lam == 0`` their slot in fc2's input is zero and
the network is exactly the prediction branch on its own.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, ContractError, TrainingError
from .losses import cross_entropy_loss, euclidean_loss, total_loss
from .optim import OptimizerConfig, sgd_step
from .tensor import Parameter, Rng, as_tensor, he_init, save_checkpoint

BASE_WIDTH = 512
BASE_HEIGHT = 256
MIN_WIDTH = 8

# (name, kernel, channels, stride) and (name, kernel, stride) at full scale
CONV_SPECS = {"conv1": (11, 96, 4), "conv2": (5, 256, 1), "conv3": (3, 384, 1), "conv4": (3, 256, 1)}
POOL_SPECS = {"pool1": (3, 2), "pool2": (3, 2), "pool3": (3, 2)}
FC_WIDTHS = {"fc1": 256, "fc2": 256, "fc3": 2048}
NUM_CLASSES = 2
INPUT_MEAN = 0.5  # subtracted from every pixel before conv1
SHARED = ("conv1", "conv2")
SEGMENTATION_ONLY = ("fc3", "fc4")
PARAM_ORDER = ("conv1", "conv2", "conv3", "conv4", "fc1", "fc2", "cls", "fc3", "fc4")


@dataclass(frozen=True)
class ArchitectureConfig:
    scale_divisor: int = 1
    lam: float = 1e-3
    channels: int = 3

    def __post_init__(self):
        s = self.scale_divisor
        if s < 1 or BASE_WIDTH % s or BASE_HEIGHT % s:
            raise ConfigError(f"scale_divisor must be a positive divisor of {BASE_HEIGHT}, got {s}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.channels != 3:
            raise ConfigError("only 3-channel RGB input is supported")

    @property
    def width(self):
        return BASE_WIDTH // self.scale_divisor

    @property
    def height(self):
        return BASE_HEIGHT // self.scale_divisor

    @property
    def segmentation_enabled(self):
        return self.lam > 0

    def scaled(self, n):
        return max(MIN_WIDTH, n // self.scale_divisor)


@dataclass
class LayerPlan:
    name: str
    kind: str
    in_shape: tuple
    out_shape: tuple
    kernel: tuple = ()
    stride: int = 1
    pad: int = 0
    param_shapes: dict = field(default_factory=dict)


def plan(config):
    """Resolve every layer's shapes for ``config`` without allocating weights.

    Pool windows are clipped to the incoming feature map when the map is
    smaller than the window, which only happens at reduced scales.
    """
    C, H, W = config.channels, config.height, config.width
    plans = {}

    def conv(name, shape):
        k, ch, stride = CONV_SPECS[name]
        c_in, h, w = shape
        pad = k // 2
        ho, wo = L.conv_output_size(h, k, stride, pad), L.conv_output_size(w, k, stride, pad)
        if ho < 1 or wo < 1:
            raise ConfigError(f"layer {name} collapses to {ho}x{wo} at scale_divisor {config.scale_divisor}")
        c_out = config.scaled(ch)
        plans[name] = LayerPlan(name, "conv", shape, (c_out, ho, wo), (k, k), stride, pad,
                                {"w": (c_out, c_in, k, k), "b": (c_out,)})
        return plans[name].out_shape

    def pool(name, shape):
        k, stride = POOL_SPECS[name]
        c, h, w = shape
        kh, kw = min(k, h), min(k, w)
        ho, wo = L.pool_output_size(h, kh, stride), L.pool_output_size(w, kw, stride)
        if ho < 1 or wo < 1:
            raise ConfigError(f"layer {name} collapses to {ho}x{wo} at scale_divisor {config.scale_divisor}")
        plans[name] = LayerPlan(name, "pool", shape, (c, ho, wo), (kh, kw), stride)
        return plans[name].out_shape

    def fc(name, d_in, d_out):
        plans[name] = LayerPlan(name, "fc", (d_in,), (d_out,),
                                param_shapes={"w": (d_out, d_in), "b": (d_out,)})
        return d_out

    shape = pool("pool1", conv("conv1", (C, H, W)))
    shared = pool("pool2", conv("conv2", shape))
    shape = pool("pool3", conv("conv4", conv("conv3", shared)))
    d1 = fc("fc1", int(np.prod(shape)), config.scaled(FC_WIDTHS["fc1"]))
    d3 = fc("fc3", int(np.prod(shared)), config.scaled(FC_WIDTHS["fc3"]))
    d2 = fc("fc2", d1 + d3, config.scaled(FC_WIDTHS["fc2"]))
    fc("cls", d2, NUM_CLASSES)
    fc("fc4", d3, config.width * config.height)
    return plans


class NetworkGraph:
    """Parameters plus the fixed topology of the warning network."""

    def __init__(self, config, params, plans=None):
        self.config = config
        self.plans = plans or plan(config)
        self.params = list(params)
        self.by_name = {p.name: p for p in self.params}
        expected = [f"{layer}.{kind}" for layer in PARAM_ORDER for kind in ("w", "b")]
        if [p.name for p in self.params] != expected:
            raise ContractError(f"parameter list does not match the architecture: {[p.name for p in self.params]}")
        for layer in PARAM_ORDER:
            for kind, shape in self.plans[layer].param_shapes.items():
                got = self.by_name[f"{layer}.{kind}"].shape
                if got != tuple(shape):
                    raise ContractError(f"{layer}.{kind} has shape {got}, expected {tuple(shape)}")

    def __getitem__(self, name):
        return self.by_name[name]

    @property
    def shared_layers(self):
        return SHARED

    def parameter_count(self):
        return int(sum(p.value.size for p in self.params))

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def save(self, path):
        save_checkpoint(path, self.params)

    @classmethod
    def from_params(cls, config, params):
        return cls(config, [Parameter(p.name, p.value.copy()) for p in params])


def build(config, rng):
    """Allocate and He-initialize every parameter; biases start at zero.

    Each weight is drawn from its own stream derived from the parameter name,
    so the initial value of a layer does not depend on which other layers
    exist or on their sizes.
    """
    plans = plan(config)
    params = []
    for layer in PARAM_ORDER:
        shapes = plans[layer].param_shapes
        w_shape = shapes["w"]
        fan_in = int(np.prod(w_shape[1:]))
        params.append(Parameter(f"{layer}.w", he_init(w_shape, fan_in, rng.child(f"{layer}.w"))))
        params.append(Parameter(f"{layer}.b", np.zeros(shapes["b"])))
    return NetworkGraph(config, params, plans)


@dataclass
class ForwardOutput:
    prediction_probs: np.ndarray
    segmentation_vec: np.ndarray
    logits: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def forward(graph, images):
    """Run both branches on a (B, 3, H, W) batch with pixels in [0, 1]."""
    cfg = graph.config
    x = as_tensor(images) - INPUT_MEAN
    if x.ndim == 3:
        x = x[None]
    want = (cfg.channels, cfg.height, cfg.width)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ContractError(f"batch shape {x.shape} does not match (B, {want[0]}, {want[1]}, {want[2]})")
    P, p = graph.plans, graph.by_name
    c = {"x": x}

    def conv_relu(name, inp):
        pl = P[name]
        pre = L.conv2d_forward(inp, p[name + ".w"].value, p[name + ".b"].value, pl.stride, pl.pad)
        c[name] = pre
        return L.relu_forward(pre)

    def pool(name, inp):
        pl = P[name]
        out, idx = L.maxpool_forward(inp, pl.kernel, pl.stride)
        c[name + ".in"] = inp
        c[name + ".idx"] = idx
        return out

    def fc(name, inp):
        c[name + ".in"] = inp
        return L.fc_forward(inp, p[name + ".w"].value, p[name + ".b"].value)

    B = x.shape[0]
    c["conv1.in"] = x
    a = pool("pool1", conv_relu("conv1", x))
    c["conv2.in"] = a
    shared = pool("pool2", conv_relu("conv2", a))
    c["conv3.in"] = shared
    a = conv_relu("conv3", shared)
    c["conv4.in"] = a
    a = pool("pool3", conv_relu("conv4", a))
    h1_pre = fc("fc1", a.reshape(B, -1))
    c["fc1"] = h1_pre
    h1 = L.relu_forward(h1_pre)
    h3 = fc("fc3", shared.reshape(B, -1))
    seg = fc("fc4", h3)
    feed = h3 if cfg.segmentation_enabled else np.zeros_like(h3)
    h2_pre = fc("fc2", np.concatenate([h1, feed], axis=1))
    c["fc2"] = h2_pre
    logits = fc("cls", L.relu_forward(h2_pre))
    return ForwardOutput(L.softmax(logits), seg, logits, c)


def backward(graph, out, targets, seg_targets, lam):
    """Accumulate d(L_c + lam * L_e)/dw into every parameter's grad.

    ``targets`` are one-hot (B, 2) rows or integer labels; ``seg_targets`` is
    (B, H*W). Returns ``(l_total, l_ce, l_euclid)``.
    """
    P, p, c = graph.plans, graph.by_name, out.cache
    targets = one_hot(targets)
    B = out.prediction_probs.shape[0]
    l_ce, g_logits = cross_entropy_loss(out.prediction_probs, targets)
    l_e, g_seg = euclidean_loss(out.segmentation_vec, seg_targets)
    l_t = total_loss(l_ce, l_e, lam)

    def fc_back(name, g):
        gx, gw, gb = L.fc_backward(g, c[name + ".in"], p[name + ".w"].value)
        p[name + ".w"].accumulate(gw)
        p[name + ".b"].accumulate(gb)
        return gx

    def conv_back(name, g_act, need_input=True):
        pl = P[name]
        g = L.relu_backward(g_act, c[name])
        if not need_input:
            cols, _, _ = L.im2col(c[name + ".in"], pl.kernel[0], pl.stride, pl.pad)
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, g.shape[1])
            p[name + ".w"].accumulate((g2.T @ cols).reshape(p[name + ".w"].shape))
            p[name + ".b"].accumulate(g2.sum(axis=0))
            return None
        gx, gw, gb = L.conv2d_backward(g, c[name + ".in"], p[name + ".w"].value, pl.stride, pl.pad)
        p[name + ".w"].accumulate(gw)
        p[name + ".b"].accumulate(gb)
        return gx

    def pool_back(name, g):
        inp = c[name + ".in"]
        return L.maxpool_backward(g.reshape(c[name + ".idx"].shape), c[name + ".idx"], inp.shape)

    g = fc_back("cls", g_logits)
    g = fc_back("fc2", L.relu_backward(g, c["fc2"]))
    d1 = P["fc1"].out_shape[0]
    g_h1, g_h3 = g[:, :d1], g[:, d1:]
    g = fc_back("fc1", L.relu_backward(g_h1, c["fc1"]))
    g = pool_back("pool3", g)
    g = conv_back("conv4", g)
    g_shared = conv_back("conv3", g)

    g_h3 = g_h3 if graph.config.segmentation_enabled else np.zeros_like(g_h3)
    # skipped entirely at lam == 0 so fc3/fc4 grads stay exactly zero
    if lam != 0:
        g_h3 = g_h3 + fc_back("fc4", lam * g_seg)
    if lam != 0 or graph.config.segmentation_enabled:
        g_shared = g_shared + fc_back("fc3", g_h3).reshape(g_shared.shape)

    g = pool_back("pool2", g_shared)
    g = conv_back("conv2", g)
    g = pool_back("pool1", g)
    conv_back("conv1", g, need_input=False)
    return l_t, l_ce, l_e


def one_hot(labels):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return as_tensor(labels)
    out = np.zeros((labels.shape[0], NUM_CLASSES))
    out[np.arange(labels.shape[0]), labels.astype(int)] = 1.0
    return out


def predict_warning_score(graph, image):
    """Softmax probability of the warning class for one (3, H, W) image."""
    return float(forward(graph, image).prediction_probs[0, 1])


def predict_scores(graph, images, batch_size=64):
    scores = []
    for i in range(0, len(images), batch_size):
        scores.append(forward(graph, images[i : i + batch_size]).prediction_probs[:, 1])
    return np.concatenate(scores) if scores else np.zeros(0)


@dataclass
class TrainingSet:
    """In-memory training pool: images (K,3,H,W), labels (K,), seg targets (K,H*W)."""

    images: np.ndarray
    labels: np.ndarray
    seg_targets: np.ndarray

    def __len__(self):
        return len(self.labels)


LOG_COLUMNS = ("iteration", "l_total", "l_ce", "l_euclid", "wall_ms")


def train(graph, dataset, optimizer, lam, rng, callbacks=(), checkpoint_dir=None, checkpoint_every=500):
    """Mini-batch SGD on ``L_c + lam * L_e``; one iteration is one update.

    Batches are drawn with replacement from ``dataset`` using ``rng``.
    Returns a list of log rows ``(iteration, l_total, l_ce, l_euclid, wall_ms)``.
    ``callbacks`` are called as ``cb(iteration, graph, row)`` after each step.
    """
    if optimizer.batch_size > len(dataset):
        raise ConfigError(f"batch_size {optimizer.batch_size} exceeds dataset size {len(dataset)}")
    log = []
    start = time.perf_counter()
    for it in range(1, optimizer.iterations + 1):
        idx = rng.integers(0, len(dataset), size=optimizer.batch_size)
        graph.zero_grad()
        out = forward(graph, dataset.images[idx])
        l_t, l_c, l_e = backward(graph, out, dataset.labels[idx], dataset.seg_targets[idx], lam)
        if not np.isfinite(l_t):
            raise TrainingError(f"non-finite loss {l_t} at iteration {it} (l_ce={l_c}, l_euclid={l_e})")
        sgd_step(graph.params, optimizer)
        row = (it, l_t, l_c, l_e, (time.perf_counter() - start) * 1000.0)
        log.append(row)
        if checkpoint_dir is not None and (it % checkpoint_every == 0 or it == optimizer.iterations):
            graph.save(f"{checkpoint_dir}/checkpoint_{it:06d}.bin")
        for cb in callbacks:
            cb(it, graph, row)
    return log


def smoothed(values, window=10):
    """Trailing moving average; entry i averages values[max(0, i-window+1) : i+1]."""
    values = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    i = np.arange(1, len(values) + 1)
    lo = np.maximum(0, i - window)
    return (csum[i] - csum[lo]) / (i - lo)
