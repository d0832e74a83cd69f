import numpy as np
import pytest

from pcwnet import model as M
from pcwnet.errors import ConfigError, ContractError, TrainingError
from pcwnet.optim import OptimizerConfig
from pcwnet.tensor import Parameter, Rng

from oracles import numeric_grad


def _graph(scale=16, lam=1e-3, seed=0):
    return M.build(M.ArchitectureConfig(scale, lam), Rng(seed).child("init"))


def _batch(cfg, n=2, seed=1):
    r = np.random.default_rng(seed)
    x = r.random((n, 3, cfg.height, cfg.width))
    y = np.arange(n) % 2
    s = r.integers(0, 6, size=(n, cfg.height * cfg.width)) / 5
    return x, y, s


def test_full_scale_plan_widths():
    plans = M.plan(M.ArchitectureConfig(1))
    assert plans["fc3"].out_shape == (2048,)
    assert plans["fc4"].out_shape == (131072,)
    assert plans["conv1"].out_shape == (96, 64, 128)
    assert plans["pool2"].out_shape == (256, 15, 31)


@pytest.mark.parametrize("scale", [1, 2, 4, 8, 16])
def test_segmentation_length_is_image_area(scale):
    cfg = M.ArchitectureConfig(scale)
    assert M.plan(cfg)["fc4"].out_shape == (cfg.width * cfg.height,)


def test_segmentation_output_shape():
    g = _graph(8)
    x, _, _ = _batch(g.config, 3)
    out = M.forward(g, x)
    assert out.segmentation_vec.shape == (3, 64 * 32)
    assert out.prediction_probs.shape == (3, 2)
    np.testing.assert_allclose(out.prediction_probs.sum(axis=1), 1.0)


def test_invalid_scale():
    with pytest.raises(ConfigError):
        M.ArchitectureConfig(3)
    with pytest.raises(ConfigError):
        M.ArchitectureConfig(1, lam=-1.0)


def test_wrong_input_shape():
    g = _graph(16)
    with pytest.raises(ContractError):
        M.forward(g, np.zeros((1, 3, 8, 8)))


def test_full_graph_gradient_check():
    g = _graph(16, lam=0.5)
    x, y, s = _batch(g.config, 2)

    def loss():
        out = M.forward(g, x)
        g.zero_grad()
        return M.backward(g, out, y, s, 0.5)[0]

    g.zero_grad()
    M.backward(g, M.forward(g, x), y, s, 0.5)
    analytic = {p.name: p.grad.copy() for p in g.params}
    r = np.random.default_rng(0)
    worst = 0.0
    for p in g.params:
        idx = r.choice(p.value.size, size=min(6, p.value.size), replace=False)
        num = numeric_grad(loss, p.value, eps=1e-5, idx=idx)
        ana = analytic[p.name].reshape(-1)[idx]
        scale = np.maximum(np.abs(num) + np.abs(ana), 1e-7)
        worst = max(worst, float(np.max(np.abs(num - ana) / scale)))
    assert worst < 1e-3


def test_lambda_zero_leaves_segmentation_untouched():
    g = _graph(16, lam=0.0)
    x, y, s = _batch(g.config, 2)
    g.zero_grad()
    M.backward(g, M.forward(g, x), y, s, 0.0)
    for name in ("fc3.w", "fc3.b", "fc4.w", "fc4.b"):
        assert not g[name].grad.any()
    assert g["conv1.w"].grad.any()


def test_lambda_zero_equals_prediction_only():
    # with the segmentation slot fed zeros, fc3/fc4 weights cannot affect the output
    g = _graph(16, lam=0.0)
    x, _, _ = _batch(g.config, 2)
    before = M.forward(g, x).prediction_probs
    g["fc3.w"].value[...] = np.random.default_rng(3).normal(size=g["fc3.w"].shape)
    after = M.forward(g, x).prediction_probs
    np.testing.assert_array_equal(before, after)


def test_shared_gradient_additivity():
    g = _graph(16, lam=1e-3)
    x, y, s = _batch(g.config, 2)
    out = M.forward(g, x)

    def grads(lam):
        g.zero_grad()
        M.backward(g, out, y, s, lam)
        return {p.name: p.grad.copy() for p in g.params}

    lam = 1e-3
    both, ce_only, unit = grads(lam), grads(0.0), grads(1.0)
    for name in ("conv1.w", "conv1.b", "conv2.w", "conv2.b"):
        seg_only = unit[name] - ce_only[name]
        np.testing.assert_allclose(both[name], ce_only[name] + lam * seg_only, rtol=0, atol=1e-9)


def _permute_units(g, layer, nxt, perm, offset=0):
    g[layer + ".w"].value[...] = g[layer + ".w"].value[perm]
    g[layer + ".b"].value[...] = g[layer + ".b"].value[perm]
    for name in nxt:
        w = g[name + ".w"].value
        cols = w[:, offset:offset + len(perm)]
        w[:, offset:offset + len(perm)] = cols[:, perm]


def test_concatenation_wiring_under_permutation():
    g = _graph(16, lam=1e-3)
    x, _, _ = _batch(g.config, 2)
    ref = M.forward(g, x)
    d1 = g.plans["fc1"].out_shape[0]
    d3 = g.plans["fc3"].out_shape[0]
    r = np.random.default_rng(9)
    _permute_units(g, "fc1", ["fc2"], r.permutation(d1), offset=0)
    p3 = r.permutation(d3)
    _permute_units(g, "fc3", ["fc4"], p3)
    w2 = g["fc2.w"].value
    w2[:, d1:] = w2[:, d1:][:, p3]
    out = M.forward(g, x)
    np.testing.assert_allclose(out.prediction_probs, ref.prediction_probs, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.segmentation_vec, ref.segmentation_vec, rtol=0, atol=1e-12)


def test_lambda_zero_training_ignores_segmentation_branch():
    cfg = M.ArchitectureConfig(16, 0.0)
    data = _tiny_set(cfg, 16)
    opt = OptimizerConfig(0.02, 1e-4, 4, 15)
    a = M.build(cfg, Rng(2))
    b = M.build(cfg, Rng(2))
    b["fc3.w"].value[...] *= -3.0
    b["fc4.w"].value[...] = 1.0
    la = M.train(a, data, opt, 0.0, Rng(4))
    lb = M.train(b, data, opt, 0.0, Rng(4))
    assert [r[2] for r in la] == [r[2] for r in lb]
    for name in ("conv1", "conv2", "conv3", "conv4", "fc1", "fc2", "cls"):
        for kind in ("w", "b"):
            assert np.array_equal(a[f"{name}.{kind}"].value, b[f"{name}.{kind}"].value)


def test_lr_zero_keeps_parameters():
    cfg = M.ArchitectureConfig(16)
    g = M.build(cfg, Rng(0))
    before = [p.value.copy() for p in g.params]
    M.train(g, _tiny_set(cfg, 8), OptimizerConfig(0.0, 1e-4, 4, 5), 1e-3, Rng(0))
    for p, v in zip(g.params, before):
        assert np.array_equal(p.value, v)


def test_same_seed_same_checkpoint_bytes():
    from pcwnet.tensor import encode_checkpoint
    assert encode_checkpoint(_graph(16, seed=3).params) == encode_checkpoint(_graph(16, seed=3).params)


def test_scores_are_probabilities():
    g = _graph(16)
    x, _, _ = _batch(g.config, 5)
    out = M.forward(g, x)
    assert np.all(np.abs(out.prediction_probs.sum(axis=1) - 1) < 1e-9)
    scores = M.predict_scores(g, x)
    assert np.all((scores >= 0) & (scores <= 1))
    assert M.plan(M.ArchitectureConfig(1))["cls"].out_shape == (2,)


def test_duplicated_sample_gives_same_gradient():
    g = _graph(16)
    x, y, s = _batch(g.config, 1)
    g.zero_grad()
    lone = M.backward(g, M.forward(g, x), y, s, 1e-3)
    single = {p.name: p.grad.copy() for p in g.params}
    g.zero_grad()
    pair = M.backward(g, M.forward(g, np.concatenate([x, x])), np.concatenate([y, y]),
                      np.concatenate([s, s]), 1e-3)
    np.testing.assert_allclose(pair, lone, rtol=1e-12)
    for p in g.params:
        np.testing.assert_allclose(p.grad, single[p.name], rtol=1e-10, atol=1e-15)


def test_zero_weights_give_even_odds():
    g = _graph(16)
    for p in g.params:
        p.value[...] = 0.0
    x, _, _ = _batch(g.config, 1)
    assert M.predict_warning_score(g, x[0]) == 0.5


def test_build_is_seeded_per_parameter():
    a, b = _graph(16, seed=5), _graph(16, seed=5)
    for p, q in zip(a.params, b.params):
        assert np.array_equal(p.value, q.value)
    c = _graph(16, seed=6)
    assert not np.array_equal(a["conv1.w"].value, c["conv1.w"].value)
    # both lambda settings start from the same weights
    z = M.build(M.ArchitectureConfig(16, 0.0), Rng(5).child("init"))
    for p, q in zip(a.params, z.params):
        assert np.array_equal(p.value, q.value)


def test_biases_start_at_zero():
    g = _graph(16)
    for p in g.params:
        if p.name.endswith(".b"):
            assert not p.value.any()


def test_graph_rejects_wrong_parameters():
    g = _graph(16)
    params = list(g.params)
    params[0] = Parameter("conv1.w", np.zeros((1, 1, 1, 1)))
    with pytest.raises(ContractError):
        M.NetworkGraph(g.config, params)
    with pytest.raises(ContractError):
        M.NetworkGraph(g.config, g.params[::-1])


def _tiny_set(cfg, n=24, seed=0):
    x, _, s = _batch(cfg, n, seed)
    y = np.arange(n) % 2
    x[y == 1, 0] += 0.5  # an easy cue: warnings are redder
    return M.TrainingSet(np.clip(x, 0, 1), y, s)


def test_training_reduces_loss_and_is_deterministic():
    cfg = M.ArchitectureConfig(16, 1e-3)
    data = _tiny_set(cfg)
    opt = OptimizerConfig(0.02, 1e-4, 8, 60)
    logs = []
    finals = []
    for _ in range(2):
        g = M.build(cfg, Rng(1).child("init"))
        logs.append(M.train(g, data, opt, 1e-3, Rng(1).child("batches")))
        finals.append([p.value.copy() for p in g.params])
    strip = [[row[:4] for row in log] for log in logs]
    assert strip[0] == strip[1]
    for a, b in zip(*finals):
        assert np.array_equal(a, b)
    sm = M.smoothed([r[1] for r in logs[0]])
    assert sm[-1] < sm[9]


def test_training_writes_checkpoints(tmp_path):
    cfg = M.ArchitectureConfig(16)
    data = _tiny_set(cfg, 8)
    g = M.build(cfg, Rng(0))
    seen = []
    M.train(g, data, OptimizerConfig(0.01, 0.0, 4, 5), 1e-3, Rng(0), callbacks=[lambda it, *_: seen.append(it)],
            checkpoint_dir=str(tmp_path), checkpoint_every=2)
    assert seen == [1, 2, 3, 4, 5]
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "checkpoint_000002.bin", "checkpoint_000004.bin", "checkpoint_000005.bin"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_detects_divergence():
    cfg = M.ArchitectureConfig(16)
    data = _tiny_set(cfg, 8)
    g = M.build(cfg, Rng(0))
    with pytest.raises(TrainingError, match="iteration"):
        M.train(g, data, OptimizerConfig(1e6, 0.0, 4, 50), 1.0, Rng(0))


def test_batch_larger_than_dataset():
    cfg = M.ArchitectureConfig(16)
    with pytest.raises(ConfigError):
        M.train(_graph(16), _tiny_set(cfg, 4), OptimizerConfig(0.01, 0.0, 8, 1), 1e-3, Rng(0))


def test_smoothed_trailing_mean():
    np.testing.assert_allclose(M.smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])
    np.testing.assert_allclose(M.smoothed(np.arange(20.0))[9], 4.5)
