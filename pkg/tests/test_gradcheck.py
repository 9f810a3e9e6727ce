from __future__ import annotations

import numpy as np
import pytest

from ebert import layers as nn
from ebert.gradcheck import check_gradients, model_gradcheck, objective_fixture, rel_error, sample_coordinates
from ebert.model import ModelConfig, param_shapes


def test_rel_error_definition():
    assert rel_error(1.0, 1.0) == 0.0
    assert rel_error(2.0, 1.0) == 0.5
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(0.0, 1e-9) == pytest.approx(1e-2)  # floor of 1e-7


def test_detects_a_wrong_gradient():
    params = {"w": np.array([1.0, 2.0, 3.0])}

    def loss(P, want_grad):
        w = P["w"]
        val = float((w**3).sum())
        return val, ({"w": 3 * w**2 * np.array([1, 1, 1.01])} if want_grad else None)

    rep = check_gradients(loss, params, [("w", i) for i in range(3)])
    assert rep.max_rel_error > 1e-3 and rep.worst[1] == 2


def test_refuses_single_precision():
    with pytest.raises(TypeError):
        check_gradients(lambda P, g: (0.0, {}), {"w": np.zeros(2, np.float32)}, [])


def test_coordinates_cover_every_tensor():
    shapes = param_shapes(ModelConfig.tiny())
    params = {k: np.zeros(s) for k, s in shapes.items()}
    coords = sample_coordinates(params, 200, np.random.default_rng(0), rows={"emb.dna": np.array([5, 9])})
    assert len(coords) >= 200
    assert {c[0] for c in coords} == set(shapes)
    rows = {np.unravel_index(i, shapes["emb.dna"])[0] for n, i in coords if n == "emb.dna"}
    assert rows <= {5, 9}


@pytest.mark.parametrize("name", ["layer_norm", "gelu", "conv1d", "attention"])
def test_layer_backward(name):
    """Each kernel against central differences on a small random input."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 4))
    dy = rng.normal(size=(2, 5, 4) if name != "conv1d" else (2, 5, 3))
    if name == "layer_norm":
        P = {"x": x, "g": rng.normal(1, 0.1, 4), "b": rng.normal(0, 0.1, 4)}

        def f(P, want):
            y, c = nn.layer_norm_forward(P["x"], P["g"], P["b"])
            if not want:
                return float((y * dy).sum()), None
            dx, dg, db = nn.layer_norm_backward(dy, c)
            return 0.0, {"x": dx, "g": dg, "b": db}
    elif name == "gelu":
        P = {"x": x}

        def f(P, want):
            y, c = nn.gelu_forward(P["x"])
            return float((y * dy).sum()), ({"x": nn.gelu_backward(dy, c)} if want else None)
    elif name == "conv1d":
        P = {"x": x, "w": rng.normal(size=(3, 4, 3)), "b": rng.normal(size=3)}

        def f(P, want):
            y, c = nn.conv1d_forward(P["x"], P["w"], P["b"])
            if not want:
                return float((y * dy).sum()), None
            dx, dw, db = nn.conv1d_backward(dy, c, P["w"])
            return 0.0, {"x": dx, "w": dw, "b": db}
    else:
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
        bias = nn.key_mask_bias(mask, np.float64)
        P = {"x": x, **{f"{m}.{t}": rng.normal(0, 0.5, (4, 4) if t == "weight" else 4) for m in "qkvo" for t in ("weight", "bias")}}

        def f(P, want):
            p = {m: (P[f"{m}.weight"], P[f"{m}.bias"]) for m in "qkvo"}
            y, c = nn.attention_forward(P["x"], p, 2, bias, 0.0, None)
            if not want:
                return float((y * dy).sum()), None
            dx, g = nn.attention_backward(dy, c, p)
            return 0.0, {"x": dx, **g}

    # a key bias shifts every score in a softmax row equally: its gradient is
    # exactly zero, so it is checked in absolute terms
    zero = {"k.bias"}
    coords = [(k, i) for k, v in P.items() if k not in zero for i in range(v.size)]
    rep = check_gradients(f, P, coords, eps=1e-5)
    assert rep.max_rel_error < 1e-6, rep.worst
    if name == "attention":
        assert np.abs(f(P, True)[1]["k.bias"]).max() < 1e-12


@pytest.mark.parametrize("path", ["mlm", "tf", "tf_aux"])
def test_model_gradients(path):
    rep = model_gradcheck(path, seed=0)
    assert rep.n_checked >= 200
    assert rep.uncovered == []
    assert rep.max_rel_error < 1e-4, rep.worst


def test_residual_discrepancy_is_truncation_error():
    """Where eps=1e-3 differences disagree most, the gap shrinks as eps^2."""
    rep = model_gradcheck("mlm", seed=6, max_rounds=1)
    assert rep.max_rel_error > 1e-4  # the worst seed of the sweep
    fx = objective_fixture("mlm", seed=6)
    name, idx, _, _ = rep.worst
    gaps = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        r = check_gradients(fx.loss_fn, fx.params, [(name, idx)], eps)
        gaps.append(abs(r.worst[2] - r.worst[3]))
    for a, b in zip(gaps, gaps[1:]):
        assert 3.0 < a / b < 5.0
