import numpy as np
import pytest

from acuity import autodiff as ad
from acuity import models
from acuity.autodiff import functional as F
from acuity.autodiff.gradcheck import numeric_gradient, relative_error
from acuity.autodiff.nn import SqueezeExcitation


def tiny(family, fusion=(), seed=1, length=64):
    return models.build(models.ModelSpec(family, 0.25, "tiny", frozenset(fusion), seed=seed), length)


def full_model_gradient_error(model, x, ehr, labels, per_tensor=40, seed=0):
    """Relative error over the concatenated (subsampled) gradient of every parameter and the input."""
    rng = np.random.default_rng(seed)
    fn = lambda: F.bce_with_logits(model(x, ehr), labels)
    tensors = model.parameters() + [x]
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic, numeric = [], []
    for t in tensors:
        a = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        idx = None
        if t.data.size > per_tensor:
            idx = np.sort(rng.choice(t.data.size, per_tensor, replace=False))
        n = numeric_gradient(fn, t, 1e-5, idx)
        if idx is not None:
            a, n = a.reshape(-1)[idx], n.reshape(-1)[idx]
        analytic.append(a.ravel())
        numeric.append(n.ravel())
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def perturbed(model, seed=0, scale=0.05):
    # zero-initialised biases put ReLU inputs exactly on the kink; nudge everything off it
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = p.data + rng.normal(0.0, scale, p.shape)
    return model


@pytest.mark.parametrize("family", models.FAMILIES)
def test_full_model_gradcheck(family):
    model = perturbed(tiny(family, {"demographics"}))
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.uniform(0, 1, (2, 3, 64)), requires_grad=True)
    ehr = ad.Tensor(rng.uniform(0, 1, (2, 11)))
    assert full_model_gradient_error(model, x, ehr, np.array([0.0, 1.0])) < 1e-5


@pytest.mark.parametrize("family", models.FAMILIES)
@pytest.mark.parametrize("fusion", [(), ("demographics",), ("demographics", "clinical")])
def test_output_shape(family, fusion):
    model = tiny(family, fusion)
    width = model.spec.fusion_width
    out = model(np.random.default_rng(0).uniform(size=(4, 3, 64)), np.zeros((4, width)) if width else None)
    assert out.shape == (4, 1)


@pytest.mark.parametrize("family", models.FAMILIES)
def test_fusion_with_zero_head_weights_matches_accel_only(family):
    x = np.random.default_rng(0).uniform(size=(3, 3, 64))
    plain = tiny(family)
    fused = tiny(family, {"clinical"})
    fused.load_state_dict({k: v for k, v in plain.state_dict().items() if not k.startswith("head")}
                          | {"head.weight": np.zeros_like(fused.head.weight.data),
                             "head.bias": plain.head.bias.data.copy()})
    fused.head.weight.data[:-8] = plain.head.weight.data
    ehr = np.random.default_rng(1).uniform(size=(3, 8))
    np.testing.assert_allclose(fused(x, ehr).data, plain(x).data, atol=1e-12)


def test_mobilenet_smaller_than_vgg():
    for depth in ("tiny", "small"):
        spec = lambda f: models.ModelSpec(f, 0.25, depth)
        assert models.count_params(models.build(spec("mobilenet1d"), 900)) < \
            models.count_params(models.build(spec("vgg1d"), 900))


def test_se_gate_in_unit_interval():
    se = SqueezeExcitation(8, np.random.default_rng(0))
    gate = se.gate(ad.Tensor(np.random.default_rng(1).normal(size=(2, 8, 16)))).data
    assert gate.shape[:2] == (2, 8) and ((gate > 0) & (gate < 1)).all()


def test_incompatible_length():
    model = tiny("vgg1d")
    with pytest.raises(models.IncompatibleLength):
        model(np.zeros((1, 3, 65)))
    with pytest.raises(models.IncompatibleLength):
        models.build(models.ModelSpec("vgg1d", 0.25, "small"), 4)


def test_fusion_argument_errors():
    with pytest.raises(ValueError):
        tiny("resnet1d", {"clinical"})(np.zeros((1, 3, 64)))
    with pytest.raises(ValueError):
        tiny("resnet1d")(np.zeros((1, 3, 64)), np.zeros((1, 8)))
    with pytest.raises(ValueError):
        models.ModelSpec("lstm")


def test_forward_fused_and_determinism():
    a, b = tiny("senet1d", {"demographics"}, seed=5), tiny("senet1d", {"demographics"}, seed=5)
    w = np.random.default_rng(2).uniform(size=(3, 64))
    assert models.forward_fused(a, w, np.zeros(11)) == models.forward_fused(b, w, np.zeros(11))
    with pytest.raises(ValueError):
        models.forward_fused(a, w, np.zeros(8))


def test_spec_round_trip():
    spec = models.ModelSpec("transformer1d", 0.5, "small", frozenset({"clinical", "demographics"}), 3)
    assert models.ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.fusion_width == 19


def test_checkpoint_round_trip(tmp_path):
    model = tiny("mobilenet1d")
    ad.save_checkpoint(tmp_path / "m.ckpt", model.state_dict())
    other = tiny("mobilenet1d", seed=9)
    other.load_state_dict(ad.load_checkpoint(tmp_path / "m.ckpt"))
    x = np.random.default_rng(0).uniform(size=(1, 3, 64))
    np.testing.assert_array_equal(other(x).data, model(x).data)
