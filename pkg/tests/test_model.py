import numpy as np
import pytest

from visa import tensor as T
from visa.gradcheck import check_gradients
from visa.index_branch import ConfigError, VimbConfig
from visa.indices import apply_standardization, compute_indices, fit_standardization
from visa.model import AblationSpec, ModelConfig, Predictor, VisaModel, fuse_and_classify, prepare_inputs
from visa.radiance_branch import CBAMGate, RadianceBranch, ResidualAttentionUnit, SEGate, SrabConfig
from visa.tensor import DimensionError, Tensor


@pytest.fixture(autouse=True)
def float64():
    with T.default_dtype(np.float64):
        yield


def tiny_model(**kw):
    cfg = ModelConfig(
        vimb=VimbConfig(d=8, window=4, heads=2, n_encoder_layers=1, ssm_layers=1, slots=2, slot_iters=1, ffn_mult=2),
        srab=SrabConfig(widths=(4, 8, 16), units_per_level=1, cbam_kernel=3),
        seed=3,
    )
    if kw:
        cfg = AblationSpec(**kw).apply(cfg)
    return VisaModel(cfg).astype(np.float64)


# --- radiance branch --------------------------------------------------------


def test_se_gate_is_per_channel_and_bounded():
    rng = np.random.default_rng(0)
    se = SEGate(8, 4, rng).astype(np.float64)
    u = Tensor(rng.normal(size=(2, 8, 5, 5)))
    a = se.gate(u).data
    assert a.shape == (2, 8) and np.all((a > 0) & (a < 1))
    out = se(u).data
    np.testing.assert_allclose(out, u.data * a[:, :, None, None], atol=1e-14)


def test_se_gate_half_when_output_layer_zero():
    se = SEGate(6, 2, np.random.default_rng(1)).astype(np.float64)
    se.fc2.weight.data[:] = 0.0
    u = Tensor(np.random.default_rng(2).normal(size=(1, 6, 3, 3)))
    np.testing.assert_array_equal(se.gate(u).data, 0.5)


def test_cbam_mask_is_one_channel():
    rng = np.random.default_rng(3)
    cbam = CBAMGate(3, rng).astype(np.float64)
    u = Tensor(rng.normal(size=(2, 4, 6, 6)))
    m = cbam.mask(u).data
    assert m.shape == (2, 1, 6, 6) and np.all((m > 0) & (m < 1))
    np.testing.assert_allclose(cbam(u).data, u.data * m, atol=1e-14)


def test_residual_unit_preserves_shape():
    rng = np.random.default_rng(4)
    unit = ResidualAttentionUnit(6, SrabConfig(widths=(6, 12, 24), cbam_kernel=3), rng).astype(np.float64)
    assert unit(Tensor(rng.normal(size=(1, 6, 7, 5)))).shape == (1, 6, 7, 5)


def test_radiance_branch_shapes_and_skips():
    rng = np.random.default_rng(5)
    branch = RadianceBranch(SrabConfig(widths=(4, 8, 16), units_per_level=1, cbam_kernel=3), rng).astype(np.float64)
    x = Tensor(rng.normal(size=(2, 5, 8, 12)))
    f0, f1, f2 = branch.encode(x)
    assert f0.shape == (2, 4, 8, 12) and f1.shape == (2, 8, 4, 6) and f2.shape == (2, 16, 2, 3)
    out = branch(x)
    assert out.shape == (2, 4, 8, 12)
    assert not np.allclose(branch(x, zero_skips=(0,)).data, out.data)


def test_radiance_branch_rejects_bad_input():
    branch = RadianceBranch(SrabConfig(widths=(4, 8, 16), units_per_level=1, cbam_kernel=3), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        branch(Tensor(np.zeros((1, 5, 6, 8))))
    with pytest.raises(DimensionError):
        branch(Tensor(np.zeros((1, 4, 8, 8))))


@pytest.mark.parametrize(
    "cfg", [SrabConfig(widths=(8, 8, 16)), SrabConfig(cbam_kernel=4), SrabConfig(units_per_level=0), SrabConfig(widths=(4, 8))]
)
def test_srab_config_validation(cfg):
    with pytest.raises(ConfigError):
        cfg.validate()


def test_radiance_branch_gradients():
    rng = np.random.default_rng(6)
    branch = RadianceBranch(SrabConfig(widths=(2, 4, 6), units_per_level=1, se_reduction=2, cbam_kernel=3), rng)
    branch = branch.astype(np.float64)
    x = Tensor(rng.normal(size=(1, 5, 4, 4)), requires_grad=True)
    params = [("x", x)] + list(branch.named_parameters())
    report = check_gradients(lambda: T.tsum(T.tanh(branch(x))), params, 1e-5, 3, np.random.default_rng(0), 1e-5)
    assert report.worst < 1e-4


# --- fusion model -----------------------------------------------------------


def test_posteriors_are_distributions():
    model = tiny_model()
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(2, 5, 8, 8)))
    out = model(x, Tensor(rng.normal(size=(2, 5, 8, 8))))
    assert out["logits"].shape == (2, 3, 8, 8) and out["aux_logits"].shape == (2, 3, 8, 8)
    np.testing.assert_allclose(out["posteriors"].data.sum(1), 1.0, atol=1e-12)


def test_fusion_rejects_mismatched_features():
    model = tiny_model()
    with pytest.raises(DimensionError):
        fuse_and_classify(model.head, Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 4, 4, 8))))
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((1, 5, 8, 8))), Tensor(np.zeros((1, 5, 8, 4))))
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((1, 5, 8, 8))))


def test_fusion_temperature():
    model = tiny_model()
    rng = np.random.default_rng(8)
    f = Tensor(rng.normal(size=(1, 4, 4, 4)))
    g = Tensor(rng.normal(size=(1, 4, 4, 4)))
    logits, p1 = fuse_and_classify(model.head, f, g, tau=1.0)
    _, p2 = fuse_and_classify(model.head, f, g, tau=2.0)
    want = np.exp(logits.data / 2.0)
    np.testing.assert_allclose(p2.data, want / want.sum(1, keepdims=True), atol=1e-12)
    assert np.all(p2.data.max(1) <= p1.data.max(1) + 1e-12)


def test_drop_vimb_has_no_index_branch():
    full, rad = tiny_model(), tiny_model(drop_vimb=True)
    assert not hasattr(rad, "index")
    assert rad.num_parameters() < full.num_parameters()
    out = rad(Tensor(np.zeros((1, 5, 8, 8))))
    assert "aux_logits" not in out


def test_same_seed_same_weights():
    a, b = tiny_model(), tiny_model()
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


@pytest.mark.parametrize(
    "text, field, value",
    [
        ("drop_vimb", "drop_vimb", True),
        ("heads=1", "heads", 1),
        ("ssm_layers=0", "ssm_layers", 0),
        ("drop_slots, drop_rel_bias=false", "drop_rel_bias", False),
        ("full", "drop_vimb", False),
    ],
)
def test_ablation_parse(text, field, value):
    assert getattr(AblationSpec.parse(text), field) == value


def test_ablation_apply_and_unknown_toggle():
    cfg = AblationSpec.parse("drop_broadcast,single_scale_decoder").apply(ModelConfig())
    assert not cfg.vimb.use_broadcast and not cfg.vimb.use_refinement and cfg.vimb.use_slots
    assert ModelConfig().vimb.use_broadcast
    with pytest.raises(ConfigError, match="unknown"):
        AblationSpec.parse("drop_everything")


def test_prepare_inputs_matches_standardization():
    rng = np.random.default_rng(9)
    refl = rng.uniform(0.01, 0.6, size=(2, 5, 4, 4))
    stats = fit_standardization(list(refl), source="train")
    _, idx = prepare_inputs(refl, stats)
    for n in range(2):
        want = apply_standardization(compute_indices(refl[n]), stats).channels
        np.testing.assert_allclose(idx[n], want, rtol=1e-5, atol=1e-6)


def test_predictor_batch_size_invariant():
    model = tiny_model()
    rng = np.random.default_rng(10)
    refl = rng.uniform(0.01, 0.6, size=(3, 5, 8, 8))
    stats = fit_standardization(list(refl), source="train")
    a = Predictor(model, stats, batch_size=1)(refl)
    b = Predictor(model, stats, batch_size=3)(refl)
    assert a.shape == (3, 3, 8, 8)
    np.testing.assert_allclose(a, b, atol=1e-10)
