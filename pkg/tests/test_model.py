import numpy as np
import pytest

from stfan.autograd import ShapeError, Tensor, ops
from stfan.fac import FilterBank
from stfan.model import VARIANTS, ModelConfig, NonFiniteActivation, build_ablation_variant, build_model, generate_filters

TINY = dict(k=3, base_channels=2, num_stages=2)


def frames(n, h=16, w=16, seed=0):
    return np.random.default_rng(seed).random((n, h, w, 3)).astype(np.float32)


def test_same_seed_same_parameters():
    a, b = build_model(ModelConfig(**TINY)), build_model(ModelConfig(**TINY))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    c = build_model(ModelConfig(**{**TINY, "seed": 1}))
    assert any(pa.data.tobytes() != pc.data.tobytes() for pa, pc in zip(a.parameters(), c.parameters()))


def test_parameter_count_increases_with_k():
    counts = [build_model(ModelConfig(k=k, base_channels=4)).num_parameters() for k in (1, 3, 5, 7, 9)]
    assert all(a < b for a, b in zip(counts, counts[1:]))


@pytest.mark.parametrize(
    "kw", [{"k": 4}, {"k": 0}, {"num_stages": 0}, {"base_channels": 0}, {"variant": "mystery"}, {"dtype": "float16"}]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_toy_model_runs_64x64():
    model = build_model(ModelConfig(k=3, base_channels=8))
    B = frames(2, 64, 64)
    outs = list(model.run_clip(B))
    assert [o.R.shape for o in outs] == [(64, 64, 3)] * 2
    assert all(np.isfinite(o.R.data).all() for o in outs)


def test_bank_depth_is_c_k_squared():
    cfg = ModelConfig(k=5, base_channels=4)
    model = build_model(cfg)
    B = Tensor(frames(1, 32, 32)[0])
    F_align, F_deblur, T = generate_filters(model, B, B, B)
    c = cfg.fac_channels
    assert F_align.shape == F_deblur.shape == (4, 4, c * 25)
    assert T.shape == (4, 4, c)


def test_banks_are_deterministic_and_depend_on_current_frame():
    cfg = ModelConfig(**TINY)
    f = frames(3)
    a = build_model(cfg).generate_filters(*(Tensor(x) for x in f))[0].filters.data
    b = build_model(cfg).generate_filters(*(Tensor(x) for x in f))[0].filters.data
    assert a.tobytes() == b.tobytes()
    g = f.copy()
    g[2] += 0.1
    c = build_model(cfg).generate_filters(*(Tensor(x) for x in g))[0].filters.data
    assert np.abs(c - a).max() > 0


def test_extent_errors():
    model = build_model(ModelConfig(**TINY))
    with pytest.raises(ShapeError, match="divisible by 4"):
        model.init_state(np.zeros((10, 16, 3), dtype=np.float32))
    state = model.init_state(frames(1)[0])
    with pytest.raises(ShapeError):
        model.forward_step(frames(1, 32, 32)[0], state)
    B = Tensor(frames(1)[0])
    with pytest.raises(ShapeError):
        model.generate_filters(B, Tensor(frames(1, 8, 8)[0]), B)


def test_init_state():
    model = build_model(ModelConfig(**TINY))
    B0 = frames(1)[0]
    st = model.init_state(B0)
    assert st.H_prev.shape == (4, 4, model.config.fac_channels)
    assert not st.H_prev.data.any()
    assert st.R_prev.data.tobytes() == B0.tobytes() and st.B_prev.data.tobytes() == B0.tobytes()
    out = model.forward_step(B0, st)
    assert np.isfinite(out.R.data).all()


@pytest.mark.parametrize("residual", [False, True])
def test_zero_weights_give_output_bias(residual):
    model = build_model(ModelConfig(**TINY, residual=residual))
    for p in model.parameters():
        p.data[...] = 0
    bias = np.array([0.2, -0.3, 0.5], dtype=np.float32)
    dict(model.named_parameters())["reconstruct.layers.8.bias"].data[...] = bias
    B = frames(1)[0]
    R = model.forward_step(B, model.init_state(B)).R.data
    expected = np.broadcast_to(bias, B.shape) + (B if residual else 0)
    np.testing.assert_array_equal(R, expected.astype(np.float32))


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_runs(variant):
    model = build_ablation_variant(ModelConfig(**TINY), variant)
    outs = list(model.run_clip(frames(3)))
    assert len(outs) == 3 and all(o.R.shape == (16, 16, 3) for o in outs)


def test_unknown_variant():
    with pytest.raises(ValueError, match="unknown variant"):
        build_ablation_variant(ModelConfig(**TINY), "no-fac-at-all")


def test_variant_structure():
    cfg = ModelConfig(**TINY)
    c = cfg.fac_channels
    none = build_ablation_variant(cfg, "no-both-fac")
    assert none.encoder is None and none.g_align is None and none.g_deblur is None
    assert build_ablation_variant(cfg, "no-align-fac").g_deblur is not None
    assert build_ablation_variant(cfg, "no-deblur-fac").g_deblur is None
    assert build_model(cfg).c_fused == 2 * c
    assert build_ablation_variant(cfg, "drop-align-branch").c_fused == c
    assert build_ablation_variant(cfg, "drop-align-branch").h_conv is None
    assert build_ablation_variant(cfg, "drop-deblur-branch").features is None
    for v in ("pair-input-BB", "pair-input-RB"):
        assert build_ablation_variant(cfg, v).encoder.layers[0].weight.shape[2] == 6
    assert build_model(cfg).encoder.layers[0].weight.shape[2] == 9


def test_identity_banks_reduce_to_plain_concatenation():
    cfg = ModelConfig(**TINY, dtype="float64")
    full = build_model(cfg)
    plain = build_ablation_variant(cfg, "no-both-fac")
    shared = full.state_dict()
    plain.load_state_dict({n: shared[n] for n, _ in plain.named_parameters()})
    f = frames(3).astype(np.float64)
    c = cfg.fac_channels
    ident = FilterBank.identity(4, 4, c, cfg.k)
    sa, sb = full.init_state(f[0]), plain.init_state(f[0])
    for B in f:
        a = full.forward_step(B, sa, banks=(ident, ident))
        b = plain.forward_step(B, sb)
        assert a.R.data.tobytes() == b.R.data.tobytes()
        sa, sb = a.state, b.state


def test_every_parameter_receives_gradient():
    model = build_model(ModelConfig(**TINY, dtype="float64"))
    f = frames(3).astype(np.float64)
    state, loss = None, None
    for t, B in enumerate(f):
        state = state or model.init_state(B)
        out = model.forward_step(B, state)
        term = ops.mean(ops.mul(out.R, out.R))
        loss = term if loss is None else ops.add(loss, term)
        state = out.state
    loss.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not np.abs(p.grad).max() > 0]
    assert dead == []


def test_recurrence_is_deterministic():
    f = frames(4)
    a = [o.R.data for o in build_model(ModelConfig(**TINY)).run_clip(f)]
    b = [o.R.data for o in build_model(ModelConfig(**TINY)).run_clip(f)]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_state_carries_information():
    model = build_model(ModelConfig(**TINY))
    f = frames(2)
    g = f.copy()
    g[0] = 1 - g[0]
    a = list(model.run_clip(f))[1].R.data
    b = list(model.run_clip(g))[1].R.data
    assert np.abs(a - b).max() > 0


def test_non_finite_activation_names_layer():
    model = build_model(ModelConfig(**TINY))
    dict(model.named_parameters())["encoder.layers.0.bias"].data[0] = np.inf
    B = frames(1)[0]
    with pytest.raises(NonFiniteActivation, match="encoder"):
        model.forward_step(B, model.init_state(B))


def test_capture_diagnostics():
    model = build_model(ModelConfig(**TINY))
    B = frames(1)[0]
    out = model.forward_step(B, model.init_state(B), capture=True)
    assert {"T", "E", "C", "F_align", "F_deblur", "aligned", "deblurred"} <= set(out.diagnostics)
    assert out.diagnostics["C"].shape == (4, 4, 2 * model.config.fac_channels)


def test_state_dict_round_trip_and_mismatch():
    a = build_model(ModelConfig(**TINY))
    b = build_model(ModelConfig(**{**TINY, "seed": 5}))
    b.load_state_dict(a.state_dict())
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))
    with pytest.raises(KeyError):
        b.load_state_dict({})
