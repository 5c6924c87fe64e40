import math

import numpy as np
import pytest
from pydantic import ValidationError

from mcan.exceptions import ConfigError, ShapeError
from mcan.models.executor import Trace
from mcan.models.network import (
    build,
    eff_forward,
    feature_extract,
    forward,
    mcab_forward,
    mcac_forward,
    mim_forward,
    preset,
    rcab_forward,
    reconstruct,
    zero_weights,
)
from mcan.schemas import ModelConfig
from mcan.services.analysis import count_sigmoids
from mcan.tensor import (
    ConvSpec,
    Tensor,
    add,
    bilinear_resize,
    conv2d,
    global_avg_pool,
    relu,
    scale_channels,
    sigmoid,
)


def tiny_config(**overrides) -> ModelConfig:
    values = dict(
        name="tiny", scale=2, D=2, K=2, M=2,
        n_fe=(8, 4), n_mim=4, n_eff=(8, 4), n_l=8, r=2,
    )
    values.update(overrides)
    if "n_eff" not in overrides:
        values["n_eff"] = (values["D"] * values["n_mim"], values["n_eff"][1])
    return ModelConfig(**values)


@pytest.fixture
def tiny():
    """Small two-cell model with all three tails"""
    return build(tiny_config(), seed=7)


@pytest.fixture
def x():
    """Random 3-channel 8x8 input"""
    return Tensor(np.random.default_rng(3).uniform(0, 1, (1, 3, 8, 8)))


def apply_conv(model, name, t):
    node = model.node(name)
    return conv2d(t, node.conv, model.weights[node.weight_name], model.weights[node.bias_name])


def test_preset_rows():
    """Test the published hyperparameter rows"""
    mcan = preset("MCAN", 4)
    assert (mcan.n_fe, mcan.n_mim, mcan.n_eff, mcan.n_l, mcan.r) == ((64, 32), 32, (96, 32), 256, 8)
    tiny_t = preset("MCAN-T", 2)
    assert (tiny_t.n_mim, tiny_t.r, tiny_t.rcab_groups, tiny_t.scale) == (8, 4, 4, 2)
    fast = preset("MCAN-FAST", 3)
    assert fast.sigmoid_variant == "fast"
    assert (fast.n_fe, fast.n_mim, fast.n_eff, fast.n_l) == (mcan.n_fe, mcan.n_mim, mcan.n_eff, mcan.n_l)
    assert preset("mcan-s").n_eff == (48, 16)


def test_preset_unknown_name():
    """Test that an unknown preset is rejected"""
    with pytest.raises(ConfigError, match="unknown model"):
        preset("MCAN-XL", 4)


def test_config_invariants():
    """Test that inconsistent widths are rejected"""
    with pytest.raises(ValidationError):
        tiny_config(r=3)
    with pytest.raises(ValidationError):
        tiny_config(n_eff=(12, 4))
    with pytest.raises(ValidationError):
        tiny_config(D=0)
    with pytest.raises(ConfigError):
        preset("MCAN", 4, rcab_groups=5)


def test_build_is_deterministic():
    """Test that identical (config, seed) give bitwise-identical weights"""
    a = build(tiny_config(), seed=11)
    b = build(tiny_config(), seed=11)
    c = build(tiny_config(), seed=12)
    assert a.weights.equals(b.weights)
    assert not a.weights.equals(c.weights)


def test_initialization_bounds(tiny):
    """Test that every weight lies in U(-k, k) with k = 1/sqrt(fan-in)"""
    for node in tiny.conv_nodes():
        bound = 1 / math.sqrt(node.conv.in_channels // node.conv.groups)
        assert np.max(np.abs(tiny.weights[node.weight_name].data)) <= bound
        assert np.max(np.abs(tiny.weights[node.bias_name].data)) <= bound


def test_hierarchical_weight_names():
    """Test that weights are named after their place in the matrix"""
    model = build(preset("MCAN", 4), seed=0)
    assert "mim.d2.k1.m0.fuse.weight" in model.weights
    assert "mim.d0.k0.m2.rcab.conv1.weight" in model.weights
    assert "tail.x4.up1.weight" in model.weights
    assert len(set(model.weights)) == len(model.weights)


def test_graph_counts_for_mcan():
    """Test RCAB, fusion-conv and gate counts of the full model"""
    model = build(preset("MCAN", 4), seed=0)
    cfg = model.config
    assert model.count("sigmoid") == cfg.D * cfg.K * cfg.M == 27
    fusions = [node for node in model.conv_nodes() if node.name.endswith(".fuse") and node.name.startswith("mim.")]
    assert len(fusions) == cfg.D * cfg.K * (cfg.M + 1) == 36


def test_fusion_input_widths():
    """Test fusion-conv fan-in against the concatenation arities"""
    model = build(preset("MCAN", 4), seed=0)
    widths = {
        "mim.d0.k0.m0.fuse": 32,
        "mim.d0.k0.m1.fuse": 64,
        "mim.d0.k0.m3.fuse": 128,
        "mim.d1.k1.m0.fuse": 96,
        "mim.d1.k1.m1.fuse": 96,
        "mim.d1.k1.m2.fuse": 128,
        "mim.d1.k1.m3.fuse": 128,
        "eff.fuse": 96,
    }
    for name, width in widths.items():
        assert model.node(name).conv.in_channels == width, name
    assert model.node("eff.reduce").conv.out_channels == 32


def test_feature_extract_matches_composition(tiny, x):
    """Test F_0 = conv(relu(conv(x)))"""
    f0 = feature_extract(tiny, x)
    assert f0.shape == (1, 4, 8, 8)
    expected = apply_conv(tiny, "fe.conv1", relu(apply_conv(tiny, "fe.conv0", x)))
    np.testing.assert_allclose(f0.data, expected.data, rtol=1e-6, atol=1e-6)


def test_feature_extract_rejects_channels(tiny):
    """Test that non-RGB input is rejected"""
    with pytest.raises(ShapeError):
        feature_extract(tiny, Tensor.zeros((1, 1, 8, 8)))


def test_feature_extract_zero(tiny):
    """Test zero input with zero weights gives zero features"""
    assert np.all(feature_extract(zero_weights(tiny), Tensor.zeros((1, 3, 8, 8))).data == 0)


def test_rcab_zero_weights_is_identity(tiny):
    """Test that a zeroed RCAB passes its input through exactly"""
    block = zero_weights(tiny).rcab(0, 0, 0)
    inp = Tensor(np.random.default_rng(0).normal(size=(1, 4, 6, 6)))
    assert rcab_forward(block, inp).equals(inp)


def test_rcab_matches_primitive_oracle(tiny):
    """Test RCAB against a step-by-step primitive composition"""
    inp = Tensor(np.random.default_rng(5).normal(size=(1, 4, 4, 4)))
    prefix = "mim.d0.k1.m1.rcab"
    body = apply_conv(tiny, f"{prefix}.conv2", relu(apply_conv(tiny, f"{prefix}.conv1", inp)))
    z = relu(apply_conv(tiny, f"{prefix}.down", global_avg_pool(body)))
    scores = sigmoid(apply_conv(tiny, f"{prefix}.up", z))
    expected = add(scale_channels(body, scores), inp)
    out = rcab_forward(tiny.rcab(0, 1, 1), inp)
    np.testing.assert_allclose(out.data, expected.data, rtol=1e-5, atol=1e-5)


def test_rcab_with_unit_scores():
    """Test that forcing the attention gate to one leaves X + I"""
    model = build(tiny_config(D=1, K=1, M=1), seed=2)
    prefix = "mim.d0.k0.m0.rcab"
    # zero up-conv weights and a huge bias saturate the sigmoid at 1.0 in float32
    model.weights.replace(f"{prefix}.up.weight", np.zeros(model.weights[f"{prefix}.up.weight"].shape))
    model.weights.replace(f"{prefix}.up.bias", np.full(4, 100.0))
    inp = Tensor(np.random.default_rng(1).normal(size=(1, 4, 5, 5)))
    body = apply_conv(model, f"{prefix}.conv2", relu(apply_conv(model, f"{prefix}.conv1", inp)))
    out = rcab_forward(model.rcab(0, 0, 0), inp)
    np.testing.assert_allclose(out.data, add(body, inp).data, rtol=1e-6, atol=1e-6)


def test_rcab_rejects_channels(tiny):
    """Test that an RCAB input must have n_mim channels"""
    with pytest.raises(ShapeError):
        rcab_forward(tiny.rcab(0, 0, 0), Tensor.zeros((1, 5, 4, 4)))


def test_degenerate_mcab():
    """Test that M=1 gives two fusion convs around one RCAB"""
    model = build(tiny_config(D=1, K=1, M=1), seed=0)
    block = model.mcab(0, 0)
    fusions = [node for node in block.block.nodes if node.op == "conv" and node.name.endswith(".fuse")]
    assert len(fusions) == 2
    assert block.count("sigmoid") == 1
    assert block.inputs == ("fe.conv1",)


def test_mcab_inputs_and_arity(tiny, x):
    """Test the first MCAB reads F_0 alone and later ones take the previous fusion outputs"""
    f0 = feature_extract(tiny, x)
    first = mcab_forward(tiny.mcab(0, 0), [f0])
    assert len(first) == tiny.config.M + 1
    second = mcab_forward(tiny.mcab(0, 1), [f0, *first])
    assert all(t.shape == (1, 4, 8, 8) for t in second)
    with pytest.raises(ShapeError):
        mcab_forward(tiny.mcab(0, 1), [f0])


def test_mcac_arity(tiny, x):
    """Test K outputs for K inputs and rejection of other arities"""
    f0 = feature_extract(tiny, x)
    heads = mcac_forward(tiny, 0, [f0, f0])
    assert len(heads) == tiny.config.K
    with pytest.raises(ShapeError):
        mcac_forward(tiny, 0, [f0])


def test_single_head_cell_is_a_chain(x):
    """Test that K=1 reduces a cell to a single MCAB"""
    model = build(tiny_config(K=1), seed=1)
    f0 = feature_extract(model, x)
    (head,) = mcac_forward(model, 0, [f0])
    chain = mcab_forward(model.mcab(0, 0), [f0])
    assert head.equals(chain[-1])


def test_mim_edges_for_mcan(x):
    """Test three 32-channel edge features for the full model"""
    model = build(preset("MCAN", 2), seed=0)
    edges = mim_forward(model, feature_extract(model, x))
    assert len(edges) == 3
    assert all(t.shape == (1, 32, 8, 8) for t in edges)


def test_eff_bypass_returns_last_edge(x):
    """Test that disabling EFF hands the last edge feature through"""
    model = build(tiny_config(eff_enabled=False), seed=0)
    edges = mim_forward(model, feature_extract(model, x))
    assert eff_forward(model, edges).equals(edges[-1])
    assert not any(name.startswith("eff.") for name in model.weights)


def test_eff_zero(tiny):
    """Test that zero edges with zero weights fuse to zero"""
    zero = zero_weights(tiny)
    edges = tuple(Tensor.zeros((1, 4, 6, 6)) for _ in range(tiny.config.D))
    out = eff_forward(zero, edges)
    assert out.shape == (1, 4, 6, 6)
    assert np.all(out.data == 0)
    with pytest.raises(ShapeError):
        eff_forward(zero, edges[:1])


def test_reconstruct_zero_tail_is_bilinear(tiny, x):
    """Test that with a zeroed tail the output is the bilinear upscale"""
    for scale in (2, 3, 4):
        for name in tiny.parameter_names(scale):
            if name.startswith(f"tail.x{scale}."):
                tiny.weights.replace(name, np.zeros(tiny.weights[name].shape))
        features = Tensor(np.random.default_rng(scale).normal(size=(1, 4, 8, 8)))
        out = reconstruct(tiny, features, features, x, scale)
        assert out.shape == (1, 3, 8 * scale, 8 * scale)
        assert out.equals(bilinear_resize(x, scale))


def test_reconstruct_shape_mismatch(tiny, x):
    """Test that F_EFF and F_0 must agree"""
    with pytest.raises(ShapeError):
        reconstruct(tiny, Tensor.zeros((1, 4, 8, 8)), Tensor.zeros((1, 4, 6, 6)), x)


def test_forward_shape_law():
    """Test MCAN-T on a 24x24 input at x2"""
    model = build(preset("MCAN-T", 2), seed=0)
    inp = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 24, 24)))
    assert forward(model, inp).shape == (1, 3, 48, 48)


def test_forward_is_deterministic(tiny, x):
    """Test identical inputs give bitwise-identical outputs"""
    assert forward(tiny, x).equals(forward(tiny, x))


def test_forward_equals_staged_composition(tiny, x):
    """Test forward against the four explicit stages"""
    f0 = feature_extract(tiny, x)
    staged = reconstruct(tiny, eff_forward(tiny, mim_forward(tiny, f0)), f0, x)
    np.testing.assert_allclose(forward(tiny, x).data, staged.data, rtol=1e-6, atol=1e-6)


def test_zero_model_is_bilinear(tiny, x):
    """Test that a zero-weight model reduces to bilinear upscaling exactly"""
    zero = zero_weights(tiny)
    for scale in (2, 3, 4):
        assert forward(zero, x, scale).equals(bilinear_resize(x, scale))


def test_forward_rejects_small_input(tiny):
    """Test the minimum spatial size"""
    with pytest.raises(ShapeError):
        forward(tiny, Tensor.zeros((1, 3, 4, 8)))


def test_trace_gate_count(tiny, x):
    """Test the dynamic gate count equals the static sigmoid count"""
    trace = Trace()
    forward(tiny, Tensor(np.concatenate([x.data, x.data])), trace=trace)
    assert trace.gate_count == count_sigmoids(tiny.config)
    assert "tail.x2.out" in trace.evaluated
    assert "tail.x3.out" not in trace.evaluated


def test_ablation_graphs_are_distinct():
    """Test the four connection/fusion combinations give four different graphs"""
    graphs = set()
    for connections in (True, False):
        for eff in (True, False):
            model = build(tiny_config(mim_connections=connections, eff_enabled=eff), seed=0)
            graphs.add(frozenset(model.edges()))
    assert len(graphs) == 4


def test_no_cross_block_edges_without_connections():
    """Test that head k only depends on head k when connections are dropped"""
    model = build(tiny_config(mim_connections=False, eff_enabled=False), seed=0)
    for src, dst in model.edges():
        if src.startswith("mim.") and dst.startswith("mim."):
            assert src.split(".")[2] == dst.split(".")[2], (src, dst)
    assert not any(node.name.startswith("eff.") for node in model.nodes)


def test_heads_depend_only_on_their_chain():
    """Test reachability: without connections head 0 never reaches head 1"""
    model = build(tiny_config(mim_connections=False), seed=0)
    reach = {"mim.d0.k0.m0.fuse"}
    for src, dst in model.edges():
        if src in reach:
            reach.add(dst)
    assert not any(".k1." in name for name in reach if name.startswith("mim."))
