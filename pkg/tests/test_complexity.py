import numpy as np
import pytest

from bicephnet import complexity as cx
from bicephnet.errors import ValidationError
from bicephnet.model import BicephConfig, BicephNet

# hand-summed for the default binary config (64 -> 128 -> 64, embed 64, prior 1, head 65-32-16-8-1)
DEFAULT_PARAMS = (128 * 65 + 64 * 129) + 64 * 65 + 1 * 65 + (32 * 66 + 16 * 33 + 8 * 17 + 1 * 9)
DEFAULT_FLOPS = (
    (2 * 64 * 128 + 2 * 128) + (2 * 128 * 64 + 2 * 64)  # backbone with relu
    + (2 * 64 * 64 + 64) + 3 * 64  # triplet dense + l2 norm
    + (2 * 64 * 1 + 2)  # prior with sigmoid
    + (2 * 65 * 32 + 64) + (2 * 32 * 16 + 32) + (2 * 16 * 8 + 16) + (2 * 8 * 1 + 2)
)


def test_single_dense_examples():
    d = cx.ModelDescription({"m": [cx.LayerSpec("dense", 10, 5)]})
    assert cx.count_params(d) == 55
    assert cx.estimate_flops(d) == 105
    empty = cx.ModelDescription({})
    assert cx.count_params(empty) == 0 and cx.estimate_flops(empty) == 0


def test_default_config_matches_hand_sum():
    cfg = BicephConfig()
    desc = cx.describe_biceph(cfg)
    assert DEFAULT_PARAMS == 23586
    assert cx.count_params(desc) == DEFAULT_PARAMS == BicephNet(cfg).n_params()
    assert cx.estimate_flops(desc) == DEFAULT_FLOPS


def test_multiclass_description_matches_model():
    cfg = BicephConfig(num_classes=3)
    assert cx.count_params(cx.describe_biceph(cfg)) == BicephNet(cfg).n_params()


def random_chain(rng, n=None):
    n = n or int(rng.integers(1, 7))
    dims = rng.integers(1, 200, size=n + 1).tolist()
    acts = rng.choice(["identity", "relu", "sigmoid", "softmax"], size=n)
    return [cx.LayerSpec("dense", a, b, str(f), f"l{i}") for i, (a, b, f) in enumerate(zip(dims, dims[1:], acts))]


@pytest.mark.parametrize("seed", range(20))
def test_random_chain_params_closed_form(seed):
    layers = random_chain(np.random.default_rng(seed))
    expected = sum(l.out_dim * (l.in_dim + 1) for l in layers)
    assert cx.count_params(cx.ModelDescription({"c": layers})) == expected


def test_additivity_and_monotonicity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = random_chain(rng), random_chain(rng)
        both = cx.ModelDescription({"a": a, "b": b})
        for f in (cx.count_params, cx.estimate_flops):
            assert f(both) == f(cx.ModelDescription({"a": a})) + f(cx.ModelDescription({"b": b}))
        # widen one hidden width (changing both sides of the junction)
        if len(a) > 1:
            i = int(rng.integers(0, len(a) - 1))
            wider = [cx.LayerSpec(l.kind, l.in_dim, l.out_dim, l.activation, l.name) for l in a]
            wider[i].out_dim += 3
            wider[i + 1].in_dim += 3
            for f in (cx.count_params, cx.estimate_flops):
                assert f(cx.ModelDescription({"a": wider})) >= f(cx.ModelDescription({"a": a}))


def test_inconsistent_chain_rejected():
    bad = cx.ModelDescription({"c": [cx.LayerSpec("dense", 4, 5), cx.LayerSpec("dense", 6, 2)]})
    with pytest.raises(ValidationError):
        cx.count_params(bad)
    with pytest.raises(ValidationError):
        cx.count_params(cx.ModelDescription({"c": [cx.LayerSpec("l2norm", 4, 5)]}))


def test_size_formula():
    d = cx.ModelDescription({"c": [cx.LayerSpec("dense", 9, 100)]})
    assert cx.estimate_size(d) == 8000
    assert cx.estimate_size(d, envelope_bytes=321) == 8321
    assert cx.estimate_size(cx.ModelDescription({}), envelope_bytes=321) == 321


def test_report_text_states_convention():
    r = cx.cost_report(cx.describe_biceph(BicephConfig()))
    assert "2 FLOPs per multiply-add" in r.to_text()
    assert '"flop_convention"' in r.to_json()
    assert r.total_params == DEFAULT_PARAMS and r.flops_forward == DEFAULT_FLOPS


def test_triplet_baseline_is_a_sub_graph():
    cfg = BicephConfig()
    full = cx.count_params(cx.describe_biceph(cfg))
    base = cx.count_params(cx.describe_triplet_baseline(cfg))
    assert base == full - 65 - (32 * 66 + 16 * 33 + 8 * 17 + 9)
