import pytest

from cor import checks
from cor.checks import COMPOSITES, REGISTRY, run_check, run_checks, skew
from cor.numerics import Tensor

OPS = (
    "add sub mul div pow matmul sum mean reshape transpose getitem concat exp log sqrt abs "
    "conv2d linear layer_norm gelu relu sigmoid softmax softmax_over_positions cosine masked_pool bce upsample"
).split()


def test_registry_lists_every_differentiable_op_and_composite():
    assert set(OPS) <= set(REGISTRY)
    assert set(COMPOSITES) == {"SFE3", "RRE", "AVTI", "L_cor", "L_seg", "L_total"}
    assert set(COMPOSITES) <= set(REGISTRY)


@pytest.fixture(scope="module")
def results():
    return {r.name: r for r in run_checks()}


@pytest.mark.parametrize("name", list(REGISTRY))
def test_check_passes(results, name):
    r = results[name]
    assert r.passed, f"{name}: {r.error:.3e}"


@pytest.mark.parametrize("name", list(REGISTRY))
def test_corrupted_gradient_fails(name):
    r = run_check(name, corrupt=True)
    assert not r.passed
    assert r.error > 1e-2


def test_skew_is_identity_forward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = skew(x, 3.0)
    assert list(y.data) == [1.0, 2.0]
    y.sum().backward()
    assert list(x.grad) == [3.0, 3.0]


def test_unknown_names_rejected():
    with pytest.raises(KeyError):
        run_checks(["nope"])
    with pytest.raises(KeyError):
        run_checks(["add"], corrupt=["nope"])


def test_format_results_lists_every_check(results):
    text = checks.format_results(list(results.values()))
    assert len(text.splitlines()) == len(REGISTRY) + 1
    assert "FAIL" not in text
