import numpy as np
import pytest

from conflab import autodiff as ad
from conflab.autodiff import Tensor, grad_check
from conflab.exceptions import ContractError
from conflab.losses import cross_entropy
from conflab.model import (
    CHECKPOINT_MAGIC, TRAINABLE, ModelOutput, forward, init_model, load_checkpoint,
    predict, save_checkpoint, uncertainty,
)


def test_init_deterministic_and_shapes():
    a, b = init_model(2, 2, seed=3), init_model(2, 2, seed=3)
    for k in a.arrays:
        assert np.array_equal(a.arrays[k], b.arrays[k])
    assert a.arrays["Wp"].shape == (64, 2)
    for k in ("b1", "b2", "bp", "bc", "beta1", "beta2"):
        assert not a.arrays[k].any()
    assert np.all(a.arrays["rv1"] >= 0)


def test_forward_eval_invariants(rng):
    params = init_model(3, 4, seed=0)
    x = rng.normal(size=(10, 3))
    out = forward(params, x)
    np.testing.assert_allclose(out.class_probs.data.sum(axis=1), 1.0, atol=1e-9)
    c = out.confidence.data
    assert c.shape == (10, 1) and np.all((c > 0) & (c < 1))
    again = forward(params, x)
    assert np.array_equal(out.confidence.data, again.confidence.data)


def test_zero_conf_head_gives_half(rng):
    params = init_model(2, 2, seed=0)
    params.arrays["Wc"][:] = 0.0
    params.arrays["bc"][:] = 0.0
    np.testing.assert_array_equal(predict(params, rng.normal(size=(5, 2))).confidence.data, 0.5)


def test_forward_contracts(rng):
    params = init_model(2, 2, seed=0)
    with pytest.raises(ContractError):
        forward(params, rng.normal(size=(4, 3)))
    with pytest.raises(ContractError):
        forward(params, rng.normal(size=(1, 2)), mode="train", rng=rng)
    with pytest.raises(ContractError):
        forward(params, np.array([[np.nan, 0.0]]))


def test_uncertainty_is_complement():
    conf = Tensor(np.array([[0.8], [0.5], [0.1]]))
    out = ModelOutput(Tensor(np.zeros((3, 2))), Tensor(np.full((3, 2), 0.5)), conf)
    np.testing.assert_allclose(uncertainty(out)[:, 0], [0.2, 0.5, 0.9])


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_full_model_gradient(mode):
    params = init_model(2, 2, seed=1, hidden=6)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(5, 2))
    y = np.array([0, 1, 1, 0, 1])
    names = list(TRAINABLE)

    def f(*leaves):
        drop = np.random.default_rng(9)  # same mask on every evaluation
        out = forward(params, x, mode=mode, rng=drop, leaves=dict(zip(names, leaves)))
        ce = cross_entropy(out.class_probs, y)
        return ad.add(ce, ad.mean(ad.square(ad.shift(out.confidence, -0.7))))

    assert grad_check(f, [params.arrays[k] for k in names]) < 1e-4


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_model(2, 3, seed=4)
    path = tmp_path / "m.json"
    save_checkpoint(params, path)
    assert CHECKPOINT_MAGIC in path.read_text()
    back = load_checkpoint(path)
    x = rng.normal(size=(6, 2))
    assert np.array_equal(predict(params, x).logits.data, predict(back, x).logits.data)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"magic": "nope"}')
    with pytest.raises(ContractError):
        load_checkpoint(p)
