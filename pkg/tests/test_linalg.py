import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikekg.linalg import (Adam, Param, ParamStore, grad_check, init_normal, init_xavier,
                            load_checkpoint, save_checkpoint)


def test_init_normal_zero_std():
    m = init_normal((3, 4), mean=2.5, std=0.0, seed=1)
    assert np.all(m == 2.5)


def test_init_normal_statistics():
    m = init_normal((100_000,), mean=0.0, std=1.0, seed=7)
    assert abs(m.mean()) < 0.02
    assert abs(m.std() - 1.0) < 0.02


def test_init_normal_deterministic():
    assert np.array_equal(init_normal((5, 5), seed=3), init_normal((5, 5), seed=3))


def test_init_xavier_zero_gain():
    assert np.all(init_xavier((4, 4), gain=0.0, seed=1) == 0.0)


def test_init_xavier_bound():
    gain = np.sqrt(2.0)
    a = gain * np.sqrt(6.0 / 8.0)
    m = init_xavier((4, 4), gain=gain, seed=5)
    assert np.all(np.abs(m) <= a)


def test_init_xavier_variance():
    # variance of U(-a, a) is a^2 / 3
    m = init_xavier((1000, 100), gain=1.0, seed=11)
    a = np.sqrt(6.0 / 1100.0)
    assert abs(m.var() / (a * a / 3.0) - 1.0) < 0.05


def test_adam_zero_grad_keeps_values():
    p = Param("x", np.array([1.0, -2.0]))
    adam = Adam(ParamStore([p]), lr=0.1)
    adam.step()
    assert np.array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_hand_recurrence():
    # constant grad 1: bias-corrected first step is -lr / (1 + eps)
    p = Param("x", np.array([0.0]))
    adam = Adam(ParamStore([p]), lr=1e-3)
    p.grad[:] = 1.0
    adam.step()
    assert abs(p.value[0] + 1e-3) < 1e-9
    assert p.grad[0] == 0.0  # grads zeroed afterwards


def test_adam_lr_zero_is_identity():
    rng = np.random.default_rng(0)
    p = Param("x", rng.normal(size=(4, 3)))
    before = p.value.copy()
    adam = Adam(ParamStore([p]), lr=0.0)
    for _ in range(5):
        p.grad[:] = rng.normal(size=p.value.shape)
        adam.step()
    assert np.array_equal(p.value, before)


def test_frozen_param_never_touched():
    p = Param("w", np.eye(3), frozen=True)
    assert p.grad is None
    with pytest.raises(AssertionError):
        p.accumulate(np.eye(3))
    store = ParamStore([p, Param("x", np.zeros(2))])
    adam = Adam(store, lr=1.0)
    assert set(adam.m) == {"x"}
    before = p.value.tobytes()
    store["x"].grad[:] = 1.0
    adam.step()
    assert p.value.tobytes() == before


def test_grad_check_quadratic():
    p = Param("x", np.array([0.7, -1.3, 2.0]))
    def loss():
        return 0.5 * float(np.square(p.value).sum()), ()
    p.grad[:] = p.value  # analytic gradient of 0.5 ||x||^2
    assert grad_check(loss, [p], eps=1e-4) < 1e-7


def test_grad_check_skips_kink_crossings():
    # |x| at x close to 0: the sign signature rejects the crossing coordinate
    p = Param("x", np.array([1e-7, 3.0]))
    def loss():
        return float(np.abs(p.value).sum()), (np.sign(p.value).tobytes(),)
    p.grad[:] = np.sign(p.value)
    assert grad_check(loss, [p], eps=1e-4) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_checkpoint_roundtrip(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore([
        Param("a", rng.normal(size=(3, 4)), l2_weight=0.01),
        Param("w", rng.normal(size=(2, 2)), frozen=True),
        Param("t", rng.normal(size=(2, 3, 4))),
    ])
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "c.ckpt")
        save_checkpoint(path, store, meta={"kind": "test", "seed": seed})
        loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "test", "seed": seed}
    for p in store:
        q = loaded[p.name]
        assert np.array_equal(p.value, q.value)
        assert p.frozen == q.frozen and p.l2_weight == q.l2_weight
    assert loaded["w"].grad is None
