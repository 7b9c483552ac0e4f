import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spikekg.shallow import (distmult_grad, distmult_score, transe_distance, transe_grad)

vec = hnp.arrays(np.float64, 6, elements=st.floats(-3, 3))


def test_transe_identity_case():
    e = np.array([0.4, -1.0, 2.0])
    assert transe_distance(e, np.zeros(3), e) == 0.0


def test_transe_hand_value():
    assert transe_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.zeros(2)) == 2.0


def test_transe_swap_symmetry_zero_relation():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=4), rng.normal(size=4)
    z = np.zeros(4)
    assert transe_distance(a, z, b) == transe_distance(b, z, a)


def test_transe_dimension_mismatch():
    with pytest.raises(ValueError):
        transe_distance(np.zeros(3), np.zeros(2), np.zeros(3))


def test_transe_grad_sign_pattern():
    gs, gp, go = transe_grad(np.array([2.0, -3.0]), np.zeros(2), np.zeros(2))
    assert gs.tolist() == [1.0, -1.0]
    assert gp.tolist() == [1.0, -1.0]
    assert go.tolist() == [-1.0, 1.0]


def test_transe_grad_zero_residual():
    e = np.array([1.0, 2.0])
    gs, gp, go = transe_grad(e, np.zeros(2), e)
    assert not gs.any() and not gp.any() and not go.any()


def test_transe_grad_matches_finite_differences():
    rng = np.random.default_rng(3)
    eps = 1e-6
    for _ in range(20):
        s, p, o = rng.normal(size=(3, 8))
        resid = s + p - o
        if np.min(np.abs(resid)) < 10 * eps:
            continue  # stay away from the L1 kink
        gs, gp, go = transe_grad(s, p, o)
        for vec_, g in ((s, gs), (p, gp), (o, go)):
            for i in range(8):
                orig = vec_[i]
                vec_[i] = orig + eps
                up = transe_distance(s, p, o)
                vec_[i] = orig - eps
                dn = transe_distance(s, p, o)
                vec_[i] = orig
                assert abs((up - dn) / (2 * eps) - g[i]) < 1e-6


def test_distmult_zero_relation():
    rng = np.random.default_rng(1)
    assert distmult_score(rng.normal(size=5), np.zeros(5), rng.normal(size=5)) == 0.0


def test_distmult_hand_value():
    s = np.array([1.0, 2.0])
    p = np.array([3.0, 1.0])
    o = np.array([1.0, 1.0])
    assert distmult_score(s, p, o) == 5.0


@settings(max_examples=50, deadline=None)
@given(s=vec, p=vec, o=vec)
def test_distmult_subject_object_symmetry(s, p, o):
    assert distmult_score(s, p, o) == pytest.approx(distmult_score(o, p, s), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(s=vec, p=vec, o=vec, a=st.floats(-2, 2))
def test_distmult_linear_in_subject(s, p, o, a):
    assert distmult_score(a * s, p, o) == pytest.approx(a * distmult_score(s, p, o), abs=1e-9)


def test_distmult_grad_matches_finite_differences():
    rng = np.random.default_rng(9)
    eps = 1e-6
    for _ in range(20):
        s, p, o = rng.normal(size=(3, 8))
        gs, gp, go = distmult_grad(s, p, o)
        for vec_, g in ((s, gs), (p, gp), (o, go)):
            i = int(rng.integers(8))
            orig = vec_[i]
            vec_[i] = orig + eps
            up = distmult_score(s, p, o)
            vec_[i] = orig - eps
            dn = distmult_score(s, p, o)
            vec_[i] = orig
            assert abs((up - dn) / (2 * eps) - g[i]) < 1e-5


@settings(max_examples=50, deadline=None)
@given(s=vec, p=vec, o=vec)
def test_transe_zero_iff_translation_holds(s, p, o):
    d = transe_distance(s, p, o)
    if np.array_equal(s + p, o):
        assert d == 0.0
    else:
        assert d >= 0.0
        assert (d == 0.0) == bool(np.all(s + p == o))
