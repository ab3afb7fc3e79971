import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drivencce.spin import (
    SIGMA_X,
    DensityMatrix,
    SpinOperator,
    apply_local,
    commutator,
    embed,
    evolve,
    expectation,
    kron_all,
    local_spin_ops,
)

from conftest import random_density, random_hermitian


def test_spin_half_jz():
    _, _, jz = local_spin_ops(0.5)
    assert np.array_equal(jz.matrix, np.diag([0.5, -0.5]))


def test_spin_half_commutator_exact():
    jx, jy, jz = local_spin_ops(0.5)
    assert np.array_equal(commutator(jx, jy), 1j * jz.matrix)


def test_spin_one_jz():
    _, _, jz = local_spin_ops(1)
    assert np.array_equal(jz.matrix, np.diag([1.0, 0.0, -1.0]))


@pytest.mark.parametrize("s", [0.5, 1])
def test_angular_momentum_algebra(s):
    j = local_spin_ops(s)
    eps = {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1, (1, 0, 2): -1, (2, 1, 0): -1, (0, 2, 1): -1}
    for a in range(3):
        assert j[a].is_hermitian()
        for b in range(3):
            expected = sum(1j * eps.get((a, b, c), 0) * j[c].matrix for c in range(3))
            assert np.abs(commutator(j[a], j[b]) - expected).max() < 1e-12
    casimir = sum(op.matrix @ op.matrix for op in j)
    assert np.allclose(casimir, s * (s + 1) * np.eye(int(2 * s + 1)))


@pytest.mark.parametrize("s", [0, 1.5, 2, 0.3])
def test_unsupported_spin(s):
    with pytest.raises(ValueError):
        local_spin_ops(s)


def test_embed_acts_on_site():
    _, _, jz = local_spin_ops(0.5)
    op = embed(jz, 0, [0, 1])
    up_down = np.kron([1, 0], [0, 1])
    assert np.allclose(op.matrix @ up_down, 0.5 * up_down)
    assert op.dim == 4 and op.local_dims == (2, 2)
    assert abs(np.trace(op.matrix)) == 0


def test_embed_identity_and_missing_site():
    ident = SpinOperator(np.eye(2), (0,), (2,))
    assert np.array_equal(embed(ident, "b", ["a", "b", "c"]).matrix, np.eye(8))
    with pytest.raises(KeyError):
        embed(ident, "z", ["a", "b"])


def test_embed_mixed_dimensions():
    _, _, jz1 = local_spin_ops(1)
    op = embed(jz1, "n", ["e", "n"], local_dims=(2, 3))
    assert op.dim == 6
    assert np.allclose(op.matrix, np.kron(np.eye(2), jz1.matrix))


def test_spin_operator_dimension_checks():
    with pytest.raises(ValueError):
        SpinOperator(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SpinOperator(np.eye(4), (0, 1), (2, 3))


def test_evolve_zero_is_identity():
    u = evolve(np.zeros((4, 4)), 3.7)
    assert np.allclose(u.matrix, np.eye(4))


def test_evolve_pi_pulse():
    omega = 2.0  # MHz
    u = evolve(omega * SIGMA_X / 2, 1 / (2 * omega))
    assert np.allclose(u.matrix, -1j * SIGMA_X, atol=1e-12)
    assert u.is_unitary()


def test_evolve_matches_dense_eig_oracle(rng):
    h = random_hermitian(rng, 8)
    t = 0.37
    w, v = np.linalg.eig(h)  # general eigensolver, independent of eigh
    ref = v @ np.diag(np.exp(-2j * np.pi * w * t)) @ np.linalg.inv(v)
    assert np.abs(evolve(h, t).matrix - ref).max() < 1e-10


def test_evolve_rejects_non_hermitian():
    with pytest.raises(ValueError):
        evolve(np.array([[0, 1], [0, 0]]), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_evolve_group_property(t1, t2, seed):
    h = random_hermitian(np.random.default_rng(seed), 4)
    lhs = evolve(h, t1).matrix @ evolve(h, t2).matrix
    assert np.abs(lhs - evolve(h, t1 + t2).matrix).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 5), st.integers(0, 2**31))
def test_propagation_preserves_density_matrix(t, seed):
    r = np.random.default_rng(seed)
    rho = DensityMatrix(random_density(r, 4))
    rho.check()
    evolve(random_hermitian(r, 4), t).apply(rho).check()


def test_density_matrix_checks():
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.5, 0.6])).check()
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.5, -0.5])).check()
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[0.5, 1], [0, 0.5]])).check()
    DensityMatrix.maximally_mixed(4).check()


def test_expectation_simple_cases():
    plus = DensityMatrix.pure([1, 1])
    assert expectation(plus, SIGMA_X) == pytest.approx(1.0, abs=1e-15)
    assert expectation(DensityMatrix.maximally_mixed(2), SIGMA_X) == 0.0


def test_expectation_matches_elementwise_sum(rng):
    rho = random_density(rng, 6)
    op = random_hermitian(rng, 6)
    ref = sum(rho[i, j] * op[j, i] for i in range(6) for j in range(6)).real
    assert abs(expectation(rho, op) - ref) < 1e-12


def test_expectation_dimension_mismatch():
    with pytest.raises(ValueError):
        expectation(np.eye(2) / 2, np.eye(4))


def test_apply_local_matches_kron(rng):
    ops = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(3)]
    m = rng.normal(size=(8, 8))
    assert np.allclose(apply_local(ops, m), kron_all(ops) @ m)
