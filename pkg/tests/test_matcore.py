import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contmeas.errors import DomainError, InputError
from contmeas.matcore import (
    I2,
    X,
    Y,
    Z,
    anticommutator,
    as_hermitian,
    as_unitary,
    complete_basis,
    eigensystem,
    hs_inner,
    pauli_string,
    random_hermitian,
    random_unitary,
    scalar_function,
    span_residual,
)


def test_anticommutator_paulis():
    assert np.allclose(anticommutator(X, Z), 0)
    assert np.allclose(anticommutator(X, X), I2)


def test_anticommutator_entrywise(rng):
    a = random_hermitian(5, rng)
    b = random_hermitian(5, rng)
    ref = np.zeros((5, 5), dtype=complex)
    for i in range(5):
        for j in range(5):
            for k in range(5):
                ref[i, j] += (a[i, k] * b[k, j] + b[i, k] * a[k, j]) / 2
    assert np.max(np.abs(anticommutator(a, b) - ref)) <= 1e-12


def test_anticommutator_dimension_mismatch():
    with pytest.raises(InputError):
        anticommutator(X, np.eye(3))


def test_eigensystem_identity_and_z():
    es = eigensystem(np.eye(3))
    assert np.allclose(es.values, 1)
    assert np.allclose(es.frame, np.eye(3))
    assert np.allclose(eigensystem(Z).values, [-1, 1])


def test_eigensystem_reconstruction(rng):
    h = random_hermitian(8, rng)
    es = eigensystem(h)
    assert np.all(np.diff(es.values) >= 0)
    assert np.linalg.norm(es.reconstruct() - h) <= 1e-10 * np.linalg.norm(h)
    assert np.linalg.norm(es.frame.conj().T @ es.frame - np.eye(8)) <= 1e-10 * np.sqrt(8)


def test_eigensystem_degenerate_frame_is_deterministic(rng):
    u = random_unitary(4, rng)
    h = u @ np.diag([1.0, 1.0, 1.0, -2.0]) @ u.conj().T
    # a different unitary mixing inside the degenerate space gives the same H
    v = np.eye(4, dtype=complex)
    v[:3, :3] = random_unitary(3, rng)
    h2 = (u @ v) @ np.diag([1.0, 1.0, 1.0, -2.0]) @ (u @ v).conj().T
    a, b = eigensystem(h), eigensystem(h2)
    assert np.allclose(a.frame, b.frame, atol=1e-9)


def test_scalar_function(rng):
    h = random_hermitian(4, rng)
    assert np.allclose(scalar_function(h, lambda v: v), h, atol=1e-12)
    assert np.allclose(scalar_function(np.zeros((3, 3)), np.cos), np.eye(3))
    c = scalar_function(0.05 * h, np.cos)
    s = scalar_function(0.05 * h, np.sin)
    assert np.linalg.norm(c @ c + s @ s - np.eye(4)) <= 1e-12


def test_scalar_function_domain_error():
    with pytest.raises(DomainError):
        scalar_function(-np.eye(2), np.log)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_scalar_function_composition(n, seed):
    h = random_hermitian(n, np.random.default_rng(seed))
    once = scalar_function(h, lambda v: np.exp(np.sin(v)))
    twice = scalar_function(scalar_function(h, np.sin), np.exp)
    assert np.linalg.norm(once - twice) <= 1e-10 * max(1.0, np.linalg.norm(once))


def test_hs_inner(rng):
    assert hs_inner(X, Z) == 0
    assert hs_inner(np.eye(3), np.eye(3)) == 3
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert abs(hs_inner(a, b)) ** 2 <= hs_inner(a, a).real * hs_inner(b, b).real


def test_hermitian_validation():
    with pytest.raises(InputError):
        as_hermitian(np.array([[0, 1], [0, 0]]))
    h = as_hermitian(Y)
    assert not h.flags.writeable
    with pytest.raises(InputError):
        as_unitary(2 * np.eye(2))


def test_complete_basis_iz():
    b = complete_basis([I2, Z])
    assert b.count == 4 and b.n_span == 2
    assert np.all(span_residual(b.elements[:2], np.array([I2, Z])) <= 1e-12)


def test_complete_basis_identity_only():
    assert complete_basis([I2]).count == 4


def test_complete_basis_gram(rng):
    b = complete_basis([random_hermitian(3, rng) for _ in range(3)])
    assert b.count == 9
    assert np.max(np.abs(b.gram() - np.eye(9))) <= 1e-10


@pytest.mark.parametrize("n", range(1, 9))
def test_complete_basis_size(n, rng):
    assert complete_basis([np.eye(n), random_hermitian(n, rng)]).count == n * n


def test_complete_basis_prunes_dependent():
    with pytest.warns(UserWarning, match="dependent"):
        b = complete_basis([I2, Z, 2 * Z])
    assert b.pruned == (2,)
    assert b.count == 4


def test_pauli_string():
    assert np.allclose(pauli_string("XI"), np.kron(X, I2))
