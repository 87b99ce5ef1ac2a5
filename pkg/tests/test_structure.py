import numpy as np
import pytest

from contmeas.matcore import I2, X, Y, Z, pauli_string, random_hermitian
from contmeas.structure import compute_gamma, constraint_residual, control_form, violating_indices, with_identity

TWO = [pauli_string("II"), pauli_string("XI"), pauli_string("IX")]


def test_pauli_ix():
    g = compute_gamma([I2, X])
    assert g.values[1, 1, 0] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(g.values[1, 1, 1:])) <= 1e-12


def test_identity_prepended():
    g = compute_gamma([X])
    assert g.n_controls == 2
    assert np.allclose(g.controls[0], I2)
    assert np.allclose(with_identity([2 * I2, Z])[0], I2)


def test_symmetry_and_reconstruction(rng):
    for n, d in [(2, 3), (3, 4), (4, 6), (6, 8)]:
        g = compute_gamma([random_hermitian(n, rng) for _ in range(d)])
        assert np.array_equal(g.values, g.values.transpose(1, 0, 2))
        assert g.reconstruction_error() <= 1e-10


def test_two_qubit_xx():
    g = compute_gamma(TWO)
    k = 3
    # the completion element is XX / ||XX|| = XX / 2, so its coefficient is ||XX|| = 2
    assert np.allclose(g.element(k), pauli_string("XX") / 2)
    assert g.values[1, 2, k] == pytest.approx(2.0, abs=1e-12)
    others = np.delete(g.values[1, 2], k)
    assert np.max(np.abs(others)) <= 1e-12
    assert violating_indices(g, 1e-8) == [k]


def test_control_form_hyperbolic():
    g = compute_gamma(TWO)
    q = control_form(g, 3)
    mask = np.ones_like(q, dtype=bool)
    mask[1, 2] = mask[2, 1] = False
    assert q[1, 2] != 0 and np.max(np.abs(q[mask])) == 0


def test_control_form_identity_slot():
    s = 1 / np.sqrt(2)
    g = compute_gamma([I2, s * X, s * Y, s * Z])
    q = control_form(g, 0)[1:, 1:]
    assert np.allclose(q, np.diag(np.diag(q)))
    assert np.all(np.linalg.eigvalsh(q) > 0)


def test_control_form_range():
    g = compute_gamma([I2, Z])
    with pytest.raises(IndexError):
        control_form(g, 4)
    assert np.allclose(control_form(g, 2), 0)


def test_constraint_residual():
    g = compute_gamma(TWO)
    assert constraint_residual(np.zeros(3), g) == 0
    assert constraint_residual([0.7, 1, 0], g) <= 1e-14
    assert constraint_residual([0, 1, 1], g) == pytest.approx(4.0)


def test_closed_controls_have_zero_residual(rng):
    g = compute_gamma([I2, X, Z])
    for _ in range(10):
        assert constraint_residual(rng.normal(size=3), g) <= 1e-12
