import math
import sys

import numpy as np
import pytest

from thresholdsim.channels import (CovarianceOperator, DensityOperator, SignalMode, SignalModel,
                                   born_probabilities, born_probability, channel_powers,
                                   covariance_from_entries, decompose_signal, density_operator,
                                   diagonalizing_basis, total_power)
from thresholdsim.errors import DomainError
from thresholdsim.montecarlo import simulate_signal_paths

B2 = [[0.6, 0.2], [0.2, 0.4]]
B3_COMPLEX = [[0.5, 0.1 + 0.2j, 0.0], [0.1 - 0.2j, 0.3, 0.05j], [0.0, -0.05j, 0.2]]


def test_powers_and_trace():
    B = CovarianceOperator(B2)
    assert B.dim == 2
    assert channel_powers(B) == pytest.approx([0.6, 0.4])
    assert total_power(B) == pytest.approx(1.0)
    assert B.trace == pytest.approx(1.0)
    assert B.scaled(3.0).trace == pytest.approx(3.0)


def test_matrix_is_read_only():
    B = CovarianceOperator(B2)
    with pytest.raises(ValueError):
        B.matrix[0, 0] = 5.0


def test_covariance_validation():
    with pytest.raises(DomainError):
        CovarianceOperator([[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(DomainError):
        CovarianceOperator([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DomainError):
        CovarianceOperator([[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(DomainError):
        CovarianceOperator([[1.0, 0.0, 0.0]])
    with pytest.raises(DomainError):
        CovarianceOperator([[math.nan]])


def test_rounding_noise_is_clipped():
    v = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
    B = CovarianceOperator((v * np.array([1.0, -1e-12])) @ v.T)
    w = np.linalg.eigvalsh(B.matrix)
    assert w[0] >= -1e-15
    assert B.trace == pytest.approx(1.0, abs=1e-11)


def test_density_operator():
    B = CovarianceOperator(B3_COMPLEX)
    rho = density_operator(B)
    assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-14)
    assert born_probabilities(rho) == pytest.approx([0.5, 0.3, 0.2])
    with pytest.raises(DomainError):
        DensityOperator([[0.5, 0.0], [0.0, 0.6]])


def test_born_probability_routes_agree():
    rho = density_operator(CovarianceOperator(B3_COMPLEX))
    for j in range(rho.dim):
        assert born_probability(rho, j, "trace") == pytest.approx(born_probability(rho, j), abs=1e-15)
    with pytest.raises(IndexError):
        born_probability(rho, 3)
    with pytest.raises(IndexError):
        born_probability(rho, -1)
    with pytest.raises(DomainError):
        born_probability(rho, 0, "projector")


def test_diagonalizing_basis_change():
    B = CovarianceOperator(B2)
    U = diagonalizing_basis(B)
    D = decompose_signal(B, U)
    expected = sorted(np.linalg.eigvalsh(np.array(B2)))
    assert np.allclose(np.diag(D.matrix).real, expected, atol=1e-14)
    assert np.max(np.abs(D.matrix - np.diag(np.diag(D.matrix)))) < 1e-14
    assert D.trace == pytest.approx(B.trace, abs=1e-14)


def test_basis_change_keeps_complex_trace():
    B = CovarianceOperator(B3_COMPLEX)
    U = diagonalizing_basis(B)
    assert decompose_signal(B, U).trace == pytest.approx(1.0, abs=1e-14)


def test_basis_must_be_unitary():
    B = CovarianceOperator(B2)
    with pytest.raises(DomainError):
        decompose_signal(B, [[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(DomainError):
        decompose_signal(B, np.eye(3))


def test_covariance_from_entries():
    B = covariance_from_entries(2, [1.0, [0.0, 0.5], [0.0, -0.5], 2.0])
    assert B.matrix[0, 1] == 0.5j
    assert not B.is_real
    assert covariance_from_entries(2, [1.0, 0.0, 0.0, 3.0]).is_real
    with pytest.raises(DomainError):
        covariance_from_entries(2, [1.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        covariance_from_entries(1, [[1.0, 0.0, 2.0]])
    with pytest.raises(DomainError):
        covariance_from_entries(0, [])


def test_signal_model():
    scalar = SignalModel.scalar(2.0)
    assert scalar.channels == 1
    assert scalar.powers == [2.0]
    with pytest.raises(DomainError):
        SignalModel(SignalMode.REAL, CovarianceOperator(B3_COMPLEX))
    complex_signal = SignalModel("complex", CovarianceOperator(B3_COMPLEX))
    assert complex_signal.mode is SignalMode.COMPLEX
    assert complex_signal.total_power == pytest.approx(1.0)


def test_increment_factor_reproduces_covariance():
    for mode, matrix in ((SignalMode.REAL, B2), (SignalMode.COMPLEX, B3_COMPLEX)):
        signal = SignalModel(mode, CovarianceOperator(matrix))
        L = signal.increment_factor()
        assert np.allclose(L @ L.conj().T, np.array(matrix), atol=1e-14)
    assert np.isrealobj(SignalModel(SignalMode.REAL, CovarianceOperator(B2)).increment_factor())


def test_sampled_covariance_recovers_b():
    rng = np.random.default_rng(424242)
    for mode, matrix in ((SignalMode.REAL, B2), (SignalMode.COMPLEX, B3_COMPLEX)):
        signal = SignalModel(mode, CovarianceOperator(matrix))
        phi = simulate_signal_paths(signal, 2.0, 0.2, rng, 40_000)[:, -1, :]
        n = phi.shape[0]
        sample = phi.T @ phi.conj() / n
        target = 2.0 * np.array(matrix)
        diag = np.real(np.diag(target))
        se = np.sqrt((np.outer(diag, diag) + np.abs(target) ** 2) / n)
        assert np.all(np.abs(sample - target) <= 5.0 * se), mode


if __name__ == "__main__":
    from colorama import Fore, Style
    failed = 0
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            try:
                test()
                print(f"{Fore.GREEN}PASS{Style.RESET_ALL} {name}")
            except Exception as e:
                failed += 1
                print(f"{Fore.RED}FAIL{Style.RESET_ALL} {name}: {e!r}")
    sys.exit(1 if failed else 0)
