import numpy as np
import pytest

from histmerge.core import ProjectorDecomposition

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)
PLUS = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
MINUS = 0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)


def z_basis():
    return ProjectorDecomposition((KET0, KET1), "z")


def x_basis():
    return ProjectorDecomposition((PLUS, MINUS), "x")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
