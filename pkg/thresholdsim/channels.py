"""
Finite-dimensional H-valued Wiener signal: covariance operator B, channel
powers sigma_j^2 = b_jj, total power Tr B, density operator B / Tr B and the
Born probabilities rho_jj.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from thresholdsim.errors import DomainError
from thresholdsim.hitting import positive_float

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-12
UNITARY_TOL = 1e-12


class SignalMode(Enum):
    REAL = "real"
    COMPLEX = "complex"


def _square_matrix(matrix, what):
    arr = np.array(matrix, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DomainError(f"{what} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} has non-finite entries")
    return arr


def _hermitian_psd(arr, what):
    """Symmetrized copy of arr; eigenvalues in [-PSD_TOL * trace, 0) are clipped to 0."""
    scale = max(1.0, float(np.max(np.abs(arr))))
    skew = float(np.max(np.abs(arr - arr.conj().T)))
    if skew > HERMITIAN_TOL * scale:
        raise DomainError(f"{what} is not Hermitian (max |b_ij - conj(b_ji)| = {skew:.3g})")
    arr = 0.5 * (arr + arr.conj().T)
    trace = float(np.trace(arr).real)
    if not trace > 0:
        raise DomainError(f"{what} must have positive trace, got {trace!r}")
    w, v = np.linalg.eigh(arr)
    if w[0] < -PSD_TOL * trace:
        raise DomainError(f"{what} is not positive semidefinite (smallest eigenvalue {w[0]:.6g})")
    if w[0] < 0:
        logger.warning("%s: clipping eigenvalues down to %.3g to zero", what, w[0])
        arr = (v * np.clip(w, 0.0, None)) @ v.conj().T
        arr = 0.5 * (arr + arr.conj().T)
    arr.setflags(write=False)
    return arr


class CovarianceOperator:
    """Covariance B of the signal: Hermitian, positive semidefinite, Tr B > 0."""

    def __init__(self, matrix):
        self.matrix = _hermitian_psd(_square_matrix(matrix, "covariance"), "covariance")

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    @property
    def is_real(self):
        return not np.any(self.matrix.imag)

    def scaled(self, factor):
        return CovarianceOperator(positive_float(factor, "factor") * self.matrix)

    def __repr__(self):
        return f"CovarianceOperator(dim={self.dim}, trace={self.trace!r})"


class DensityOperator:
    """Trace-one Hermitian positive semidefinite matrix rho."""

    def __init__(self, matrix):
        arr = _hermitian_psd(_square_matrix(matrix, "density operator"), "density operator")
        trace = float(np.trace(arr).real)
        if abs(trace - 1.0) > TRACE_TOL:
            raise DomainError(f"density operator must have trace 1, got {trace!r}")
        self.matrix = arr

    @property
    def dim(self):
        return self.matrix.shape[0]

    def __repr__(self):
        return f"DensityOperator(dim={self.dim})"


def channel_powers(B):
    """sigma_j^2 = b_jj."""
    return [float(b) for b in np.diag(B.matrix).real]


def total_power(B):
    """Sigma^2 = Tr B = sum of channel powers."""
    return math.fsum(channel_powers(B))


def density_operator(B):
    trace = B.trace
    if not trace > 0:
        raise DomainError("density operator of a zero-trace covariance")
    return DensityOperator(B.matrix / trace)


def born_probability(rho, j, route="diagonal"):
    """rho_jj, read off the diagonal or as Tr(rho C_j) with C_j = |e_j><e_j|."""
    if int(j) != j or not 0 <= j < rho.dim:
        raise IndexError(f"channel {j!r} out of range for dimension {rho.dim}")
    j = int(j)
    if route == "diagonal":
        return float(rho.matrix[j, j].real)
    if route == "trace":
        projector = np.zeros((rho.dim, rho.dim), dtype=np.complex128)
        projector[j, j] = 1.0
        return float(np.trace(rho.matrix @ projector).real)
    raise DomainError(f"route must be 'diagonal' or 'trace', got {route!r}")


def born_probabilities(rho):
    return [born_probability(rho, j) for j in range(rho.dim)]


def decompose_signal(B, basis):
    """Covariance U^dagger B U in the channel basis given by the columns of U."""
    U = _square_matrix(basis, "basis")
    if U.shape != B.matrix.shape:
        raise DomainError(f"basis shape {U.shape} does not match covariance {B.matrix.shape}")
    defect = float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))
    if defect > UNITARY_TOL:
        raise DomainError(f"basis is not orthonormal (max |U^dagger U - I| = {defect:.3g})")
    return CovarianceOperator(U.conj().T @ B.matrix @ U)


def diagonalizing_basis(B):
    """Unitary whose columns are eigenvectors of B, eigenvalues ascending."""
    _, v = np.linalg.eigh(B.matrix)
    return v


def covariance_from_entries(dim, entries):
    """
    Row-major dim x dim entries, each a real number or an [re, im] pair.
    """
    if int(dim) != dim or dim < 1:
        raise DomainError(f"dim must be a positive integer, got {dim!r}")
    dim = int(dim)
    entries = list(entries)
    if len(entries) != dim * dim:
        raise DomainError(f"expected {dim * dim} covariance entries, got {len(entries)}")
    values = []
    for i, entry in enumerate(entries):
        if isinstance(entry, (list, tuple)):
            if len(entry) != 2:
                raise DomainError(f"complex entry {i} must be [re, im], got {entry!r}")
            values.append(complex(float(entry[0]), float(entry[1])))
        else:
            values.append(complex(float(entry)))
    return CovarianceOperator(np.array(values).reshape(dim, dim))


@dataclass(frozen=True)
class SignalModel:
    """Real or complex m-channel Wiener signal with covariance B."""
    mode: SignalMode
    covariance: CovarianceOperator

    def __post_init__(self):
        object.__setattr__(self, "mode", SignalMode(self.mode))
        if self.mode is SignalMode.REAL and not self.covariance.is_real:
            raise DomainError("a real signal needs a real covariance matrix")

    @classmethod
    def scalar(cls, sigma2, mode=SignalMode.REAL):
        return cls(SignalMode(mode), CovarianceOperator([[positive_float(sigma2, "sigma2")]]))

    @property
    def channels(self):
        return self.covariance.dim

    @property
    def powers(self):
        return channel_powers(self.covariance)

    @property
    def total_power(self):
        return total_power(self.covariance)

    def increment_factor(self):
        """L with L L^dagger = B (real for a real signal), from the eigen-decomposition."""
        B = self.covariance.matrix
        if self.mode is SignalMode.REAL:
            B = B.real
        w, v = np.linalg.eigh(B)
        return v * np.sqrt(np.clip(w, 0.0, None))
