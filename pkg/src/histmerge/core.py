"""Dense complex-matrix primitives and entropy functionals.

Everything here works on plain ``numpy`` arrays. The small wrapper types
(:class:`DensityMatrix`, :class:`Hamiltonian`, :class:`ProjectorDecomposition`)
only tag an array with its role; they are immutable and do not validate on
construction, so that :func:`validate` can report on broken instances.
Operations that need a valid input validate it themselves.

Conventions: hbar = 1, natural logarithms (entropies in nats), 0 ln 0 = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import SchemaError, ValidationError

TOL_HERM = 1e-9
TOL_TRACE = 1e-9
TOL_PROJ = 1e-9
TOL_PSD = 1e-10
EPS_EIG = 1e-12

__all__ = [
    "TOL_HERM", "TOL_TRACE", "TOL_PROJ", "TOL_PSD", "EPS_EIG",
    "DensityMatrix", "Hamiltonian", "ProjectorDecomposition",
    "Violation", "ValidationReport",
    "as_matrix", "hermitize", "dagger", "residual",
    "hermitian_eig", "evolve_unitary", "von_neumann_entropy",
    "quadratic_entropy", "validate", "require_valid",
    "matrix_from_json", "matrix_to_json",
]


def _frozen(m) -> np.ndarray:
    a = np.array(m, dtype=complex)
    a.setflags(write=False)
    return a


def as_matrix(x) -> np.ndarray:
    """Return the complex square array behind ``x`` (wrapper or array-like)."""
    if isinstance(x, (DensityMatrix, Hamiltonian)):
        return x.matrix
    a = np.asarray(x, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValidationError(f"expected a non-empty square matrix, got shape {a.shape}")
    return a


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def hermitize(m: np.ndarray) -> np.ndarray:
    """Re-symmetrize ``(m + m^dagger) / 2`` to remove roundoff drift."""
    return 0.5 * (m + m.conj().T)


def residual(m: np.ndarray) -> float:
    """Max-abs entry norm, the norm used for every invariant residual."""
    return float(np.max(np.abs(m))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(as_matrix(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(as_matrix(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def zero(cls, dim: int) -> "Hamiltonian":
        return cls(np.zeros((dim, dim)))


@dataclass(frozen=True, eq=False)
class ProjectorDecomposition:
    """Ordered orthogonal projectors meant to resolve the identity.

    ``label`` names the kind of resolution (e.g. ``"z"``), not an outcome.
    """

    projectors: tuple
    label: str = ""

    def __post_init__(self):
        projs = tuple(_frozen(as_matrix(p)) for p in self.projectors)
        if not projs:
            raise ValidationError("a decomposition needs at least one projector")
        object.__setattr__(self, "projectors", projs)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.projectors)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.projectors[index]

    @classmethod
    def identity(cls, dim: int, label: str = "I") -> "ProjectorDecomposition":
        return cls((np.eye(dim),), label)

    @classmethod
    def computational(cls, dim: int, label: str = "z") -> "ProjectorDecomposition":
        """Rank-1 projectors onto the standard basis vectors."""
        eye = np.eye(dim)
        return cls(tuple(np.outer(eye[k], eye[k]) for k in range(dim)), label)

    @classmethod
    def from_vectors(cls, vectors: Sequence, label: str = "") -> "ProjectorDecomposition":
        """Rank-1 projectors |v><v| for each (normalized) vector."""
        projs = []
        for v in vectors:
            v = np.asarray(v, dtype=complex)
            v = v / np.linalg.norm(v)
            projs.append(np.outer(v, v.conj()))
        return cls(tuple(projs), label)


@dataclass(frozen=True)
class Violation:
    invariant: str
    residual: float
    tolerance: float

    def __str__(self):
        return f"{self.invariant}: residual {self.residual:.3e} > {self.tolerance:.0e}"


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    violations: tuple = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    def violation(self, invariant: str) -> Violation | None:
        for v in self.violations:
            if v.invariant == invariant:
                return v
        return None

    def raise_if_invalid(self):
        if self.violations:
            msg = "; ".join(str(v) for v in self.violations)
            raise ValidationError(f"invalid {self.kind}: {msg}", self)


def _check(out: list, name: str, res: float, tol: float):
    if not res <= tol:  # catches NaN too
        out.append(Violation(name, float(res), tol))


def _validate_hermitian(m, out, name="hermitian"):
    _check(out, name, residual(m - m.conj().T), TOL_HERM)


def _validate_density(m: np.ndarray) -> list:
    out: list = []
    if not np.all(np.isfinite(m)):
        out.append(Violation("finite", float("inf"), 0.0))
        return out
    _validate_hermitian(m, out)
    _check(out, "trace", abs(np.trace(m) - 1.0), TOL_TRACE)
    lam_min = float(np.linalg.eigvalsh(hermitize(m))[0])
    _check(out, "positive_semidefinite", -lam_min, TOL_PSD)
    return out


def _validate_decomposition(d: ProjectorDecomposition) -> list:
    out: list = []
    dim = d.dim
    for k, e in enumerate(d.projectors):
        if e.shape != (dim, dim):
            out.append(Violation(f"shape[{k}]", float("inf"), 0.0))
            return out
        _validate_hermitian(e, out, f"hermitian[{k}]")
        _check(out, f"idempotent[{k}]", residual(e @ e - e), TOL_PROJ)
    for a in range(len(d)):
        for b in range(a + 1, len(d)):
            _check(out, f"orthogonal[{a},{b}]",
                   residual(d.projectors[a] @ d.projectors[b]), TOL_PROJ)
    total = np.sum(d.projectors, axis=0)
    _check(out, "completeness", residual(total - np.eye(dim)), TOL_PROJ)
    return out


def validate(x, kind: str | None = None) -> ValidationReport:
    """List every violated invariant of ``x`` with its measured residual.

    ``kind`` is inferred from the wrapper type; pass ``"density"``,
    ``"hamiltonian"`` or ``"decomposition"`` for raw arrays / sequences.
    An empty report means the object is valid.
    """
    if kind is None:
        if isinstance(x, DensityMatrix):
            kind = "density"
        elif isinstance(x, Hamiltonian):
            kind = "hamiltonian"
        elif isinstance(x, ProjectorDecomposition):
            kind = "decomposition"
        else:
            raise TypeError("cannot infer what to validate; pass kind=")
    if kind == "density":
        return ValidationReport(kind, tuple(_validate_density(as_matrix(x))))
    if kind == "hamiltonian":
        out: list = []
        m = as_matrix(x)
        if not np.all(np.isfinite(m)):
            out.append(Violation("finite", float("inf"), 0.0))
        else:
            _validate_hermitian(m, out)
        return ValidationReport(kind, tuple(out))
    if kind == "decomposition":
        if not isinstance(x, ProjectorDecomposition):
            x = ProjectorDecomposition(tuple(x))
        return ValidationReport(kind, tuple(_validate_decomposition(x)))
    raise ValueError(f"unknown kind {kind!r}")


def require_valid(x, kind: str | None = None):
    validate(x, kind).raise_if_invalid()
    return x


def hermitian_eig(m) -> tuple[np.ndarray, np.ndarray]:
    """Spectral decomposition of a Hermitian matrix.

    Returns
    -------
    eigenvalues : ndarray
        Real, sorted in descending order.
    eigenvectors : ndarray
        Unitary matrix whose columns match ``eigenvalues``.
    """
    m = as_matrix(m)
    out: list = []
    _validate_hermitian(m, out)
    if out:
        raise ValidationError(f"hermitian_eig: {out[0]}")
    w, v = np.linalg.eigh(hermitize(m))
    return w[::-1].copy(), v[:, ::-1].copy()


def evolve_unitary(h, dt: float) -> np.ndarray:
    """Return ``exp(-i h dt)`` computed through the spectral decomposition."""
    if not np.isfinite(dt):
        raise ValidationError(f"evolve_unitary: non-finite time step {dt!r}")
    m = as_matrix(h)
    if dt == 0.0 or not np.any(m):
        require_valid(Hamiltonian(m))
        return np.eye(m.shape[0], dtype=complex)
    w, v = hermitian_eig(m)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def _spectrum(rho, check: bool) -> np.ndarray:
    m = as_matrix(rho)
    if check:
        validate(m, "density").raise_if_invalid()
    return np.linalg.eigvalsh(hermitize(m))


def von_neumann_entropy(rho, check: bool = True) -> float:
    """``-Tr rho ln rho`` in nats; eigenvalues below ``EPS_EIG`` count as zero."""
    lam = _spectrum(rho, check)
    lam = lam[lam > EPS_EIG]
    s = float(-np.sum(lam * np.log(lam)))
    # roundoff can push a pure or maximally mixed state just outside the range
    return min(max(0.0, s), float(np.log(len(as_matrix(rho)))))


def quadratic_entropy(rho, check: bool = True) -> float:
    """Quadratic entropy ``-Tr rho^2``; lies in ``[-1, -1/dim]``."""
    m = as_matrix(rho)
    if check:
        validate(m, "density").raise_if_invalid()
    m = hermitize(m)
    return -float(np.sum(np.abs(m) ** 2))


def matrix_from_json(obj, where: str = "matrix") -> np.ndarray:
    """Parse ``{"dim": n, "re": [[...]], "im": [[...]]}``; ``im`` may be omitted."""
    if not isinstance(obj, dict):
        raise SchemaError(where, "expected an object with dim/re/im")
    if "dim" not in obj:
        raise SchemaError(f"{where}.dim", "missing")
    dim = obj["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise SchemaError(f"{where}.dim", f"must be a positive integer, got {dim!r}")
    parts = []
    for key in ("re", "im"):
        if key not in obj:
            if key == "im":
                parts.append(np.zeros((dim, dim)))
                continue
            raise SchemaError(f"{where}.{key}", "missing")
        try:
            a = np.array(obj[key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}.{key}", f"not a numeric matrix ({exc})") from None
        if a.shape != (dim, dim):
            raise SchemaError(f"{where}.{key}", f"shape {a.shape} does not match dim {dim}")
        parts.append(a)
    return parts[0] + 1j * parts[1]


def matrix_to_json(m) -> dict:
    m = as_matrix(m)
    return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}
