"""
Spin operators, states and propagators on tensor-product spin spaces.

Units: Hamiltonians are written in ordinary frequency (MHz) and times in µs.
:func:`evolve` supplies the factor 2π, so ``exp(-2πi H t)`` is the propagator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Hashable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True, eq=False)
class SpinOperator:
    """Complex square matrix acting on the ordered sites in ``labels``."""

    matrix: np.ndarray
    labels: tuple = ()
    local_dims: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        if self.local_dims and int(np.prod(self.local_dims)) != m.shape[0]:
            raise ValueError("matrix dimension does not match product of local dimensions")
        if self.labels and self.local_dims and len(self.labels) != len(self.local_dims):
            raise ValueError("one local dimension per label is required")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)

    def __add__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix + other.matrix, self.labels, self.local_dims)

    def __sub__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix - other.matrix, self.labels, self.local_dims)

    def __mul__(self, scalar) -> "SpinOperator":
        return SpinOperator(self.matrix * scalar, self.labels, self.local_dims)

    __rmul__ = __mul__

    def __matmul__(self, other: "SpinOperator") -> "SpinOperator":
        return SpinOperator(self.matrix @ other.matrix, self.labels, self.local_dims)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def check(self, tol: float = HERMITIAN_TOL, positivity_tol: float = 1e-10) -> None:
        """Raise ``ValueError`` unless the matrix is a valid density matrix."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ValueError(f"density matrix trace is {np.trace(m).real:.3e}, expected 1")
        if np.linalg.eigvalsh(m).min() < -positivity_tol:
            raise ValueError("density matrix has negative eigenvalues")

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.matrix, other.matrix))


@dataclass(frozen=True, eq=False)
class Propagator:
    matrix: np.ndarray
    duration: float = 0.0

    def is_unitary(self, tol: float = UNITARY_TOL) -> bool:
        m = self.matrix
        return bool(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0]))) <= tol)

    def apply(self, rho: DensityMatrix) -> DensityMatrix:
        u = self.matrix
        return DensityMatrix(u @ rho.matrix @ u.conj().T)


@lru_cache(maxsize=None)
def _spin_matrices(two_s: int):
    s = two_s / 2
    m = s - np.arange(two_s + 1)  # +s ... -s
    jz = np.diag(m).astype(complex)
    # <m+1|J+|m> = sqrt(s(s+1) - m(m+1))
    jp = np.zeros((two_s + 1, two_s + 1), dtype=complex)
    for k in range(1, two_s + 1):
        jp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / 2j
    for a in (jx, jy, jz):
        a.setflags(write=False)
    return jx, jy, jz


def local_spin_ops(spin_magnitude: float = 0.5):
    """Return ``(Jx, Jy, Jz)`` for a single spin of magnitude 1/2 or 1."""
    two_s = round(2 * spin_magnitude)
    if two_s not in (1, 2) or abs(two_s - 2 * spin_magnitude) > 1e-12:
        raise ValueError(f"unsupported spin magnitude {spin_magnitude!r}; use 1/2 or 1")
    dims = (two_s + 1,)
    return tuple(SpinOperator(a.copy(), (0,), dims) for a in _spin_matrices(two_s))


def embed(op: SpinOperator, site: Hashable, space: Sequence[Hashable],
          local_dims: Sequence[int] | None = None) -> SpinOperator:
    """Lift a single-site operator onto the full ordered ``space``.

    ``local_dims`` defaults to 2 for every site except ``site`` itself, which
    takes the dimension of ``op``.
    """
    space = tuple(space)
    if site not in space:
        raise KeyError(f"site {site!r} is not part of the space {space!r}")
    idx = space.index(site)
    if local_dims is None:
        local_dims = tuple(op.dim if k == idx else 2 for k in range(len(space)))
    local_dims = tuple(local_dims)
    if local_dims[idx] != op.dim:
        raise ValueError("operator dimension does not match the site dimension")
    left = int(np.prod(local_dims[:idx], dtype=int))
    right = int(np.prod(local_dims[idx + 1:], dtype=int))
    full = np.kron(np.kron(np.eye(left), op.matrix), np.eye(right))
    return SpinOperator(full, space, local_dims)


def site_operator(single: np.ndarray, index: int, n_sites: int) -> np.ndarray:
    """Dense ``I ⊗ ... ⊗ single ⊗ ... ⊗ I`` for ``n_sites`` qubits (site 0 leftmost)."""
    return np.kron(np.kron(np.eye(2 ** index), single), np.eye(2 ** (n_sites - index - 1)))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.ones((1, 1), dtype=complex))


def apply_local(ops: Sequence[np.ndarray], mat: np.ndarray) -> np.ndarray:
    """Left-multiply ``mat`` by ``ops[0] ⊗ ops[1] ⊗ ...`` without forming the product."""
    n = len(ops)
    d = mat.shape[0]
    t = mat.reshape((2,) * n + (mat.shape[1],))
    for k, o in enumerate(ops):
        t = np.moveaxis(np.tensordot(o, t, axes=([1], [k])), 0, k)
    return t.reshape(d, -1)


def _as_array(op) -> np.ndarray:
    return op.matrix if isinstance(op, (SpinOperator, DensityMatrix, Propagator)) else np.asarray(op)


def evolve(hamiltonian, t: float, tol: float = 1e-9) -> Propagator:
    """Propagator ``exp(-2πi H t)`` for ``H`` in MHz and ``t`` in µs."""
    h = _as_array(hamiltonian).astype(complex)
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if np.max(np.abs(h - h.conj().T), initial=0.0) > tol * scale:
        raise ValueError("Hamiltonian is not Hermitian")
    h = (h + h.conj().T) / 2
    w, v = np.linalg.eigh(h)
    u = (v * np.exp(-2j * np.pi * w * t)) @ v.conj().T
    return Propagator(u, float(t))


def expectation(rho, op) -> float:
    """``Tr(ρ·op)``; raises if the result is not real for a Hermitian observable."""
    r, o = _as_array(rho), _as_array(op)
    if r.shape != o.shape:
        raise ValueError(f"dimension mismatch: {r.shape} vs {o.shape}")
    val = np.einsum("ij,ji->", r, o)
    if np.allclose(o, o.conj().T, atol=HERMITIAN_TOL) and abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def commutator(a, b) -> np.ndarray:
    a, b = _as_array(a), _as_array(b)
    return a @ b - b @ a
