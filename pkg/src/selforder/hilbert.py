"""Truncated Hilbert spaces and the operator/state algebra built on them.

A composite space is an ordered list of factors, each either a photon Fock
space truncated at a cutoff or a fixed-number bosonic particle sector.
Operators and states carry their space descriptor; storage is dense below
a configurable dimension threshold and sparse (CSR) above it.

Basis conventions (fixed so serialized matrices are comparable):
  * Fock factor: ascending photon number 0, 1, ..., cutoff-1.
  * Particle sector: occupation vectors (n_0, ..., n_{M-1}) with
    sum n_i = N, enumerated in lexicographically descending order, so
    index 0 is all particles in mode 0.
  * Composite basis: Kronecker order of the factor list (first factor
    varies slowest).

Everything here is immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FockSpace",
    "ParticleSector",
    "SpaceDescriptor",
    "Operator",
    "StateVector",
    "DensityMatrix",
    "DENSE_DIM_LIMIT",
    "annihilation",
    "creation",
    "number",
    "identity",
    "transition",
    "tensor",
    "embed",
    "partial_trace",
    "expect",
    "fock_state",
    "coherent_state",
    "sector_basis_state",
    "basis_vector",
]

# Operators switch from dense ndarray to CSR storage above this total
# dimension.  Desk-scale problems straddle the boundary; callers may pass
# an explicit ``dense_limit`` to the constructors instead.
DENSE_DIM_LIMIT = 1024


@dataclass(frozen=True)
class FockSpace:
    """Photon mode truncated to states |0>, ..., |cutoff-1>."""

    cutoff: int

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError(f"Fock cutoff must be >= 1, got {self.cutoff}")

    @property
    def dim(self) -> int:
        return self.cutoff


@dataclass(frozen=True)
class ParticleSector:
    """Bosonic occupation basis with a fixed total particle number."""

    n_modes: int
    n_particles: int

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")

    @property
    def dim(self) -> int:
        return math.comb(self.n_particles + self.n_modes - 1, self.n_particles)

    def occupations(self) -> tuple[tuple[int, ...], ...]:
        """All occupation vectors, lexicographically descending."""
        return _occupations(self.n_modes, self.n_particles)

    def index_of(self, occupation: Sequence[int]) -> int:
        """Basis index of an occupation vector."""
        return _occupation_index(self.n_modes, self.n_particles)[tuple(occupation)]


@lru_cache(maxsize=None)
def _occupations(n_modes: int, n_particles: int) -> tuple[tuple[int, ...], ...]:
    def gen(modes_left, total):
        if modes_left == 1:
            yield (total,)
            return
        for k in range(total, -1, -1):
            for rest in gen(modes_left - 1, total - k):
                yield (k,) + rest

    return tuple(gen(n_modes, n_particles))


@lru_cache(maxsize=None)
def _occupation_index(n_modes: int, n_particles: int) -> dict:
    occs = _occupations(n_modes, n_particles)
    return {occ: idx for idx, occ in enumerate(occs)}


Factor = Union[FockSpace, ParticleSector]


@dataclass(frozen=True)
class SpaceDescriptor:
    """Ordered list of Hilbert-space factors making up a composite space."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("SpaceDescriptor needs at least one factor")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def subspace(self, keep: Sequence[int]) -> "SpaceDescriptor":
        return SpaceDescriptor(tuple(self.factors[k] for k in keep))


def _as_space(space) -> SpaceDescriptor:
    if isinstance(space, SpaceDescriptor):
        return space
    return SpaceDescriptor((space,))


class Operator:
    """Complex linear operator tagged with its space.

    ``data`` is either a dense complex ndarray or a CSR matrix; the two are
    interchangeable and entrywise identical.  Supports +, -, scalar *, @
    (with Operator or StateVector) and dag().
    """

    __slots__ = ("space", "data")

    def __init__(self, space, data, dense_limit: int | None = None):
        space = _as_space(space)
        limit = DENSE_DIM_LIMIT if dense_limit is None else dense_limit
        d = space.total_dim
        if data.shape != (d, d):
            raise ValueError(f"operator shape {data.shape} does not match space dim {d}")
        if sp.issparse(data):
            data = data.tocsr().astype(complex)
            if d <= limit:
                data = data.toarray()
        else:
            data = np.asarray(data, dtype=complex)
            if d > limit:
                data = sp.csr_matrix(data)
        self.space = space
        self.data = data

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    def to_dense(self) -> np.ndarray:
        return self.data.toarray() if self.is_sparse else self.data

    def to_sparse(self) -> sp.csr_matrix:
        return self.data if self.is_sparse else sp.csr_matrix(self.data)

    def dag(self) -> "Operator":
        return Operator(self.space, self.data.conj().T, dense_limit=0 if self.is_sparse else None)

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.space, self.data + other.data)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.space, self.data - other.data)

    def __mul__(self, scalar) -> "Operator":
        if not np.isscalar(scalar):
            return NotImplemented
        return Operator(self.space, self.data * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_same_space(self.space, other.space)
            return Operator(self.space, self.data @ other.data)
        if isinstance(other, StateVector):
            _check_same_space(self.space, other.space)
            out = self.data @ other.amplitudes
            return StateVector(self.space, np.asarray(out).ravel())
        return NotImplemented

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"Operator(dim={self.space.total_dim}, {kind})"


def _check_same_space(a: SpaceDescriptor, b: SpaceDescriptor):
    if a.dims != b.dims:
        raise ValueError(f"space mismatch: dims {a.dims} vs {b.dims}")


class StateVector:
    """Pure state on a composite space."""

    __slots__ = ("space", "amplitudes")

    def __init__(self, space, amplitudes):
        space = _as_space(space)
        amplitudes = np.asarray(amplitudes, dtype=complex).ravel()
        if amplitudes.shape != (space.total_dim,):
            raise ValueError(
                f"state length {amplitudes.shape} does not match space dim {space.total_dim}"
            )
        self.space = space
        self.amplitudes = amplitudes

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n < 1e-300:
            raise ZeroDivisionError("cannot normalize a zero state")
        return StateVector(self.space, self.amplitudes / n)

    def to_density_matrix(self) -> "DensityMatrix":
        psi = self.amplitudes
        return DensityMatrix(self.space, np.outer(psi, psi.conj()))

    def overlap(self, other: "StateVector") -> complex:
        _check_same_space(self.space, other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __repr__(self):
        return f"StateVector(dim={self.space.total_dim}, norm={self.norm():.6g})"


class DensityMatrix:
    """Mixed state on a composite space.

    ``require_physical`` enforces Hermiticity to 1e-10 and unit trace to
    1e-8, the contract every solver output satisfies.
    """

    __slots__ = ("space", "matrix")

    def __init__(self, space, matrix, require_physical: bool = False):
        space = _as_space(space)
        matrix = np.asarray(matrix, dtype=complex)
        d = space.total_dim
        if matrix.shape != (d, d):
            raise ValueError(f"density matrix shape {matrix.shape} does not match dim {d}")
        if require_physical:
            herm_err = np.max(np.abs(matrix - matrix.conj().T))
            if herm_err > 1e-10:
                raise ValueError(f"not Hermitian: max|rho - rho^dag| = {herm_err:.2e}")
            tr_err = abs(np.trace(matrix) - 1.0)
            if tr_err > 1e-8:
                raise ValueError(f"trace deviates from 1 by {tr_err:.2e}")
        self.space = space
        self.matrix = matrix

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermitized(self) -> "DensityMatrix":
        return DensityMatrix(self.space, (self.matrix + self.matrix.conj().T) / 2.0)

    def __repr__(self):
        return f"DensityMatrix(dim={self.space.total_dim}, tr={self.trace():.6g})"


# ---------------------------------------------------------------------------
# elementary operators


def annihilation(cutoff: int) -> Operator:
    """Photon annihilation operator a with <m-1|a|m> = sqrt(m)."""
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    data = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)
    return Operator(FockSpace(cutoff), data)


def creation(cutoff: int) -> Operator:
    return annihilation(cutoff).dag()


def number(cutoff: int) -> Operator:
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    return Operator(FockSpace(cutoff), np.diag(np.arange(cutoff, dtype=complex)))


def identity(space) -> Operator:
    space = _as_space(space)
    return Operator(space, sp.identity(space.total_dim, format="csr", dtype=complex))


def transition(sector: ParticleSector, i: int, j: int) -> Operator:
    """Bosonic one-body operator c_i^dag c_j on a fixed-number sector.

    For i == j this is the mode-i number operator; for i != j the matrix
    element between |..., n_i+1, ..., n_j-1, ...> and |..., n_i, ..., n_j, ...>
    is sqrt((n_i + 1) n_j).
    """
    if not (0 <= i < sector.n_modes) or not (0 <= j < sector.n_modes):
        raise ValueError(f"mode indices ({i},{j}) out of range for {sector.n_modes} modes")
    occs = sector.occupations()
    if i == j:
        diag = np.array([occ[i] for occ in occs], dtype=complex)
        return Operator(sector, np.diag(diag))
    index = _occupation_index(sector.n_modes, sector.n_particles)
    rows, cols, vals = [], [], []
    for col, occ in enumerate(occs):
        nj = occ[j]
        if nj == 0:
            continue
        target = list(occ)
        target[i] += 1
        target[j] -= 1
        row = index[tuple(target)]
        rows.append(row)
        cols.append(col)
        vals.append(math.sqrt((occ[i] + 1) * nj))
    data = sp.csr_matrix((vals, (rows, cols)), shape=(sector.dim, sector.dim), dtype=complex)
    return Operator(sector, data)


def tensor(operators: Sequence[Operator]) -> Operator:
    """Kronecker product of one operator per factor, in factor order."""
    if not operators:
        raise ValueError("tensor() needs at least one operator")
    factors = []
    for op in operators:
        factors.extend(op.space.factors)
    space = SpaceDescriptor(tuple(factors))
    use_sparse = space.total_dim > DENSE_DIM_LIMIT or any(op.is_sparse for op in operators)
    if use_sparse:
        out = operators[0].to_sparse()
        for op in operators[1:]:
            out = sp.kron(out, op.to_sparse(), format="csr")
    else:
        out = operators[0].to_dense()
        for op in operators[1:]:
            out = np.kron(out, op.to_dense())
    return Operator(space, out)


def embed(space, factor_index: int, op: Operator) -> Operator:
    """Embed a single-factor operator into a composite space with identities."""
    space = _as_space(space)
    if not (0 <= factor_index < len(space.factors)):
        raise ValueError(f"factor index {factor_index} out of range")
    target = space.factors[factor_index]
    if op.space.total_dim != target.dim:
        raise ValueError(
            f"operator dim {op.space.total_dim} does not match factor dim {target.dim}"
        )
    ops = []
    for k, f in enumerate(space.factors):
        if k == factor_index:
            ops.append(Operator(SpaceDescriptor((f,)), op.data, dense_limit=None))
        else:
            ops.append(identity(SpaceDescriptor((f,))))
    out = tensor(ops)
    return Operator(space, out.data)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Trace out all factors not listed in ``keep`` (original order kept)."""
    keep = sorted(set(keep))
    nfac = len(rho.space.factors)
    if not keep:
        raise ValueError("keep set must be non-empty")
    if any(k < 0 or k >= nfac for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {nfac} factors")
    dims = rho.space.dims
    tensor_form = rho.matrix.reshape(dims + dims)
    # contract bra and ket indices of every traced factor
    traced = [k for k in range(nfac) if k not in keep]
    for offset, k in enumerate(traced):
        ax = k - offset  # axes shift as factors are consumed
        nleft = tensor_form.ndim // 2
        tensor_form = np.trace(tensor_form, axis1=ax, axis2=nleft + ax)
    sub = rho.space.subspace(keep)
    d = sub.total_dim
    return DensityMatrix(sub, tensor_form.reshape(d, d))


def expect(op: Operator, state) -> complex:
    """<psi|op|psi> for a StateVector, tr(op rho) for a DensityMatrix."""
    if isinstance(state, StateVector):
        _check_same_space(op.space, state.space)
        return complex(np.vdot(state.amplitudes, op.data @ state.amplitudes))
    if isinstance(state, DensityMatrix):
        _check_same_space(op.space, state.space)
        if op.is_sparse:
            return complex(op.data.multiply(state.matrix.T).sum())
        return complex(np.sum(op.data * state.matrix.T))
    raise TypeError(f"unsupported state type {type(state)}")


# ---------------------------------------------------------------------------
# state constructors


def basis_vector(space, index: int) -> StateVector:
    space = _as_space(space)
    amp = np.zeros(space.total_dim, dtype=complex)
    amp[index] = 1.0
    return StateVector(space, amp)


def fock_state(cutoff: int, m: int) -> StateVector:
    if not (0 <= m < cutoff):
        raise ValueError(f"photon number {m} outside cutoff {cutoff}")
    return basis_vector(FockSpace(cutoff), m)


def coherent_state(cutoff: int, alpha: complex) -> StateVector:
    """Truncated coherent state, exp(-|a|^2/2) a^m / sqrt(m!)."""
    m = np.arange(cutoff)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, cutoff)))))
    if alpha == 0:
        amps = np.zeros(cutoff, dtype=complex)
        amps[0] = 1.0
    else:
        amps = np.exp(-0.5 * abs(alpha) ** 2 + m * np.log(complex(alpha)) - 0.5 * log_fact)
    return StateVector(FockSpace(cutoff), amps)


def sector_basis_state(sector: ParticleSector, occupation: Sequence[int]) -> StateVector:
    occupation = tuple(occupation)
    if len(occupation) != sector.n_modes or sum(occupation) != sector.n_particles:
        raise ValueError(f"occupation {occupation} invalid for {sector}")
    return basis_vector(sector, sector.index_of(occupation))
