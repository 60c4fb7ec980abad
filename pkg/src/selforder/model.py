"""Coupled particle-field model: Hamiltonian, dissipators, Liouvillian.

In the frame rotating at the pump frequencies the Hamiltonian reads

    H = - sum_n Delta_c^n a_n^dag a_n
        + sum_i E_i c_i^dag c_i
        + sum_nij U_0^n A^n_ij c_i^dag c_j a_n^dag a_n
        + sum_nij eta_n B^n_ij c_i^dag c_j (a_n^dag + a_n)

on ParticleSector (x) Fock_1 (x) ... (x) Fock_Np, with red detuning meaning
Delta_c^n < 0.  Photon loss enters through one jump operator per mode,
J_n = sqrt(2 kappa_n) a_n, so that the photon number decays at rate
2 kappa_n and the standard Lindblad form reproduces

    drho/dt = -i [H, rho] + sum_n kappa_n (2 a_n rho a_n^dag
              - rho a_n^dag a_n - a_n^dag a_n rho).

All rates are in units of the reference decay rate kappa.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .geometry import CouplingMatrices, TrapGeometry
from .hilbert import (
    DensityMatrix,
    FockSpace,
    Operator,
    ParticleSector,
    SpaceDescriptor,
    StateVector,
    annihilation,
    basis_vector,
    embed,
    identity,
    transition,
)

__all__ = [
    "ModeParams",
    "ModelParams",
    "build_space",
    "ground_vacuum_state",
    "build_hamiltonian",
    "build_jump_operators",
    "liouvillian_apply",
    "vectorized_liouvillian",
    "symmetry_operator",
    "mode_operator",
    "one_body_operator",
]

# Building the dense superoperator above this Hilbert-space dimension is
# refused; use the integration-based steady-state solver instead.
SUPEROP_DIM_LIMIT = 400


@dataclass(frozen=True)
class ModeParams:
    """Physical parameters of one pumped cavity mode (rates in kappa)."""

    n: int
    kappa: float = 1.0
    delta_c: float = 0.0
    u0: float = 0.0
    eta: float = 0.0
    fock_cutoff: int = 8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"cavity index must be >= 1, got {self.n}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.fock_cutoff < 2:
            raise ValueError(f"fock_cutoff must be >= 2, got {self.fock_cutoff}")


@dataclass(frozen=True)
class ModelParams:
    """Full model: pumped modes, trap, particle number, truncations."""

    modes: tuple[ModeParams, ...]
    trap: TrapGeometry
    n_particles: int = 1
    n_modes_trap: int = 2
    omega_rec: float = 0.125

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ValueError("at least one cavity mode is required")
        ns = [m.n for m in self.modes]
        if len(set(ns)) != len(ns):
            raise ValueError(f"pumped cavity indices must be distinct, got {ns}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")
        if self.n_modes_trap < 1:
            raise ValueError(f"n_modes_trap must be >= 1, got {self.n_modes_trap}")
        if any(m.eta > 0.0 for m in self.modes) and self.n_modes_trap < 2:
            raise ValueError("n_modes_trap must be >= 2 when any mode is pumped")

    @property
    def cavity_indices(self) -> tuple[int, ...]:
        return tuple(m.n for m in self.modes)

    def with_fock_cutoffs(self, cutoffs: Sequence[int]) -> "ModelParams":
        modes = tuple(replace(m, fock_cutoff=int(c)) for m, c in zip(self.modes, cutoffs))
        return replace(self, modes=modes)


def build_space(params: ModelParams) -> SpaceDescriptor:
    """ParticleSector (x) one Fock factor per pumped mode, in mode order."""
    factors = [ParticleSector(params.n_modes_trap, params.n_particles)]
    factors.extend(FockSpace(m.fock_cutoff) for m in params.modes)
    return SpaceDescriptor(tuple(factors))


def ground_vacuum_state(params: ModelParams) -> StateVector:
    """All particles in the trap ground mode, every cavity mode empty."""
    space = build_space(params)
    return basis_vector(space, 0)  # descending occupations put (N,0,...) first


def one_body_operator(sector: ParticleSector, matrix: np.ndarray) -> sp.csr_matrix:
    """sum_ij M_ij c_i^dag c_j as a sparse matrix on the sector."""
    m = sector.n_modes
    out = sp.csr_matrix((sector.dim, sector.dim), dtype=complex)
    for i in range(m):
        for j in range(m):
            if matrix[i, j] != 0.0:
                out = out + matrix[i, j] * transition(sector, i, j).to_sparse()
    return out.tocsr()


def mode_operator(params: ModelParams, mode_pos: int, op: Operator) -> Operator:
    """Embed a single-mode Fock operator at the given mode position."""
    space = build_space(params)
    return embed(space, 1 + mode_pos, op)


def _coupling_for(params: ModelParams, coupling: CouplingMatrices):
    if coupling.n_modes_trap != params.n_modes_trap:
        raise ValueError(
            f"coupling matrices have {coupling.n_modes_trap} trap modes, "
            f"model wants {params.n_modes_trap}"
        )
    for m in params.modes:
        if m.n not in coupling.A or m.n not in coupling.B:
            raise ValueError(f"coupling matrices missing pumped cavity mode n={m.n}")


def build_hamiltonian(params: ModelParams, coupling: CouplingMatrices) -> Operator:
    """Assemble the rotating-frame Hamiltonian on the composite space."""
    _coupling_for(params, coupling)
    space = build_space(params)
    sector = space.factors[0]
    dims = space.dims

    def embed_pair(part_mat, mode_pos, fock_mat):
        """part (x) I ... (x) fock at mode_pos (x) ... I, all sparse."""
        out = sp.csr_matrix(part_mat)
        for k, m in enumerate(params.modes):
            blk = fock_mat if k == mode_pos else sp.identity(dims[1 + k], format="csr")
            out = sp.kron(out, blk, format="csr")
        return out

    I_part = sp.identity(sector.dim, format="csr", dtype=complex)
    H = sp.csr_matrix((space.total_dim, space.total_dim), dtype=complex)

    # trap energies
    E_mat = one_body_operator(sector, np.diag(coupling.E).astype(complex))
    H = H + embed_pair(E_mat, -1, None)

    for k, m in enumerate(params.modes):
        a = annihilation(m.fock_cutoff).to_sparse()
        n_ph = (a.conj().T @ a).tocsr()
        x_ph = (a.conj().T + a).tocsr()
        H = H + embed_pair(-m.delta_c * I_part, k, n_ph)
        if m.u0 != 0.0:
            TA = one_body_operator(sector, coupling.A[m.n].astype(complex))
            H = H + embed_pair(m.u0 * TA, k, n_ph)
        if m.eta != 0.0:
            TB = one_body_operator(sector, coupling.B[m.n].astype(complex))
            H = H + embed_pair(m.eta * TB, k, x_ph)
    return Operator(space, H.tocsr())


def build_jump_operators(params: ModelParams) -> list[Operator]:
    """One jump operator per mode, J_n = sqrt(2 kappa_n) a_n, embedded."""
    out = []
    for k, m in enumerate(params.modes):
        a = annihilation(m.fock_cutoff)
        out.append(mode_operator(params, k, np.sqrt(2.0 * m.kappa) * a))
    return out


def liouvillian_apply(
    H: Operator, jumps: Sequence[Operator], rho: DensityMatrix
) -> DensityMatrix:
    """-i[H, rho] + sum_n (J rho J^dag - (1/2){J^dag J, rho})."""
    if H.space.dims != rho.space.dims:
        raise ValueError("Hamiltonian and state live on different spaces")
    Hd = H.data
    r = rho.matrix
    out = -1j * (Hd @ r - r @ Hd)
    for J in jumps:
        if J.space.dims != rho.space.dims:
            raise ValueError("jump operator and state live on different spaces")
        Jd = J.data
        JdJ = Jd.conj().T @ Jd
        out = out + Jd @ r @ Jd.conj().T - 0.5 * (JdJ @ r + r @ JdJ)
    return DensityMatrix(rho.space, np.asarray(out))


def vectorized_liouvillian(
    H: Operator, jumps: Sequence[Operator], dim_limit: int | None = None
) -> sp.csr_matrix:
    """Superoperator matrix L with L vec(rho) = vec(liouvillian_apply(rho)).

    Column-major vectorization: vec(rho)[i + d*j] = rho[i, j], so
    vec(X rho Y) = (Y^T kron X) vec(rho).
    """
    d = H.space.total_dim
    limit = SUPEROP_DIM_LIMIT if dim_limit is None else dim_limit
    if d > limit:
        raise MemoryError(
            f"Hilbert dimension {d} exceeds the superoperator limit {limit}; "
            "use the integration-based steady-state solver"
        )
    I = sp.identity(d, format="csr", dtype=complex)
    Hs = H.to_sparse()
    L = -1j * (sp.kron(I, Hs) - sp.kron(Hs.T, I))
    for J in jumps:
        Js = J.to_sparse()
        JdJ = (Js.conj().T @ Js).tocsr()
        L = L + sp.kron(Js.conj(), Js) - 0.5 * sp.kron(I, JdJ) - 0.5 * sp.kron(JdJ.T, I)
    return L.tocsr()


@dataclass(frozen=True)
class LindbladModel:
    """Assembled open system: Hamiltonian plus jump operators.

    Carries the source parameters and coupling matrices so downstream code
    (observables, serialization) can map trap-mode indices back to
    eigenfunctions.
    """

    params: ModelParams
    coupling: CouplingMatrices
    space: SpaceDescriptor
    H: Operator
    jumps: tuple[Operator, ...]

    @staticmethod
    def build(params: ModelParams, coupling: CouplingMatrices) -> "LindbladModel":
        return LindbladModel(
            params=params,
            coupling=coupling,
            space=build_space(params),
            H=build_hamiltonian(params, coupling),
            jumps=tuple(build_jump_operators(params)),
        )

    def ground_vacuum(self) -> StateVector:
        return ground_vacuum_state(self.params)


def symmetry_operator(params: ModelParams, coupling: CouplingMatrices) -> Operator:
    """Z2 symmetry: particle parity times photon parity on odd-profile modes.

    The particle factor picks up (-1)^(sum_i i n_i) (trap eigenfunctions
    have parity (-1)^i about the trap center); a mode's Fock factor picks
    up photon parity (-1)^(a^dag a) exactly when its restricted profile
    u_n is odd about the trap center, which is when sign flips of a_n can
    be absorbed by the particle reflection.  For a trap centered on a node
    of every pumped mode this flips all field amplitudes.
    """
    space = build_space(params)
    sector = space.factors[0]
    part_signs = np.array(
        [(-1) ** (sum(k * n for k, n in enumerate(occ))) for occ in sector.occupations()],
        dtype=complex,
    )
    mats = [sp.diags(part_signs, format="csr")]
    for m in params.modes:
        if _restricted_profile_is_odd(params.trap, m.n):
            signs = (-1.0) ** np.arange(m.fock_cutoff)
            mats.append(sp.diags(signs.astype(complex), format="csr"))
        else:
            mats.append(sp.identity(m.fock_cutoff, format="csr", dtype=complex))
    out = mats[0]
    for blk in mats[1:]:
        out = sp.kron(out, blk, format="csr")
    return Operator(space, out)


def _restricted_profile_is_odd(trap: TrapGeometry, n: int, samples: int = 64) -> bool:
    """Is u_n odd about the trap center (node-aligned geometry)?"""
    from .geometry import cavity_mode

    if trap.kind == "box":
        probe = trap.half_width
    else:
        probe = 3.0 * trap.length
    xs = trap.center + np.linspace(1e-3, probe, samples)
    left = cavity_mode(n, 2.0 * trap.center - xs)
    right = cavity_mode(n, xs)
    odd = np.max(np.abs(left + right))
    even = np.max(np.abs(left - right))
    return odd < 1e-9 and even > 1e-9
