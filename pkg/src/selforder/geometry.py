"""Trap eigenfunctions, trap energies and cavity-trap coupling matrices.

Units: hbar = 1, the reference cavity decay rate kappa is the unit of rate,
and the cavity half-length L = 1 is the unit of length.  The cavity spans
[-L, L] and mode n has the profile u_n(x) = sin(k_n (x + L)) with
k_n = n pi / (2 L), vanishing at both mirrors.

Two trap kinds are supported:

  * box: hard walls at x0 +/- a, eigenfunctions
    Psi_i(x) = sin(K_i (x - x0 + a)) / sqrt(a) with K_i = pi (i+1) / (2 a),
    energies E_i = omega_rec (i+1)^2 where omega_rec is the ground-state
    energy scale supplied in the model parameters (the particle mass never
    appears explicitly).
  * harmonic: Hermite-Gaussian eigenfunctions about x0 with oscillator
    length ``length``, energies omega_t (i + 1/2).

The coupling matrices per cavity mode n,

    A^n_ij = integral Psi_i Psi_j sin^2(k_n (x+L)) dx
    B^n_ij = integral Psi_i Psi_j sin(k_n (x+L)) dx

are evaluated by panel-wise Gauss-Legendre quadrature with panels split at
every node of the fastest-oscillating factor and validated by panel
doubling.  Entries below 1e-12 are stored as exact zeros so reachability
graphs are platform-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TrapGeometry",
    "CouplingMatrices",
    "QuadratureError",
    "cavity_wavenumber",
    "cavity_mode",
    "trap_eigenfunction",
    "trap_energy",
    "coupling_quadrature",
    "coupling_matrices",
    "coupling_closed_form_box",
    "validate_closed_form_convention",
    "reachable_modes",
    "ZERO_CLIP",
]

L = 1.0
ZERO_CLIP = 1e-12
QUAD_TOL = 1e-10
GAUSS_ORDER = 16
MAX_PANEL_DOUBLINGS = 10


class QuadratureError(RuntimeError):
    """Panel refinement failed to converge to the requested tolerance."""


@dataclass(frozen=True)
class TrapGeometry:
    """External trap along the cavity axis.

    kind="box": half_width a (0 < a <= L, |center| + a <= L).
    kind="harmonic": omega_t > 0 (energy spacing, units kappa) and
    length > 0 (ground-state oscillator length, units L).
    """

    kind: str
    half_width: float = 0.0
    omega_t: float = 0.0
    length: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if self.kind == "box":
            if not (0.0 < self.half_width <= L):
                raise ValueError(f"box half_width must be in (0, L], got {self.half_width}")
            if abs(self.center) + self.half_width > L + 1e-15:
                raise ValueError("box must fit inside the cavity: |center| + a <= L")
        elif self.kind == "harmonic":
            if self.omega_t <= 0.0:
                raise ValueError(f"harmonic omega_t must be > 0, got {self.omega_t}")
            if self.length <= 0.0:
                raise ValueError(f"harmonic length must be > 0, got {self.length}")
        else:
            raise ValueError(f"unknown trap kind {self.kind!r}")

    @staticmethod
    def box(half_width: float, center: float = 0.0) -> "TrapGeometry":
        return TrapGeometry(kind="box", half_width=half_width, center=center)

    @staticmethod
    def harmonic(omega_t: float, length: float, center: float = 0.0) -> "TrapGeometry":
        return TrapGeometry(kind="harmonic", omega_t=omega_t, length=length, center=center)


def cavity_wavenumber(n: int) -> float:
    if n < 1:
        raise ValueError(f"cavity mode index must be >= 1, got {n}")
    return n * np.pi / (2.0 * L)


def cavity_mode(n: int, x) -> np.ndarray:
    """Mode profile u_n(x) = sin(k_n (x + L)); zero at both mirrors."""
    k = cavity_wavenumber(n)
    return np.sin(k * (np.asarray(x, dtype=float) + L))


def _hermite_functions(n_max: int, u: np.ndarray) -> np.ndarray:
    """Normalized Hermite functions h_0..h_{n_max-1} on the grid u.

    Stable two-term recurrence
    h_{i+1} = sqrt(2/(i+1)) u h_i - sqrt(i/(i+1)) h_{i-1}.
    """
    out = np.empty((n_max, u.size))
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * u**2)
    if n_max > 1:
        out[1] = np.sqrt(2.0) * u * out[0]
    for i in range(1, n_max - 1):
        out[i + 1] = np.sqrt(2.0 / (i + 1)) * u * out[i] - np.sqrt(i / (i + 1)) * out[i - 1]
    return out


def trap_eigenfunction(trap: TrapGeometry, i: int, x) -> np.ndarray:
    """L2-normalized i-th trap eigenfunction, i = 0 is the ground state."""
    if i < 0:
        raise ValueError(f"eigenfunction index must be >= 0, got {i}")
    x = np.asarray(x, dtype=float)
    if trap.kind == "box":
        a, x0 = trap.half_width, trap.center
        K = np.pi * (i + 1) / (2.0 * a)
        inside = np.abs(x - x0) <= a
        vals = np.where(inside, np.sin(K * (x - x0 + a)) / np.sqrt(a), 0.0)
        return vals
    u = (x - trap.center) / trap.length
    h = _hermite_functions(i + 1, np.atleast_1d(u))
    vals = h[i] / np.sqrt(trap.length)
    return vals.reshape(np.shape(u))


def trap_energy(trap: TrapGeometry, i: int, omega_rec: float) -> float:
    """Trap eigenenergy in units of kappa.

    Box: omega_rec (i+1)^2 with omega_rec the ground-state energy scale.
    Harmonic: omega_t (i + 1/2); omega_rec is ignored.
    """
    if i < 0:
        raise ValueError(f"index must be >= 0, got {i}")
    if trap.kind == "box":
        if omega_rec <= 0.0:
            raise ValueError(f"omega_rec must be > 0, got {omega_rec}")
        return omega_rec * (i + 1) ** 2
    return trap.omega_t * (i + 0.5)


def trap_energies(trap: TrapGeometry, n_modes: int, omega_rec: float) -> np.ndarray:
    return np.array([trap_energy(trap, i, omega_rec) for i in range(n_modes)])


# ---------------------------------------------------------------------------
# quadrature


def _support(trap: TrapGeometry, n_modes_trap: int) -> tuple[float, float]:
    """Integration interval covering the trap eigenfunctions."""
    if trap.kind == "box":
        return trap.center - trap.half_width, trap.center + trap.half_width
    # classical turning point of the highest mode plus 8 oscillator lengths
    # of padding; clipped to the cavity (Gaussian tails beyond are negligible)
    reach = trap.length * (np.sqrt(2.0 * n_modes_trap + 1.0) + 8.0)
    return max(trap.center - reach, -L), min(trap.center + reach, L)


def _oscillation_scale(trap: TrapGeometry, n_modes_trap: int) -> float:
    """Shortest half-period of the trap eigenfunctions in the panel set."""
    if trap.kind == "box":
        k_max = np.pi * n_modes_trap / (2.0 * trap.half_width)
    else:
        k_max = np.sqrt(2.0 * n_modes_trap + 1.0) / trap.length
    return np.pi / k_max


def _panels(lo: float, hi: float, max_width: float, refine: int = 1) -> np.ndarray:
    n = max(1, int(np.ceil((hi - lo) / max_width))) * refine
    return np.linspace(lo, hi, n + 1)


def _gauss_panels(f, edges: np.ndarray) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    lo = edges[:-1]
    half = 0.5 * (edges[1:] - lo)
    mid = lo + half
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return float(np.dot(w, f(x)))


def _panel_integral(f, lo: float, hi: float, max_width: float) -> float:
    """Gauss-Legendre over panels, Richardson-checked by panel doubling."""
    prev = None
    for doubling in range(MAX_PANEL_DOUBLINGS + 1):
        val = _gauss_panels(f, _panels(lo, hi, max_width, refine=2**doubling))
        if prev is not None and abs(val - prev) <= QUAD_TOL:
            return val
        prev = val
    raise QuadratureError(
        f"panel integral did not converge to {QUAD_TOL:g} after "
        f"{MAX_PANEL_DOUBLINGS} doublings on [{lo:g}, {hi:g}]"
    )


def coupling_quadrature(
    trap: TrapGeometry, n: int, n_modes_trap: int, panel_refine: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """A^n and B^n for one cavity mode by panel Gauss-Legendre quadrature.

    ``panel_refine`` multiplies the base panel count (used by the
    self-convergence test).  Entries with |value| < 1e-12 come back as
    exact zeros.
    """
    if n < 1:
        raise ValueError(f"cavity mode index must be >= 1, got {n}")
    if n_modes_trap < 1:
        raise ValueError(f"n_modes_trap must be >= 1, got {n_modes_trap}")
    lo, hi = _support(trap, n_modes_trap)
    k = cavity_wavenumber(n)
    trap_scale = _oscillation_scale(trap, n_modes_trap)
    # fastest-oscillating factor sets the panel width: the mode itself
    # (period pi/k for B, pi/(2k) for A) or the highest trap eigenfunction
    width_B = min(np.pi / k, trap_scale) / panel_refine
    width_A = min(np.pi / (2.0 * k), trap_scale) / panel_refine

    psis = {}

    def psi(i):
        if i not in psis:
            psis[i] = lambda x, i=i: trap_eigenfunction(trap, i, x)
        return psis[i]

    A = np.zeros((n_modes_trap, n_modes_trap))
    B = np.zeros((n_modes_trap, n_modes_trap))
    for i in range(n_modes_trap):
        for j in range(i, n_modes_trap):
            fij = lambda x: psi(i)(x) * psi(j)(x)
            mode = lambda x: cavity_mode(n, x)
            A[i, j] = A[j, i] = _panel_integral(
                lambda x: fij(x) * mode(x) ** 2, lo, hi, width_A
            )
            B[i, j] = B[j, i] = _panel_integral(
                lambda x: fij(x) * mode(x), lo, hi, width_B
            )
    A[np.abs(A) < ZERO_CLIP] = 0.0
    B[np.abs(B) < ZERO_CLIP] = 0.0
    return A, B


@dataclass(frozen=True)
class CouplingMatrices:
    """Per-cavity-mode coupling matrices and trap energies.

    ``trap_modes`` lists the global trap eigenfunction index of every
    matrix row/column, so a restricted basis keeps track of which
    eigenfunctions it represents.
    """

    modes: tuple[int, ...]
    A: dict
    B: dict
    E: np.ndarray
    trap_modes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "trap_modes", tuple(self.trap_modes))
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float))
        m = len(self.trap_modes)
        for n in self.modes:
            for name, mat in (("A", self.A[n]), ("B", self.B[n])):
                if mat.shape != (m, m):
                    raise ValueError(f"{name}^{n} shape {mat.shape} != ({m},{m})")
                if np.max(np.abs(mat - mat.T)) > 1e-12:
                    raise ValueError(f"{name}^{n} is not symmetric")
            diag = np.diag(self.A[n])
            if np.any(diag < -1e-9) or np.any(diag > 1.0 + 1e-9):
                raise ValueError(f"A^{n} diagonal outside [0, 1]")
            if np.max(np.abs(self.B[n])) > 1.0 + 1e-9:
                raise ValueError(f"B^{n} has entries above 1 in magnitude")
        if self.E.shape != (m,):
            raise ValueError("E length does not match matrix dimension")
        if m > 1 and np.any(np.diff(self.E) <= 0.0):
            raise ValueError("trap energies must be strictly increasing")

    @property
    def n_modes_trap(self) -> int:
        return len(self.trap_modes)

    def restrict(self, indices: Sequence[int]) -> "CouplingMatrices":
        """Slice down to a subset of trap modes (positions in trap_modes)."""
        idx = sorted(set(indices))
        if not idx:
            raise ValueError("cannot restrict to an empty mode set")
        sel = np.asarray(idx, dtype=int)
        return CouplingMatrices(
            modes=self.modes,
            A={n: self.A[n][np.ix_(sel, sel)] for n in self.modes},
            B={n: self.B[n][np.ix_(sel, sel)] for n in self.modes},
            E=self.E[sel],
            trap_modes=tuple(self.trap_modes[k] for k in idx),
        )


def coupling_matrices(
    trap: TrapGeometry,
    cavity_modes: Iterable[int],
    n_modes_trap: int,
    omega_rec: float,
) -> CouplingMatrices:
    """Quadrature coupling matrices for a set of pumped cavity modes."""
    modes = tuple(cavity_modes)
    A, B = {}, {}
    for n in modes:
        A[n], B[n] = coupling_quadrature(trap, n, n_modes_trap)
    E = trap_energies(trap, n_modes_trap, omega_rec)
    return CouplingMatrices(modes=modes, A=A, B=B, E=E, trap_modes=tuple(range(n_modes_trap)))


# ---------------------------------------------------------------------------
# closed forms for the centered box


def _sinc(z):
    """sin(z)/z with the removable singularity at 0."""
    return np.sinc(np.asarray(z) / np.pi)


def _f_cos(m, n, a):
    return _sinc(np.pi / 2.0 * (m + 2.0 * a / L * n)) * np.cos(np.pi / 2.0 * m)


def _f_sin(m, n, a):
    return _sinc(np.pi / 2.0 * (m + a / L * n)) * np.sin(np.pi / 2.0 * (m + n))


def coupling_closed_form_box(
    a: float, n: int, i: int, j: int, convention: str = "shifted-by-one"
) -> tuple[float, float]:
    """(A^n_ij, B^n_ij) for a box centered at x0 = 0, in closed form.

    The harmonic-product integrals reduce to sums of sinc terms.  The index
    convention inside the sinc arguments is ambiguous between using the
    0-based labels directly ("as-printed") and the 1-based quantum numbers
    I = i+1, J = j+1 ("shifted-by-one"); validate_closed_form_convention()
    picks the one that matches quadrature.
    """
    if convention == "as-printed":
        I, J = i, j
    elif convention == "shifted-by-one":
        I, J = i + 1, j + 1
    else:
        raise ValueError(f"unknown convention {convention!r}")
    delta = 1.0 if i == j else 0.0
    sgn = -1.0 if n % 2 else 1.0
    A = 0.5 * delta + sgn / 4.0 * (
        _f_cos(I + J, n, a)
        + _f_cos(I + J, -n, a)
        - _f_cos(I - J, n, a)
        - _f_cos(I - J, -n, a)
    )
    B = 0.5 * (
        -_f_sin(I + J, n, a)
        + _f_sin(J - I, n, a)
        + _f_sin(I - J, n, a)
        + _f_sin(I + J, -n, a)
    )
    return float(A), float(B)


def validate_closed_form_convention(
    a: float = 0.25,
    cavity_modes: Sequence[int] = (11, 19),
    n_modes_trap: int = 8,
    tol: float = 1e-8,
) -> dict:
    """Compare both closed-form conventions against quadrature.

    Returns a verdict dict with the matching convention (or None) and the
    maximum deviation of each candidate.  Quadrature is ground truth.
    """
    trap = TrapGeometry.box(a, center=0.0)
    errs = {"as-printed": 0.0, "shifted-by-one": 0.0}
    for n in cavity_modes:
        Aq, Bq = coupling_quadrature(trap, n, n_modes_trap)
        for conv in errs:
            for i in range(n_modes_trap):
                for j in range(n_modes_trap):
                    Ac, Bc = coupling_closed_form_box(a, n, i, j, convention=conv)
                    errs[conv] = max(errs[conv], abs(Ac - Aq[i, j]), abs(Bc - Bq[i, j]))
    matching = [conv for conv, err in errs.items() if err <= tol]
    return {
        "matching_convention": matching[0] if matching else None,
        "max_error": errs,
        "tolerance": tol,
        "conforming": bool(matching),
    }


# ---------------------------------------------------------------------------
# reachability


def reachable_modes(
    coupling: CouplingMatrices, tol: float, max_modes: int | None = None
) -> list[int]:
    """Trap modes reachable from the ground mode through A/B couplings.

    Breadth-first closure from mode 0 over the graph with an edge (i, j)
    whenever |A^n_ij| > tol or |B^n_ij| > tol for any pumped n, truncated
    to the ``max_modes`` lowest-energy reachable modes.  Returns positions
    into ``coupling.trap_modes`` in ascending (energy) order.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    m = coupling.n_modes_trap
    adj = np.zeros((m, m), dtype=bool)
    for n in coupling.modes:
        adj |= np.abs(coupling.A[n]) > tol
        adj |= np.abs(coupling.B[n]) > tol
    np.fill_diagonal(adj, False)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for j in np.nonzero(adj[i])[0]:
                if j not in seen:
                    seen.add(int(j))
                    nxt.append(int(j))
        frontier = nxt
    ordered = sorted(seen)  # E is strictly increasing, so index order = energy order
    if max_modes is not None:
        ordered = ordered[:max_modes]
    return ordered
