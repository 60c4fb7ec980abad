"""Time evolution, steady states and Monte Carlo wave-function unfolding.

Master-equation evolution uses an adaptive embedded Runge-Kutta pair
(scipy's RK45) on the Liouvillian right-hand side.  Steady states come
either from long-time integration with an observable-drift stopping rule
or directly as the null vector of the vectorized Liouvillian via shifted
sparse-LU inverse iteration.

The trajectory unfolding integrates the non-Hermitian Schroedinger
equation d psi/dt = -i (H - i/2 sum_n J_n^dag J_n) psi without
renormalization; when the squared norm crosses a uniform random threshold
the crossing time is located by bisection on the integrator's dense
output, a decay channel is drawn with probability proportional to
<psi|J_n^dag J_n|psi>, and the state is projected and renormalized.
Trajectories are reproducible: the RNG is a counter-based Philox generator
keyed by (global seed, trajectory index), and ensemble reductions run in
fixed trajectory-index order.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45, solve_ivp
from scipy.sparse.linalg import splu

from .hilbert import DensityMatrix, Operator, StateVector, partial_trace
from .model import LindbladModel, vectorized_liouvillian

__all__ = [
    "SolverOptions",
    "TrajectoryRecord",
    "EnsembleResult",
    "ConvergenceReport",
    "NumericalFailure",
    "SteadyStateTimeout",
    "MultiplicityWarning",
    "evolve_master",
    "steady_state_integrate",
    "steady_state_direct",
    "mcwf_trajectory",
    "mcwf_ensemble",
    "trace_distance",
    "fock_tail_populations",
]


class NumericalFailure(RuntimeError):
    """Integration or linear algebra failed beyond recovery."""


class SteadyStateTimeout(RuntimeError):
    """Steady-state integration hit t_max; carries the last drift value."""

    def __init__(self, message, drift):
        super().__init__(message)
        self.drift = drift


class MultiplicityWarning(UserWarning):
    """The direct solver found evidence of a degenerate steady state."""


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs shared by the solvers (all tolerances > 0)."""

    rtol: float = 1e-6
    atol: float = 1e-8
    max_step: float = np.inf
    steady_tol: float = 1e-5
    steady_window: float = 5.0
    steady_t_max: float = 2000.0
    jump_tol: float = 1e-9
    seed: int = 0
    n_trajectories: int = 1
    # a run is flagged non-converged when any mode's top-two Fock
    # populations exceed this
    fock_tail_threshold: float = 1e-6

    def __post_init__(self):
        for name in ("rtol", "atol", "steady_tol", "steady_window", "steady_t_max", "jump_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")


@dataclass
class ConvergenceReport:
    converged: bool
    t_final: float | None
    drift: float | None
    windows: int = 0
    residual: float | None = None
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "t_final": self.t_final,
            "drift": self.drift,
            "windows": self.windows,
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


@dataclass
class TrajectoryRecord:
    """One quantum trajectory: sampled observables and the jump log."""

    sample_times: np.ndarray
    series: dict
    jumps: list  # (time, channel) with strictly increasing times
    seed: int
    traj_index: int
    final_state: StateVector
    states: list | None = None


@dataclass
class EnsembleResult:
    sample_times: np.ndarray
    mean: dict
    stderr: dict
    n_trajectories: int
    jump_records: list
    final_states: list | None = None


# ---------------------------------------------------------------------------
# master equation


def _rhs_operators(system: LindbladModel):
    H = system.H.to_sparse()
    Js = [J.to_sparse() for J in system.jumps]
    Jdags = [J.conj().T.tocsr() for J in Js]
    JdJs = [(Jd @ J).tocsr() for Jd, J in zip(Jdags, Js)]
    return H, Js, Jdags, JdJs


def _lindblad_rhs(H, Js, Jdags, JdJs, d):
    def rhs(t, y):
        rho = y.reshape(d, d)
        out = -1j * (H @ rho - rho @ H)
        for J, Jdag, JdJ in zip(Js, Jdags, JdJs):
            out += J @ rho @ Jdag
            out -= 0.5 * (JdJ @ rho + rho @ JdJ)
        return np.asarray(out).ravel()

    return rhs


def evolve_master(
    rho0: DensityMatrix,
    t_grid: Sequence[float],
    system: LindbladModel,
    opts: SolverOptions = SolverOptions(),
) -> list[DensityMatrix]:
    """Evolve rho0 through the master equation, sampled at t_grid.

    Output states are symmetrized (rho + rho^dag)/2; the trace is checked
    to drift by less than 1e-8 over the full integration.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    d = system.space.total_dim
    if rho0.space.dims != system.space.dims:
        raise ValueError("initial state space does not match the model")
    H, Js, Jdags, JdJs = _rhs_operators(system)
    rhs = _lindblad_rhs(H, Js, Jdags, JdJs, d)
    y0 = rho0.matrix.astype(complex).ravel()
    sol = solve_ivp(
        rhs,
        (float(t_grid[0]), float(t_grid[-1])),
        y0,
        t_eval=t_grid,
        method="RK45",
        rtol=opts.rtol,
        atol=opts.atol,
        max_step=opts.max_step,
    )
    if not sol.success:
        raise NumericalFailure(f"master-equation integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    out = []
    for k in range(sol.y.shape[1]):
        rho = sol.y[:, k].reshape(d, d)
        rho = (rho + rho.conj().T) / 2.0
        out.append(DensityMatrix(rho0.space, rho))
    drift = abs(out[-1].trace().real - rho0.trace().real)
    if drift > 1e-8:
        raise NumericalFailure(f"trace drifted by {drift:.2e} > 1e-8; tighten tolerances")
    return out


def _monitor_operators(system: LindbladModel):
    """Sparse operators whose expectations define steady-state drift."""
    from .hilbert import annihilation, embed, transition

    ops = []
    space = system.space
    params = system.params
    for k, m in enumerate(params.modes):
        a = annihilation(m.fock_cutoff)
        n_op = embed(space, 1 + k, a.dag() @ a).to_sparse()
        ops.append(n_op)
        ops.append((n_op @ n_op).tocsr())
    sector = space.factors[0]
    for i in range(params.n_modes_trap):
        ops.append(embed(space, 0, transition(sector, i, i)).to_sparse())
    return ops


def _expects(ops, rho: np.ndarray) -> np.ndarray:
    return np.array([complex(op.multiply(rho.T).sum()).real for op in ops])


def steady_state_integrate(
    system: LindbladModel,
    opts: SolverOptions = SolverOptions(),
    rho0: DensityMatrix | None = None,
) -> tuple[DensityMatrix, ConvergenceReport]:
    """Integrate until the monitored observables stop drifting.

    Monitors per-mode <n> and Var(n) and the trap-mode occupations; stops
    when every one changes relatively less than steady_tol over a window
    of steady_window.  Raises SteadyStateTimeout at steady_t_max.
    """
    if rho0 is None:
        rho0 = system.ground_vacuum().to_density_matrix()
    ops = _monitor_operators(system)
    d = system.space.total_dim
    H, Js, Jdags, JdJs = _rhs_operators(system)
    rhs = _lindblad_rhs(H, Js, Jdags, JdJs, d)
    y = rho0.matrix.astype(complex).ravel()
    t = 0.0
    prev = _expects(ops, y.reshape(d, d))
    windows = 0
    drift = np.inf
    while t < opts.steady_t_max:
        t_next = min(t + opts.steady_window, opts.steady_t_max)
        sol = solve_ivp(
            rhs,
            (t, t_next),
            y,
            method="RK45",
            rtol=opts.rtol,
            atol=opts.atol,
            max_step=opts.max_step,
        )
        if not sol.success:
            raise NumericalFailure(f"steady-state integration failed at t={sol.t[-1]:.6g}")
        y = sol.y[:, -1]
        t = t_next
        windows += 1
        cur = _expects(ops, y.reshape(d, d))
        rel = np.abs(cur - prev) / np.maximum(np.abs(cur), 1e-6)
        drift = float(np.max(rel))
        prev = cur
        if drift < opts.steady_tol:
            rho = y.reshape(d, d)
            rho = (rho + rho.conj().T) / 2.0
            rho /= np.trace(rho).real
            report = ConvergenceReport(True, t, drift, windows)
            return DensityMatrix(rho0.space, rho), report
    raise SteadyStateTimeout(
        f"no steady state by t={opts.steady_t_max:g} (last drift {drift:.2e})", drift
    )


def steady_state_direct(
    system: LindbladModel,
    residual_tol: float = 1e-10,
    check_multiplicity: bool = True,
    dim_limit: int | None = None,
) -> tuple[DensityMatrix, ConvergenceReport]:
    """Steady state as the null vector of the vectorized Liouvillian.

    Shifted sparse-LU inverse iteration; the returned state is Hermitized
    and trace-normalized with residual max|L vec(rho)| <= residual_tol.
    A degenerate null space (detected by a second inverse iteration from
    an independent start landing on a different state) raises
    MultiplicityWarning and flags the report; callers should then fall
    back to integration from a physical initial state.
    """
    L = vectorized_liouvillian(system.H, system.jumps, dim_limit=dim_limit)
    d = system.space.total_dim
    scale = max(1.0, np.max(np.abs(L.diagonal())))
    shift = 1e-12 * scale
    lu = splu((L + shift * sp.identity(d * d, dtype=complex, format="csr")).tocsc())

    def iterate(x0):
        x = x0 / np.linalg.norm(x0)
        rho, res = None, np.inf
        for _ in range(12):
            x = lu.solve(x)
            x /= np.linalg.norm(x)
            cand = x.reshape(d, d, order="F")
            tr = np.trace(cand)
            if abs(tr) < 1e-12:
                continue  # orthogonal to the trace functional; keep iterating
            cand = cand / tr
            cand = (cand + cand.conj().T) / 2.0
            cand /= np.trace(cand).real
            vec = cand.ravel(order="F")
            rho, res = cand, float(np.max(np.abs(L @ vec)))
            if res <= residual_tol:
                return rho, res
        if rho is None:
            raise NumericalFailure("inverse iteration never produced a traceful state")
        return rho, res

    rho1, res1 = iterate(np.ravel(np.eye(d), order="F").astype(complex) / d)
    degenerate = False
    if check_multiplicity:
        rng = np.random.default_rng(7)
        x0 = rng.normal(size=d * d) + 1j * rng.normal(size=d * d)
        rho2, res2 = iterate(x0)
        if res2 <= max(residual_tol, res1) * 10.0:
            dist = trace_distance_matrices(rho1, rho2)
            if dist > 1e-6:
                degenerate = True
                warnings.warn(
                    f"steady state appears degenerate (two null vectors differ by "
                    f"trace distance {dist:.2e}); fall back to integration from a "
                    "physical initial state",
                    MultiplicityWarning,
                )
    if res1 > residual_tol:
        raise NumericalFailure(
            f"direct steady-state residual {res1:.2e} exceeds {residual_tol:g}"
        )
    report = ConvergenceReport(True, None, None, residual=res1, degenerate=degenerate)
    return DensityMatrix(system.space, rho1), report


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    return trace_distance_matrices(rho.matrix, sigma.matrix)


def trace_distance_matrices(r: np.ndarray, s: np.ndarray) -> float:
    evals = np.linalg.eigvalsh(r - s)
    return float(0.5 * np.sum(np.abs(evals)))


def fock_tail_populations(rho: DensityMatrix, system: LindbladModel) -> list[float]:
    """Summed top-two Fock populations per mode (cutoff adequacy check)."""
    tails = []
    for k, m in enumerate(system.params.modes):
        red = partial_trace(rho, [1 + k])
        pops = np.real(np.diag(red.matrix))
        tails.append(float(pops[-2:].sum()))
    return tails


# ---------------------------------------------------------------------------
# quantum trajectories


def _trajectory_rng(seed: int, traj_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(traj_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _norm2(y: np.ndarray) -> float:
    return float(np.real(np.vdot(y, y)))


def mcwf_trajectory(
    psi0: StateVector,
    T: float,
    system: LindbladModel,
    opts: SolverOptions = SolverOptions(),
    seed: int | None = None,
    traj_index: int = 0,
    sample_times: Sequence[float] | None = None,
    observables: dict[str, Callable] | None = None,
    store_states: bool = False,
) -> TrajectoryRecord:
    """Single Monte Carlo wave-function trajectory up to time T.

    ``observables`` maps names to callables f(psi, t) evaluated on the
    normalized state at every sample time.  Deterministic for fixed
    (seed, traj_index, opts).
    """
    if seed is None:
        seed = opts.seed
    if abs(psi0.norm() - 1.0) > 1e-9:
        raise ValueError("psi0 must be normalized")
    if sample_times is None:
        sample_times = np.linspace(0.0, T, 101)
    sample_times = np.asarray(sample_times, dtype=float)
    observables = observables or {}

    H = system.H.to_sparse()
    Js = [J.to_sparse() for J in system.jumps]
    JdJs = [(J.conj().T @ J).tocsr() for J in Js]
    H_eff = H.astype(complex).copy()
    for JdJ in JdJs:
        H_eff = H_eff - 0.5j * JdJ
    H_eff = H_eff.tocsr()

    def rhs(t, y):
        return -1j * (H_eff @ y)

    rng = _trajectory_rng(seed, traj_index)
    r = rng.random()
    y = psi0.amplitudes.astype(complex)
    t = 0.0
    jumps: list[tuple[float, int]] = []
    series = {name: [] for name in observables}
    states: list[np.ndarray] = []
    sample_ptr = 0

    def emit(up_to: float, interp):
        nonlocal sample_ptr
        while sample_ptr < len(sample_times) and sample_times[sample_ptr] <= up_to + 1e-15:
            ts = sample_times[sample_ptr]
            psi = interp(ts)
            nrm = np.linalg.norm(psi)
            if nrm < 1e-150:
                raise NumericalFailure(f"state norm underflow at t={ts:.6g}")
            psi = psi / nrm
            for name, f in observables.items():
                series[name].append(f(psi, ts))
            if store_states:
                states.append(psi.copy())
            sample_ptr += 1

    emit(0.0, lambda _: y)

    while t < T - 1e-12:
        solver = RK45(
            rhs, t, y, T, rtol=opts.rtol, atol=opts.atol, max_step=opts.max_step
        )
        jumped = False
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise NumericalFailure(f"trajectory integration failed at t={solver.t:.6g}: {msg}")
            dense = solver.dense_output()
            t_new = solver.t
            n2 = _norm2(solver.y)
            if n2 < 1e-280:
                raise NumericalFailure(f"norm underflow without jump detection at t={t_new:.6g}")
            if n2 < r:
                # squared norm decays monotonically: bisect the crossing
                lo, hi = dense.t_min, t_new
                tol = opts.jump_tol * max(t_new, 1e-9)
                for _ in range(200):
                    if hi - lo <= tol:
                        break
                    mid = 0.5 * (lo + hi)
                    if _norm2(dense(mid)) < r:
                        hi = mid
                    else:
                        lo = mid
                t_jump = 0.5 * (lo + hi)
                psi_jump = dense(t_jump)
                emit(t_jump, dense)
                weights = np.array([np.real(np.vdot(psi_jump, JdJ @ psi_jump)) for JdJ in JdJs])
                total = weights.sum()
                if total <= 0.0:
                    raise NumericalFailure(f"vanishing jump weights at t={t_jump:.6g}")
                channel = int(np.searchsorted(np.cumsum(weights) / total, rng.random()))
                channel = min(channel, len(Js) - 1)
                y = Js[channel] @ psi_jump
                y = y / np.linalg.norm(y)
                t = t_jump
                jumps.append((float(t_jump), channel))
                r = rng.random()
                jumped = True
                break
            emit(t_new, dense)
        if not jumped:
            t = solver.t
            y = solver.y
            break

    emit(T, lambda _: y)
    nrm = np.linalg.norm(y)
    final = StateVector(psi0.space, y / nrm)
    series = {name: np.asarray(vals) for name, vals in series.items()}
    return TrajectoryRecord(
        sample_times=sample_times,
        series=series,
        jumps=jumps,
        seed=int(seed),
        traj_index=traj_index,
        final_state=final,
        states=states if store_states else None,
    )


# observable builders usable across process boundaries (referenced by name)


def _build_photon_numbers(system: LindbladModel):
    from .hilbert import annihilation, embed

    ops = []
    for k, m in enumerate(system.params.modes):
        a = annihilation(m.fock_cutoff)
        ops.append(embed(system.space, 1 + k, a.dag() @ a).to_sparse())
    def f(psi, t):
        return np.array([np.real(np.vdot(psi, op @ psi)) for op in ops])
    return f


def _build_occupations(system: LindbladModel):
    from .hilbert import embed, transition

    sector = system.space.factors[0]
    ops = [
        embed(system.space, 0, transition(sector, i, i)).to_sparse()
        for i in range(system.params.n_modes_trap)
    ]
    def f(psi, t):
        return np.array([np.real(np.vdot(psi, op @ psi)) for op in ops])
    return f


OBSERVABLE_BUILDERS = {
    "photon_numbers": _build_photon_numbers,
    "occupations": _build_occupations,
}

_WORKER_STATE: dict = {}


def _ensemble_init(system, opts, psi0_amp, space, T, sample_times, obs_names, store_final):
    _WORKER_STATE["args"] = (system, opts, psi0_amp, space, T, sample_times, obs_names, store_final)


def _run_trajectory(idx: int):
    system, opts, psi0_amp, space, T, sample_times, obs_names, store_final = _WORKER_STATE["args"]
    psi0 = StateVector(space, psi0_amp)
    obs = {name: OBSERVABLE_BUILDERS[name](system) for name in obs_names}
    rec = mcwf_trajectory(
        psi0, T, system, opts, seed=opts.seed, traj_index=idx,
        sample_times=sample_times, observables=obs,
    )
    final = rec.final_state.amplitudes if store_final else None
    return idx, rec.series, rec.jumps, final


def mcwf_ensemble(
    system: LindbladModel,
    opts: SolverOptions,
    psi0: StateVector | None = None,
    T: float = 10.0,
    sample_times: Sequence[float] | None = None,
    observable_names: Sequence[str] = ("photon_numbers",),
    observables: dict[str, Callable] | None = None,
    workers: int = 1,
    store_final_states: bool = False,
) -> EnsembleResult:
    """Average observables over n_trajectories independent trajectories.

    Per-trajectory seeds derive from (opts.seed, trajectory index) through
    the counter-based generator, so results do not depend on scheduling;
    the reduction runs in trajectory-index order.  ``observable_names``
    select registered builders (usable with workers > 1); arbitrary
    callables in ``observables`` force serial execution.
    """
    if psi0 is None:
        psi0 = system.ground_vacuum()
    if sample_times is None:
        sample_times = np.linspace(0.0, T, 101)
    sample_times = np.asarray(sample_times, dtype=float)
    M = opts.n_trajectories

    results: list = [None] * M
    if observables is not None or workers <= 1:
        obs = {name: OBSERVABLE_BUILDERS[name](system) for name in observable_names}
        if observables:
            obs.update(observables)
        for idx in range(M):
            rec = mcwf_trajectory(
                psi0, T, system, opts, seed=opts.seed, traj_index=idx,
                sample_times=sample_times, observables=obs,
            )
            final = rec.final_state.amplitudes if store_final_states else None
            results[idx] = (rec.series, rec.jumps, final)
    else:
        init_args = (
            system, opts, psi0.amplitudes, psi0.space, float(T),
            sample_times, tuple(observable_names), store_final_states,
        )
        with ProcessPoolExecutor(max_workers=workers, initializer=_ensemble_init, initargs=init_args) as ex:
            for idx, series, jumps, final in ex.map(_run_trajectory, range(M)):
                results[idx] = (series, jumps, final)

    names = list(results[0][0].keys())
    mean, stderr = {}, {}
    for name in names:
        stacked = np.stack([results[i][0][name] for i in range(M)], axis=0)
        mu = stacked.mean(axis=0)
        if M > 1:
            sd = stacked.std(axis=0, ddof=1)
            se = sd / np.sqrt(M)
        else:
            se = np.zeros_like(np.real(mu))
        mean[name] = mu
        stderr[name] = se
    jump_records = [results[i][1] for i in range(M)]
    finals = None
    if store_final_states:
        finals = [StateVector(psi0.space, results[i][2]) for i in range(M)]
    return EnsembleResult(
        sample_times=sample_times,
        mean=mean,
        stderr=stderr,
        n_trajectories=M,
        jump_records=jump_records,
        final_states=finals,
    )
