"""Single-user downlink estimator built on the rank-one factor model.

The cascaded channel is ``h_e = a_bar a_b(psi)^H`` with ``a_bar`` an arbitrary
complex vector (RIS side) and ``a_b`` a steering vector (BS side), so the
training data poses a structured rank-one recovery problem

    J(a_bar, psi) = sum_k | theta_k^T a_bar a_b(psi)^H x_k - r_k |^2.

Two solvers are provided: safeguarded alternating minimization (exact LS in
``a_bar`` alternated with a global 1-D grid search in ``psi``) and plain
gradient descent on (Re a_bar, Im a_bar, psi). Both start from a spectral
initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import array_response, steering_matrix
from .signals import ObservationSet, PilotSchedule

__all__ = [
    "MfConfig",
    "MfState",
    "EstimateResult",
    "objective",
    "spectral_matrix",
    "maximize_over_manifold",
    "init_psi",
    "ls_a_bar",
    "am_iterate",
    "gd_gradients",
    "gd_iterate",
    "estimate_single_user",
    "estimate_multipath",
]

_DEFAULT_ITERS = {"am": 200, "gd": 2000}


@dataclass
class MfConfig:
    """Solver settings.

    ``max_iters`` defaults to 200 for the AM solver and 2000 for GD.
    ``grid_points_coarse`` defaults to four points per BS antenna (4 n_bs);
    each refinement level re-searches a window around the incumbent with the
    window shrunk by ``refine_shrink``, so the final angular resolution is
    about ``refine_shrink**(refine_levels - 1) / grid_points_coarse / 10``.
    """

    solver: str = "am"
    max_iters: int | None = None
    step_size: float = 1e-2
    backtracking: bool = True
    max_backtracks: int = 30
    grid_points_coarse: int | None = None
    refine_levels: int = 6
    refine_shrink: float = 0.1
    tol_objective: float = 1e-10

    def resolved_max_iters(self) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return _DEFAULT_ITERS[self.solver]

    def resolved_coarse(self, n_bs: int) -> int:
        return self.grid_points_coarse if self.grid_points_coarse else 4 * n_bs


@dataclass
class MfState:
    """Iterate of either solver: current factors plus the objective trajectory."""

    a_bar: np.ndarray
    psi: float
    objective_history: list[float] = field(default_factory=list)


@dataclass
class EstimateResult:
    """Final estimate with diagnostics."""

    h_e_hat: np.ndarray
    a_bar_hat: np.ndarray
    psi_hat: float
    objective_final: float
    iters_used: int
    converged: bool
    objective_history: list[float]


def objective(a_bar: np.ndarray, psi: float, obs: ObservationSet, sched: PilotSchedule) -> float:
    """Training-data misfit ``sum_k |theta_k^T a_bar a_b(psi)^H x_k - r_k|^2``."""
    a_b = array_response(sched.pilots.shape[1], psi)
    pred = (sched.phases @ a_bar) * (sched.pilots @ a_b.conj())
    return float(np.sum(np.abs(pred - obs.values) ** 2))


def spectral_matrix(obs: ObservationSet, sched: PilotSchedule) -> np.ndarray:
    """Initialization statistic ``S = (sqrt(n)/k) sum_k r_k conj(theta_k) x_k^H``.

    Its expectation over random schedules is proportional to the true
    ``a_bar a_b(psi)^H``, shape (m_ris, n_bs).
    """
    n_bs = sched.pilots.shape[1]
    k = sched.k_pilots
    weighted = obs.values[:, None] * sched.pilots.conj()
    return (np.sqrt(n_bs) / k) * (sched.phases.conj().T @ weighted)


def maximize_over_manifold(
    score,
    n_coarse: int,
    refine_levels: int = 6,
    refine_shrink: float = 0.1,
    n_local: int = 21,
) -> float:
    """Maximize a 1-periodic score over the angle manifold.

    ``score`` must map an array of angles to an array of values. A coarse
    circular grid of ``n_coarse`` points is followed by ``refine_levels``
    local searches; each level scans ``n_local`` points in a window centered
    on the incumbent and shrinks the window by ``refine_shrink``. The window
    starts at one coarse spacing, and with ``n_local = 21`` each level's grid
    spacing equals the next level's window, so the incumbent's neighborhood
    is always covered.
    """
    grid = np.arange(n_coarse) / n_coarse
    values = np.asarray(score(grid))
    best_idx = int(np.argmax(values))
    best, best_val = float(grid[best_idx]), float(values[best_idx])

    half_width = 1.0 / n_coarse
    for _ in range(refine_levels):
        local = (best + np.linspace(-half_width, half_width, n_local)) % 1.0
        values = np.asarray(score(local))
        idx = int(np.argmax(values))
        if values[idx] > best_val:
            best, best_val = float(local[idx]), float(values[idx])
        half_width *= refine_shrink
    return best


def init_psi(s_matrix: np.ndarray, config: MfConfig | None = None) -> float:
    """Spectral angle estimate ``argmax_psi || S a_b(psi) ||^2``."""
    if not np.any(s_matrix):
        raise ValueError("spectral matrix is identically zero; nothing to initialize from")
    config = config or MfConfig()
    n_bs = s_matrix.shape[1]

    def score(angles):
        return np.sum(np.abs(s_matrix @ steering_matrix(n_bs, angles)) ** 2, axis=0)

    return maximize_over_manifold(
        score,
        config.resolved_coarse(n_bs),
        config.refine_levels,
        config.refine_shrink,
    )


def ls_a_bar(psi: float, obs: ObservationSet, sched: PilotSchedule) -> np.ndarray:
    """Exact LS solve for ``a_bar`` at fixed ``psi``.

    The design matrix has rows ``(a_b(psi)^H x_k) theta_k^T`` and must be
    tall: k >= m_ris. Solved by orthogonal factorization, not the normal
    equations.
    """
    k, m_ris = sched.phases.shape
    if k < m_ris:
        raise ValueError(f"LS step needs k >= m_ris, got k={k}, m_ris={m_ris}")
    gains = sched.pilots @ array_response(sched.pilots.shape[1], psi).conj()
    design = gains[:, None] * sched.phases
    solution, _, rank, _ = np.linalg.lstsq(design, obs.values, rcond=None)
    if rank < m_ris:
        raise ValueError(f"LS design is rank deficient ({rank} < {m_ris})")
    return solution


def am_iterate(
    state: MfState,
    obs: ObservationSet,
    sched: PilotSchedule,
    config: MfConfig | None = None,
) -> MfState:
    """One alternating-minimization sweep.

    First the angle update: a global grid search of
    ``min_psi sum_k |theta_k^T a_bar x_k^T conj(a_b(psi)) - r_k|^2`` at the
    current ``a_bar``, accepted only if it does not increase the objective
    (the grid does not necessarily contain the incumbent). Then the exact LS
    update of ``a_bar`` at the accepted angle, which can only decrease the
    objective further, so the sweep is monotone by construction.
    """
    config = config or MfConfig()
    n_bs = sched.pilots.shape[1]
    previous = (
        state.objective_history[-1]
        if state.objective_history
        else objective(state.a_bar, state.psi, obs, sched)
    )

    gains = sched.phases @ state.a_bar  # theta_k^T a_bar
    scaled_pilots = (gains[:, None] * sched.pilots).T  # (n_bs, k), column k = g_k x_k

    def score(angles):
        pred = steering_matrix(n_bs, angles).conj().T @ scaled_pilots  # (grid, k)
        return -np.sum(np.abs(pred - obs.values[None, :]) ** 2, axis=1)

    candidate = maximize_over_manifold(
        score,
        config.resolved_coarse(n_bs),
        config.refine_levels,
        config.refine_shrink,
    )
    psi = candidate if objective(state.a_bar, candidate, obs, sched) <= previous else state.psi
    a_bar = ls_a_bar(psi, obs, sched)
    history = state.objective_history + [objective(a_bar, psi, obs, sched)]
    return MfState(a_bar=a_bar, psi=psi, objective_history=history)


def gd_gradients(
    a_bar: np.ndarray,
    psi: float,
    obs: ObservationSet,
    sched: PilotSchedule,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of the misfit w.r.t. (Re a_bar, Im a_bar, psi).

    With residual ``e_k = theta_k^T a_bar a_b^H x_k - r_k``, pilot gain
    ``c_k = a_b(psi)^H x_k`` and RIS gain ``g_k = theta_k^T a_bar``:

    * grad over a_bar: ``2 sum_k conj(c_k) conj(theta_k) e_k`` (real part is
      the Re-gradient, imaginary part the Im-gradient),
    * grad over the steering vector: ``2 sum_k g_k x_k conj(e_k)``, chained
      through ``d a_b / d psi`` with phase slopes ``z_i = 2 pi i``.
    """
    n_bs = sched.pilots.shape[1]
    a_b = array_response(n_bs, psi)
    c = sched.pilots @ a_b.conj()
    g = sched.phases @ a_bar
    e = g * c - obs.values

    grad_a = 2.0 * (sched.phases.conj().T @ (c.conj() * e))
    grad_steer = 2.0 * (sched.pilots.T @ (g * e.conj()))

    z = 2.0 * np.pi * np.arange(n_bs)
    phase = 2.0 * np.pi * psi * np.arange(n_bs)
    d_re = -np.sin(phase) * z / np.sqrt(n_bs)
    d_im = -np.cos(phase) * z / np.sqrt(n_bs)
    grad_psi = float(grad_steer.real @ d_re + grad_steer.imag @ d_im)
    return grad_a.real, grad_a.imag, grad_psi


def gd_iterate(
    state: MfState,
    obs: ObservationSet,
    sched: PilotSchedule,
    config: MfConfig | None = None,
) -> MfState:
    """One gradient step on (Re a_bar, Im a_bar, psi) with a shared step size.

    With backtracking enabled the step is halved (up to ``max_backtracks``
    times) until the objective does not increase; if that fails the iterate
    is left unchanged, so the trajectory stays monotone. The angle is wrapped
    back to [0, 1).
    """
    config = config or MfConfig()
    previous = (
        state.objective_history[-1]
        if state.objective_history
        else objective(state.a_bar, state.psi, obs, sched)
    )
    grad_re, grad_im, grad_psi = gd_gradients(state.a_bar, state.psi, obs, sched)
    grad_a = grad_re + 1j * grad_im

    step = config.step_size
    a_bar, psi, value = state.a_bar, state.psi, previous
    tries = config.max_backtracks if config.backtracking else 0
    for _ in range(tries + 1):
        cand_a = state.a_bar - step * grad_a
        cand_psi = (state.psi - step * grad_psi) % 1.0
        cand_val = objective(cand_a, cand_psi, obs, sched)
        if cand_val <= previous or not config.backtracking:
            a_bar, psi, value = cand_a, cand_psi, cand_val
            break
        step *= 0.5

    history = state.objective_history + [value]
    return MfState(a_bar=a_bar, psi=psi, objective_history=history)


def _initial_state(obs: ObservationSet, sched: PilotSchedule, config: MfConfig) -> MfState:
    psi0 = init_psi(spectral_matrix(obs, sched), config)
    a0 = ls_a_bar(psi0, obs, sched)
    return MfState(a_bar=a0, psi=psi0, objective_history=[objective(a0, psi0, obs, sched)])


def estimate_single_user(
    obs: ObservationSet,
    sched: PilotSchedule,
    config: MfConfig | None = None,
) -> EstimateResult:
    """Full estimator: spectral init, then AM or GD until the objective stalls.

    Stops when the relative objective decrease drops below
    ``config.tol_objective`` or ``max_iters`` sweeps have run. The estimator
    is deterministic in the data; only the (a_bar, psi) product is
    identifiable, and the returned ``h_e_hat`` is that product.
    """
    config = config or MfConfig()
    if config.solver not in ("am", "gd"):
        raise ValueError(f"unknown solver {config.solver!r}")
    step = am_iterate if config.solver == "am" else gd_iterate

    state = _initial_state(obs, sched, config)
    converged = False
    for _ in range(config.resolved_max_iters()):
        state = step(state, obs, sched, config)
        prev, curr = state.objective_history[-2], state.objective_history[-1]
        if prev <= 0.0 or (prev - curr) <= config.tol_objective * prev:
            converged = True
            break

    n_bs = sched.pilots.shape[1]
    h_e_hat = np.outer(state.a_bar, array_response(n_bs, state.psi).conj())
    return EstimateResult(
        h_e_hat=h_e_hat,
        a_bar_hat=state.a_bar,
        psi_hat=state.psi,
        objective_final=state.objective_history[-1],
        iters_used=len(state.objective_history) - 1,
        converged=converged,
        objective_history=state.objective_history,
    )


def estimate_multipath(
    obs: ObservationSet,
    sched: PilotSchedule,
    n_paths: int,
    config: MfConfig | None = None,
) -> list[EstimateResult]:
    """Successive single-path estimation with residual cancellation.

    Each round fits one rank-one component to the current residual and then
    subtracts that component's predicted observations. Returns the per-path
    estimates; the total channel estimate is the sum of their ``h_e_hat``.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    residual = obs.values.copy()
    results = []
    for _ in range(n_paths):
        partial = ObservationSet(values=residual, noise_var=obs.noise_var)
        result = estimate_single_user(partial, sched, config)
        results.append(result)
        a_b = array_response(sched.pilots.shape[1], result.psi_hat)
        predicted = (sched.phases @ result.a_bar_hat) * (sched.pilots @ a_b.conj())
        residual = residual - predicted
    return results
