"""Uplink multi-user estimator: shared angle search plus per-user LS.

After despreading, user q's data is ``S_q = a_b(psi) a_bar_q^H theta + N_q``
with a common BS-side angle and per-user RIS-side factors, so estimation
splits into one 1-D search shared by all users followed by Q independent
linear solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import array_response, steering_matrix
from .mf import MfConfig, maximize_over_manifold
from .signals import ObservationSet, UplinkSchedule, despread

__all__ = [
    "MultiUserEstimate",
    "estimate_psi_uplink",
    "estimate_a_q",
    "predicted_mse",
    "estimate_multi_user",
]

_COND_LIMIT = 1e12


@dataclass
class MultiUserEstimate:
    """Two-stage estimate for all users.

    ``h_hats[q]`` is the (n_bs, m_ris) cascaded estimate
    ``a_b(psi_hat) a_bar_hats[q]^H``. ``predicted_mse`` is the schedule's
    noise-floor prediction for each user's ``a_bar`` error.
    """

    psi_hat: float
    a_bar_hats: np.ndarray
    h_hats: np.ndarray
    predicted_mse: float


def estimate_psi_uplink(s_list, config: MfConfig | None = None) -> float:
    """Shared BS-side angle: ``argmax_psi || a_b(psi)^H [S_1 ... S_Q] ||^2``.

    ``s_list`` is a sequence of despread (n_bs, k) matrices. Noiselessly each
    has exact left factor ``a_b(psi)``, so the score peaks at the true angle.
    """
    stacked = np.hstack([np.asarray(s) for s in s_list])
    if not np.any(stacked):
        raise ValueError("despread data is identically zero; no angle to estimate")
    config = config or MfConfig()
    n_bs = stacked.shape[0]

    def score(angles):
        projections = steering_matrix(n_bs, angles).conj().T @ stacked
        return np.sum(np.abs(projections) ** 2, axis=1)

    return maximize_over_manifold(
        score,
        config.resolved_coarse(n_bs),
        config.refine_levels,
        config.refine_shrink,
    )


def estimate_a_q(s_q: np.ndarray, phase_matrix: np.ndarray, psi_hat: float) -> np.ndarray:
    """LS estimate of one user's RIS-side factor at the given angle.

    The textbook solution is the conjugated pseudoinverse of the (n k, m)
    matrix ``theta^T kron a_b`` applied to vec(S_q). Because the left factor
    has unit norm, the Gram collapses to the (m, m) Gram of the phase
    schedule, so the same estimate is

        a_bar = (theta theta^H)^{-1} theta S_q^H a_b(psi_hat),

    computed here without forming the Kronecker matrix.
    """
    m_ris, k = phase_matrix.shape
    if k < m_ris:
        raise ValueError(f"stage-2 LS needs k >= m_ris, got k={k}, m_ris={m_ris}")
    gram = phase_matrix @ phase_matrix.conj().T
    if np.linalg.cond(gram) > _COND_LIMIT:
        raise ValueError("phase schedule loses rank; stage-2 LS is ill posed")
    a_b = array_response(s_q.shape[0], psi_hat)
    rhs = phase_matrix @ (s_q.conj().T @ a_b)
    return np.linalg.solve(gram, rhs)


def predicted_mse(noise_var: float, t_symbols: int, phase_matrix: np.ndarray) -> float:
    """Schedule-dependent MSE of the stage-2 estimate.

    Equals ``(noise_var / T) trace((conj(theta) theta^T)^{-1})``; the angle
    drops out because the steering vector has unit norm. Minimized exactly
    when ``theta theta^H = K I`` (e.g. the DFT schedule), where the value is
    ``noise_var m_ris / (K T)``.
    """
    gram = phase_matrix @ phase_matrix.conj().T
    return float(noise_var / t_symbols * np.trace(np.linalg.inv(gram)).real)


def estimate_multi_user(
    obs: ObservationSet,
    sched: UplinkSchedule,
    config: MfConfig | None = None,
    psi_override: float | None = None,
) -> MultiUserEstimate:
    """Despread every user, estimate the shared angle, then solve per user.

    ``psi_override`` injects a known angle (skipping stage 1), used to study
    the stage-2 error floor in isolation.
    """
    despread_all = [despread(obs, sched, q) for q in range(sched.q_users)]
    if psi_override is not None:
        psi_hat = float(psi_override)
    else:
        psi_hat = estimate_psi_uplink(despread_all, config)

    a_bar_hats = np.stack(
        [estimate_a_q(s_q, sched.phase_matrix, psi_hat) for s_q in despread_all]
    )
    a_b = array_response(obs.values.shape[1], psi_hat)
    h_hats = a_b[None, :, None] * a_bar_hats.conj()[:, None, :]
    return MultiUserEstimate(
        psi_hat=psi_hat,
        a_bar_hats=a_bar_hats,
        h_hats=h_hats,
        predicted_mse=predicted_mse(obs.noise_var, sched.t_symbols, sched.phase_matrix),
    )
