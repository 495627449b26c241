"""Training schedules and the downlink/uplink observation models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import CascadedChannel, SystemDims, complex_normal

__all__ = [
    "PilotSchedule",
    "UplinkSchedule",
    "ObservationSet",
    "random_pilots",
    "random_phase_schedule",
    "dft_phase_schedule",
    "orthogonal_user_pilots",
    "make_pilot_schedule",
    "make_uplink_schedule",
    "downlink_observe",
    "uplink_observe",
    "despread",
]

_UNIT_TOL = 1e-9


@dataclass
class PilotSchedule:
    """Downlink training schedule: one BS pilot and one RIS phase vector per slot.

    ``pilots`` has shape (k, n_bs) with unit-norm rows; ``phases`` has shape
    (k, m_ris) with unit-modulus entries.
    """

    pilots: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        if self.pilots.ndim != 2 or self.phases.ndim != 2:
            raise ValueError("pilots and phases must be 2-D arrays")
        if self.pilots.shape[0] != self.phases.shape[0]:
            raise ValueError(
                f"slot count mismatch: {self.pilots.shape[0]} pilots vs "
                f"{self.phases.shape[0]} phase vectors"
            )
        norms = np.linalg.norm(self.pilots, axis=1)
        if np.abs(norms - 1.0).max() > _UNIT_TOL:
            raise ValueError("every pilot must have unit norm")
        if np.abs(np.abs(self.phases) - 1.0).max() > _UNIT_TOL:
            raise ValueError("every phase entry must have unit modulus")

    @property
    def k_pilots(self) -> int:
        return self.pilots.shape[0]


@dataclass
class UplinkSchedule:
    """Uplink training schedule: RIS phases per block and per-user pilots.

    ``phase_matrix`` has shape (m_ris, k) with unit-modulus entries; column k
    is the RIS configuration held for block k.  ``user_pilots`` has shape
    (k, q_users, t_symbols); the default construction repeats mutually
    orthogonal pilots in every block.
    """

    phase_matrix: np.ndarray
    user_pilots: np.ndarray

    def __post_init__(self):
        if self.phase_matrix.ndim != 2 or self.user_pilots.ndim != 3:
            raise ValueError("phase_matrix must be 2-D and user_pilots 3-D")
        if self.phase_matrix.shape[1] != self.user_pilots.shape[0]:
            raise ValueError("phase_matrix columns must match user_pilots blocks")
        if np.abs(np.abs(self.phase_matrix) - 1.0).max() > _UNIT_TOL:
            raise ValueError("every phase entry must have unit modulus")

    @property
    def k_blocks(self) -> int:
        return self.phase_matrix.shape[1]

    @property
    def q_users(self) -> int:
        return self.user_pilots.shape[1]

    @property
    def t_symbols(self) -> int:
        return self.user_pilots.shape[2]


@dataclass
class ObservationSet:
    """Received training data plus the per-sample noise variance.

    ``values`` is (k,) of scalars in the downlink and (k, n_bs, t_symbols)
    of received blocks in the uplink.
    """

    values: np.ndarray
    noise_var: float

    @property
    def k_pilots(self) -> int:
        return self.values.shape[0]


def random_pilots(n_bs: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """K unit-norm pilots, i.i.d. complex Gaussian directions, shape (k, n_bs)."""
    x = complex_normal(rng, (k, n_bs))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_phase_schedule(m_ris: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """K unit-modulus RIS phase vectors with i.i.d. uniform phases, shape (k, m_ris)."""
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(k, m_ris)))


def dft_phase_schedule(m_ris: int, k: int) -> np.ndarray:
    """First ``m_ris`` rows of the K-point DFT matrix, shape (m_ris, k).

    Entry (m, k) is ``exp(-j 2 pi m k / K)``. Requires ``k >= m_ris`` so the
    rows stay orthogonal: ``theta theta^H = k I``, the training design that
    meets the MSE lower bound.
    """
    if k < m_ris:
        raise ValueError(f"DFT schedule needs k >= m_ris, got k={k}, m_ris={m_ris}")
    grid = np.outer(np.arange(m_ris), np.arange(k))
    return np.exp(-2j * np.pi * grid / k)


def orthogonal_user_pilots(q_users: int, t_symbols: int) -> np.ndarray:
    """Mutually orthogonal unit-modulus pilots, shape (q_users, t_symbols).

    Row q is ``exp(-j 2 pi q t / T)``; distinct rows are orthogonal with
    ``x_q x_p^H = T delta_qp``. Requires ``t_symbols >= q_users``.
    """
    if t_symbols < q_users:
        raise ValueError(
            f"orthogonal pilots need t_symbols >= q_users, got {t_symbols} < {q_users}"
        )
    grid = np.outer(np.arange(q_users), np.arange(t_symbols))
    return np.exp(-2j * np.pi * grid / t_symbols)


def make_pilot_schedule(
    dims: SystemDims,
    rng: np.random.Generator,
    phase_design: str = "random",
) -> PilotSchedule:
    """Random unit-norm pilots plus a random or DFT RIS phase schedule."""
    pilots = random_pilots(dims.n_bs, dims.k_pilots, rng)
    if phase_design == "random":
        phases = random_phase_schedule(dims.m_ris, dims.k_pilots, rng)
    elif phase_design == "dft":
        phases = dft_phase_schedule(dims.m_ris, dims.k_pilots).T.copy()
    else:
        raise ValueError(f"unknown phase_design {phase_design!r}")
    return PilotSchedule(pilots=pilots, phases=phases)


def make_uplink_schedule(
    dims: SystemDims,
    rng: np.random.Generator | None = None,
    phase_design: str = "dft",
) -> UplinkSchedule:
    """Uplink schedule with orthogonal user pilots repeated in every block."""
    if phase_design == "dft":
        phase_matrix = dft_phase_schedule(dims.m_ris, dims.k_pilots)
    elif phase_design == "random":
        if rng is None:
            raise ValueError("random phase design needs an rng")
        phase_matrix = random_phase_schedule(dims.m_ris, dims.k_pilots, rng).T.copy()
    else:
        raise ValueError(f"unknown phase_design {phase_design!r}")
    block = orthogonal_user_pilots(dims.q_users, dims.t_symbols)
    user_pilots = np.broadcast_to(
        block, (dims.k_pilots, dims.q_users, dims.t_symbols)
    ).copy()
    return UplinkSchedule(phase_matrix=phase_matrix, user_pilots=user_pilots)


def downlink_observe(
    chan: CascadedChannel,
    sched: PilotSchedule,
    noise_var: float,
    rng: np.random.Generator | None = None,
) -> ObservationSet:
    """Scalar downlink observations ``r_k = theta_k^T h_e x_k + n_k``.

    ``n_k`` is complex Gaussian with variance ``noise_var`` (SNR = 1/noise_var
    under the unit-norm pilot convention). ``noise_var = 0`` gives the exact
    model output.
    """
    if chan.uplink:
        raise ValueError("downlink_observe needs a downlink cascade")
    values = np.einsum("kn,kn->k", sched.phases @ chan.h_e, sched.pilots)
    if noise_var > 0.0:
        if rng is None:
            raise ValueError("noisy observation needs an rng")
        values = values + complex_normal(rng, values.shape, var=noise_var)
    return ObservationSet(values=values, noise_var=float(noise_var))


def uplink_observe(
    g_uplink: np.ndarray,
    h_users: np.ndarray,
    sched: UplinkSchedule,
    noise_var: float,
    rng: np.random.Generator | None = None,
) -> ObservationSet:
    """Received uplink blocks ``R_k = sum_q g diag(theta_k) h_q x_qk^T + N_k``.

    ``g_uplink`` is (n_bs, m_ris) and ``h_users`` is (q_users, m_ris); the
    result is (k, n_bs, t_symbols) with i.i.d. complex Gaussian block noise of
    variance ``noise_var`` per entry.
    """
    effective = sched.phase_matrix.T[:, None, :] * h_users[None, :, :]  # (k, q, m)
    per_user = np.einsum("nm,kqm->knq", g_uplink, effective)
    values = np.einsum("knq,kqt->knt", per_user, sched.user_pilots)
    if noise_var > 0.0:
        if rng is None:
            raise ValueError("noisy observation needs an rng")
        values = values + complex_normal(rng, values.shape, var=noise_var)
    return ObservationSet(values=values, noise_var=float(noise_var))


def despread(obs: ObservationSet, sched: UplinkSchedule, q: int) -> np.ndarray:
    """Project received blocks onto user q's pilot, shape (n_bs, k).

    Column k is ``(1/T) R_k conj(x_qk)``; with the orthogonal pilot
    construction this removes every other user exactly and leaves noise of
    variance ``noise_var / T`` per entry.
    """
    if obs.values.ndim != 3:
        raise ValueError("despread needs uplink observations (k, n_bs, t_symbols)")
    t_symbols = sched.t_symbols
    return np.einsum("knt,kt->nk", obs.values, sched.user_pilots[:, q, :].conj()) / t_symbols
