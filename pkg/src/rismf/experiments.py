"""Metrics, Monte Carlo sweep runner, and result persistence."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .baselines import lr_rankone, ls_full
from .channel import (
    SystemDims,
    array_response,
    cascaded_downlink,
    cascaded_uplink,
    sample_channel,
)
from .mf import MfConfig, estimate_single_user
from .multiuser import estimate_multi_user
from .signals import downlink_observe, make_pilot_schedule, make_uplink_schedule, uplink_observe

__all__ = [
    "ExperimentSpec",
    "ResultRecord",
    "CSV_HEADER",
    "nmse",
    "spectral_efficiency",
    "overhead_table",
    "trial_seed",
    "run_sweep",
    "write_results",
    "read_records",
]

SCENARIOS = ("single_user_downlink", "multi_user_uplink", "overhead_table")
ESTIMATORS = ("MF_AM", "MF_GD", "LS", "LR")
CSV_HEADER = "scenario,estimator,snr_db,k,trial,seed,nmse,se,wall_time_ms"

# Minimal training pilots per estimator; a sweep cell below its estimator's
# minimum is recorded as infeasible rather than run.
_MIN_PILOTS = {
    "MF_AM": lambda n, m: m,
    "MF_GD": lambda n, m: m,
    "LS": lambda n, m: m * n,
    "LR": lambda n, m: m + n,
    "MF": lambda n, m: m,  # uplink two-stage method
}


def nmse(h_true: np.ndarray, h_hat: np.ndarray) -> float:
    """Per-trial normalized error ``||h_true - h_hat||_F^2 / ||h_true||_F^2``."""
    if h_true.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {h_true.shape} vs {h_hat.shape}")
    denom = np.linalg.norm(h_true) ** 2
    if denom == 0.0:
        raise ValueError("nmse is undefined for a zero reference channel")
    return float(np.linalg.norm(h_true - h_hat) ** 2 / denom)


def _rank_one_design(h_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phase-aligned RIS vector and matched BS beamformer from a channel matrix."""
    left, _, right_h = np.linalg.svd(h_e, full_matrices=False)
    theta = np.exp(-1j * np.angle(left[:, 0]))
    x = right_h[0, :].conj()
    return theta, x


def spectral_efficiency(
    h_e_true: np.ndarray,
    h_e_hat: np.ndarray | None,
    noise_var: float,
    mode: str = "estimated",
    rng: np.random.Generator | None = None,
) -> float:
    """Downlink rate of a rank-one beamforming design, evaluated on the true channel.

    ``estimated`` derives the RIS phases (``exp(-j arg)`` of the left factor)
    and the matched BS beamformer from ``h_e_hat``; ``optimal`` derives them
    from ``h_e_true`` (for rank-one channels this maximizes the received
    power exactly); ``random`` draws uniform phases and a steering vector at
    a uniform angle, and needs ``rng``. Returns
    ``log2(1 + |theta^T h_e_true x|^2 / noise_var)``.
    """
    if noise_var <= 0.0:
        raise ValueError("spectral efficiency needs a positive noise variance")
    m_ris, n_bs = h_e_true.shape
    if mode == "estimated":
        if h_e_hat is None:
            raise ValueError("estimated mode needs a channel estimate")
        theta, x = _rank_one_design(h_e_hat)
    elif mode == "optimal":
        theta, x = _rank_one_design(h_e_true)
    elif mode == "random":
        if rng is None:
            raise ValueError("random mode needs an rng")
        theta = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=m_ris))
        x = array_response(n_bs, rng.uniform())
    else:
        raise ValueError(f"unknown mode {mode!r}")
    gain = np.abs(theta @ h_e_true @ x) ** 2
    return float(np.log2(1.0 + gain / noise_var))


def overhead_table(dims: SystemDims) -> dict[str, int]:
    """Minimal training pilots per estimator.

    KBF is included for reference only; it is not a runnable estimator here.
    """
    n, m = dims.n_bs, dims.m_ris
    return {"MF_AM": m, "MF_GD": m, "LS": m * n, "LR": m + n, "KBF": m * n}


@dataclass
class ExperimentSpec:
    """Declarative description of one Monte Carlo sweep."""

    scenario: str
    dims: SystemDims
    snr_grid_db: list[float]
    k_grid: list[int]
    estimators: tuple[str, ...] = ESTIMATORS
    n_trials: int = 200
    master_seed: int = 0
    schedule_kind: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.scenario != "overhead_table" and (not self.snr_grid_db or not self.k_grid):
            raise ValueError("snr and k grids must be non-empty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if self.schedule_kind is None:
            self.schedule_kind = "dft" if self.scenario == "multi_user_uplink" else "random"
        if self.schedule_kind not in ("random", "dft"):
            raise ValueError(f"unknown schedule_kind {self.schedule_kind!r}")
        self.estimators = tuple(self.estimators)
        self.snr_grid_db = [float(s) for s in self.snr_grid_db]
        self.k_grid = [int(k) for k in self.k_grid]
        self.master_seed = int(self.master_seed)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["estimators"] = list(self.estimators)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        data = dict(raw)
        try:
            dims = data["dims"]
            if isinstance(dims, dict):
                data["dims"] = SystemDims(**dims)
            if "estimators" in data:
                data["estimators"] = tuple(data["estimators"])
            return cls(**data)
        except (TypeError, KeyError) as err:
            raise ValueError(f"invalid experiment spec: {err}") from err


@dataclass
class ResultRecord:
    """One sweep cell. ``nmse`` is None exactly when the cell is infeasible
    (too few pilots for the estimator); ``se`` is None when no rate metric
    applies. ``wall_time_ms`` is part of the persisted schema but always 0.0:
    identical sweeps must serialize byte-identically regardless of thread
    count, which a measured wall time cannot satisfy."""

    scenario: str
    estimator: str
    snr_db: float
    k: int
    trial: int
    seed: int
    nmse: float | None
    se: float | None
    wall_time_ms: float = 0.0

    def validate(self):
        for name in ("nmse", "se", "wall_time_ms"):
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, float) and math.isnan(value):
                raise ValueError(f"{name} is NaN; records must be finite")
        if self.nmse is not None and self.nmse < 0.0:
            raise ValueError("nmse must be nonnegative")


def trial_seed(master_seed: int, estimator: str, snr_index: int, k_index: int, trial: int) -> int:
    """Deterministic 64-bit seed for one sweep cell.

    The mixing rule is the first 8 bytes (little endian) of the SHA-256 of
    the ASCII string ``"{master_seed}:{estimator}:{snr_index}:{k_index}:{trial}"``,
    so any subset of a sweep is reproducible in isolation.
    """
    key = f"{master_seed}:{estimator}:{snr_index}:{k_index}:{trial}"
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def _single_user_cell(spec, estimator, snr_db, k, trial, snr_index, k_index):
    seed = trial_seed(spec.master_seed, estimator, snr_index, k_index, trial)
    minimum = _MIN_PILOTS[estimator](spec.dims.n_bs, spec.dims.m_ris)
    if k < minimum:
        return ResultRecord(
            spec.scenario, estimator, snr_db, k, trial, seed, None, None
        )

    rng = np.random.default_rng(seed)
    dims = dataclasses.replace(spec.dims, k_pilots=k, q_users=1, t_symbols=1)
    chan = sample_channel(dims, rng)
    sched = make_pilot_schedule(dims, rng, phase_design=spec.schedule_kind)
    cascade = cascaded_downlink(chan.h_r, chan.g_matrix, psi=chan.psi)
    noise_var = 10.0 ** (-snr_db / 10.0)
    obs = downlink_observe(cascade, sched, noise_var, rng)

    if estimator == "MF_AM":
        h_hat = estimate_single_user(obs, sched, MfConfig(solver="am")).h_e_hat
    elif estimator == "MF_GD":
        h_hat = estimate_single_user(obs, sched, MfConfig(solver="gd")).h_e_hat
    elif estimator == "LS":
        h_hat = ls_full(obs, sched)
    elif estimator == "LR":
        h_hat = lr_rankone(obs, sched).h_e_hat
    else:
        raise ValueError(f"unknown estimator {estimator!r}")

    se = None
    if noise_var > 0.0:
        se = spectral_efficiency(cascade.h_e, h_hat, noise_var, mode="estimated")
    return ResultRecord(
        spec.scenario, estimator, snr_db, k, trial, seed,
        nmse(cascade.h_e, h_hat), se,
    )


def _multi_user_cell(spec, snr_db, k, trial, snr_index, k_index):
    estimator = "MF"
    seed = trial_seed(spec.master_seed, estimator, snr_index, k_index, trial)
    if k < _MIN_PILOTS[estimator](spec.dims.n_bs, spec.dims.m_ris):
        return ResultRecord(
            spec.scenario, estimator, snr_db, k, trial, seed, None, None
        )

    rng = np.random.default_rng(seed)
    dims = dataclasses.replace(spec.dims, k_pilots=k)
    chan = sample_channel(dims, rng)
    g_up = chan.g_uplink()
    sched = make_uplink_schedule(dims, rng, phase_design=spec.schedule_kind)
    noise_var = 10.0 ** (-snr_db / 10.0)
    obs = uplink_observe(g_up, chan.h_users, sched, noise_var, rng)

    estimate = estimate_multi_user(obs, sched)
    per_user = []
    for q in range(dims.q_users):
        truth = cascaded_uplink(g_up, chan.h_users[q], psi=chan.psi).h_e
        per_user.append(nmse(truth, estimate.h_hats[q]))
    return ResultRecord(
        spec.scenario, estimator, snr_db, k, trial, seed,
        float(np.mean(per_user)), None,
    )


def run_sweep(spec: ExperimentSpec, n_threads: int = 1) -> list[ResultRecord]:
    """Run every (estimator, snr, k, trial) cell of the sweep.

    Cells are independent (each derives its own rng from the mixed trial
    seed), so ``n_threads`` only affects wall time; the returned order is
    always estimator-major, then SNR, then k, then trial.
    """
    if spec.scenario == "overhead_table":
        raise ValueError("overhead_table is a static table, not a sweep")

    jobs = []
    if spec.scenario == "single_user_downlink":
        for estimator in spec.estimators:
            for snr_index, snr_db in enumerate(spec.snr_grid_db):
                for k_index, k in enumerate(spec.k_grid):
                    for trial in range(spec.n_trials):
                        jobs.append((
                            _single_user_cell,
                            (spec, estimator, snr_db, k, trial, snr_index, k_index),
                        ))
    else:
        for snr_index, snr_db in enumerate(spec.snr_grid_db):
            for k_index, k in enumerate(spec.k_grid):
                for trial in range(spec.n_trials):
                    jobs.append((
                        _multi_user_cell,
                        (spec, snr_db, k, trial, snr_index, k_index),
                    ))

    if n_threads <= 1:
        records = [fn(*args) for fn, args in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            futures = [pool.submit(fn, *args) for fn, args in jobs]
            records = [f.result() for f in futures]
    for record in records:
        record.validate()
    return records


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(records, path, format: str = "csv", spec: ExperimentSpec | None = None):
    """Persist records as CSV or JSON plus a ``.meta.json`` sidecar.

    The CSV header is fixed; infeasible cells carry the literal token
    ``infeasible`` in the nmse column (null in JSON). A missing rate metric
    is an empty cell (null in JSON). Floats are written with full
    round-trip precision.
    """
    path = str(path)
    for record in records:
        record.validate()

    if format == "csv":
        lines = [CSV_HEADER]
        for r in records:
            nmse_cell = "infeasible" if r.nmse is None else repr(float(r.nmse))
            row = [
                r.scenario, r.estimator, _format_value(float(r.snr_db)),
                str(r.k), str(r.trial), str(r.seed),
                nmse_cell, _format_value(r.se), _format_value(float(r.wall_time_ms)),
            ]
            lines.append(",".join(row))
        payload = "\n".join(lines) + "\n"
        with open(path, "w", encoding="ascii") as fh:
            fh.write(payload)
    elif format == "json":
        body = [
            {
                "scenario": r.scenario, "estimator": r.estimator,
                "snr_db": r.snr_db, "k": r.k, "trial": r.trial, "seed": r.seed,
                "nmse": r.nmse, "se": r.se, "wall_time_ms": r.wall_time_ms,
            }
            for r in records
        ]
        with open(path, "w", encoding="ascii") as fh:
            json.dump(body, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {format!r}")

    meta = {"version": __version__}
    if spec is not None:
        meta["spec"] = spec.to_dict()
    with open(path + ".meta.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def read_records(path, format: str = "csv") -> list[ResultRecord]:
    """Parse a results file written by :func:`write_results`."""
    path = str(path)
    records = []
    if format == "csv":
        with open(path, encoding="ascii") as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"unexpected CSV header {header!r}")
            for line in fh:
                cells = line.rstrip("\n").split(",")
                records.append(ResultRecord(
                    scenario=cells[0], estimator=cells[1],
                    snr_db=float(cells[2]), k=int(cells[3]),
                    trial=int(cells[4]), seed=int(cells[5]),
                    nmse=None if cells[6] == "infeasible" else float(cells[6]),
                    se=None if cells[7] == "" else float(cells[7]),
                    wall_time_ms=float(cells[8]),
                ))
    elif format == "json":
        with open(path, encoding="ascii") as fh:
            for raw in json.load(fh):
                records.append(ResultRecord(**raw))
    else:
        raise ValueError(f"unknown format {format!r}")
    return records
