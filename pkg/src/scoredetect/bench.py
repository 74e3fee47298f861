"""Monte Carlo benchmark harness: drift, average run length (ARL), and
expected detection delay (EDD) for score-based CUSUM detectors.

Paths are simulated in fixed-size shards that advance in lockstep, each
shard drawing from its own deterministic substream, so results are exactly
reproducible for a fixed stream no matter how shards are scheduled.  A
single pass records the first crossing of every threshold in a sweep at
once, which is valid because first-crossing times of a shared statistic
path are monotone in the threshold.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .detectors import DetectorConfig, batch_scores
from .rngs import RngStream

__all__ = [
    "TrialSpec",
    "TrialSummary",
    "SweepRow",
    "estimate_drift",
    "estimate_arl",
    "estimate_edd",
    "arl_edd_sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]

_SHARD_PATHS = 256  # fixed shard width; part of the determinism contract

SWEEP_COLUMNS = (
    "omega",
    "arl",
    "arl_stderr",
    "arl_censored",
    "edd",
    "edd_stderr",
    "edd_censored",
)


@dataclass(frozen=True)
class TrialSpec:
    """One benchmark condition.

    ``change_point`` is ``math.inf`` for run-length (no change) experiments
    and 1 for detection-delay experiments where every observation is already
    post-change.
    """

    p_inf: object
    p_post: object
    detector: DetectorConfig
    change_point: float
    paths: int
    cap: int
    rng: RngStream

    def __post_init__(self):
        if self.change_point != 1 and not math.isinf(self.change_point):
            raise ValueError("change_point must be 1 or math.inf")
        if self.paths < 1 or self.cap < 1:
            raise ValueError("paths and cap must be at least 1")
        if not isinstance(self.rng, RngStream):
            raise TypeError("TrialSpec.rng must be an RngStream")


@dataclass(frozen=True)
class TrialSummary:
    """Mean stopping time with its uncertainty and censoring bookkeeping.

    Censored paths enter the mean at the cap value, so with ``censored > 0``
    the mean is a lower bound (flagged by ``is_lower_bound``).
    """

    mean_stop: float
    stderr: float
    censored: int
    paths: int
    is_lower_bound: bool
    drift_pre: float | None = None
    drift_post: float | None = None


@dataclass(frozen=True)
class SweepRow:
    omega: float
    arl: float
    arl_stderr: float
    arl_censored: int
    edd: float
    edd_stderr: float
    edd_censored: int


def estimate_drift(model, detector: DetectorConfig, n: int, rng):
    """Mean and standard error of the detector increment under ``model``."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    draws = model.sample(n, gen)
    z = np.asarray(batch_scores(detector, draws, rng=gen))
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(n))


def _first_crossings(model, detector: DetectorConfig, omegas: np.ndarray,
                     paths: int, cap: int, stream: RngStream, workers: int = 1):
    """First crossing time of each threshold for every path.

    Returns ``(times, censored)`` with shapes ``(paths, len(omegas))``;
    censored entries hold the cap.  Thresholds must be sorted ascending.
    A path retires once it has crossed the largest threshold.  Shards have
    a fixed width and their own substreams, and each writes a disjoint
    slice of the output, so worker count never changes the result.
    """
    n_omega = omegas.size
    times = np.full((paths, n_omega), cap, dtype=np.int64)
    censored = np.ones((paths, n_omega), dtype=bool)

    def run_shard(job):
        shard_index, start = job
        count = min(_SHARD_PATHS, paths - start)
        gen = stream.substream(shard_index).generator()
        stat = np.zeros(count)
        done = np.zeros((count, n_omega), dtype=bool)
        alive = np.arange(count)
        t_shard = times[start:start + count]
        c_shard = censored[start:start + count]
        for n in range(1, cap + 1):
            draws = model.sample(alive.size, gen)
            z = np.asarray(batch_scores(detector, draws, rng=gen))
            stat[alive] = np.maximum(stat[alive] + z, 0.0)
            sub_done = done[alive]
            newly = (~sub_done) & (stat[alive, None] >= omegas)
            if newly.any():
                rows = t_shard[alive]
                rows[newly] = n
                t_shard[alive] = rows
                rows = c_shard[alive]
                rows[newly] = False
                c_shard[alive] = rows
                done[alive] = sub_done | newly
                alive = alive[~done[alive].all(axis=1)]
                if alive.size == 0:
                    break

    jobs = list(enumerate(range(0, paths, _SHARD_PATHS)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_shard, jobs))
    else:
        for job in jobs:
            run_shard(job)
    return times, censored


def _summarize(times_col, censored_col, paths) -> TrialSummary:
    vals = times_col.astype(float)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    n_cens = int(censored_col.sum())
    return TrialSummary(mean, stderr, n_cens, paths, n_cens > 0)


def estimate_arl(spec: TrialSpec, workers: int = 1) -> TrialSummary:
    """Average run length: mean time to a (false) alarm with no change."""
    if not math.isinf(spec.change_point):
        raise ValueError("ARL estimation requires change_point = math.inf")
    omegas = np.array([spec.detector.omega], dtype=float)
    times, cens = _first_crossings(
        spec.p_inf, spec.detector, omegas, spec.paths, spec.cap, spec.rng,
        workers=workers,
    )
    return _summarize(times[:, 0], cens[:, 0], spec.paths)


def estimate_edd(spec: TrialSpec, workers: int = 1) -> TrialSummary:
    """Expected detection delay with the change active from the start."""
    if spec.change_point != 1:
        raise ValueError("EDD estimation requires change_point = 1")
    omegas = np.array([spec.detector.omega], dtype=float)
    times, cens = _first_crossings(
        spec.p_post, spec.detector, omegas, spec.paths, spec.cap, spec.rng,
        workers=workers,
    )
    return _summarize(times[:, 0], cens[:, 0], spec.paths)


def arl_edd_sweep(spec: TrialSpec, omegas, arl_paths: int | None = None,
                  edd_paths: int | None = None, workers: int = 1) -> list[SweepRow]:
    """ARL and EDD across a threshold grid in one pre-change and one
    post-change pass.  ``omegas`` must be strictly increasing; the grid is
    an independent variable, so ``spec.detector.omega`` is ignored here.
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or omegas.size == 0:
        raise ValueError("omegas must be a non-empty 1-d grid")
    if omegas.size > 1 and not np.all(np.diff(omegas) > 0):
        raise ValueError("omegas must be strictly increasing")
    if (omegas < 0).any():
        raise ValueError("omegas must be non-negative")
    arl_paths = spec.paths if arl_paths is None else int(arl_paths)
    edd_paths = spec.paths if edd_paths is None else int(edd_paths)
    t_arl, c_arl = _first_crossings(
        spec.p_inf, spec.detector, omegas, arl_paths, spec.cap,
        spec.rng.substream(0), workers=workers,
    )
    t_edd, c_edd = _first_crossings(
        spec.p_post, spec.detector, omegas, edd_paths, spec.cap,
        spec.rng.substream(1), workers=workers,
    )
    rows = []
    for j, omega in enumerate(omegas):
        arl = _summarize(t_arl[:, j], c_arl[:, j], arl_paths)
        edd = _summarize(t_edd[:, j], c_edd[:, j], edd_paths)
        rows.append(
            SweepRow(
                omega=float(omega),
                arl=arl.mean_stop,
                arl_stderr=arl.stderr,
                arl_censored=arl.censored,
                edd=edd.mean_stop,
                edd_stderr=edd.stderr,
                edd_censored=edd.censored,
            )
        )
    return rows


def write_sweep_csv(rows, fp) -> None:
    """Write sweep rows as CSV (header mandatory, LF endings, '%.10g' floats).

    ``fp`` is a path or an open text file.
    """
    if hasattr(fp, "write"):
        _write_sweep(rows, fp)
    else:
        with open(fp, "w", encoding="utf-8", newline="") as handle:
            _write_sweep(rows, handle)


def _write_sweep(rows, handle) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([
            f"{r.omega:.10g}",
            f"{r.arl:.10g}",
            f"{r.arl_stderr:.10g}",
            r.arl_censored,
            f"{r.edd:.10g}",
            f"{r.edd_stderr:.10g}",
            r.edd_censored,
        ])
