"""Censoring-aware evaluation metrics.

Risk convention for every operation here: higher score means higher risk,
i.e. an earlier expected event. Model adapters are responsible for sign
normalization before calling in.

IPCW weighting evaluates the censoring survival G at the left limit of
event times (deaths-before-censorings convention), and at the evaluation
time itself for still-at-risk subjects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .estimators import StepFunction

__all__ = [
    "ConcordanceResult",
    "TimeGrid",
    "TdAucResult",
    "harrell_c",
    "ipcw_c",
    "brier",
    "ibs",
    "td_auc",
    "default_tau",
    "default_time_grid",
]

_CHUNK = 256


@dataclass(frozen=True)
class ConcordanceResult:
    """Concordance statistic with its pair bookkeeping.

    Counts are plain pair counts for harrell_c and weighted sums for
    ipcw_c. c_index = (concordant + 0.5 * tied_risk) / comparable.
    """

    c_index: float
    concordant: float
    discordant: float
    tied_risk: float
    comparable: float


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times for IBS / time-dependent AUC."""

    times: np.ndarray
    resolution: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.size == 0:
            raise DataError("time grid is empty")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError("grid times must be strictly increasing")
        object.__setattr__(self, "times", times)


@dataclass(frozen=True)
class TdAucResult:
    """Per-time IPCW AUC values plus the two summary conventions."""

    times: np.ndarray
    values: np.ndarray
    mean: float
    endpoint_mean: float


def _check_inputs(time, event, risk):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    risk = np.asarray(risk, dtype=float)
    if not (time.shape == event.shape == risk.shape) or time.ndim != 1:
        raise DataError("time, event and risk must be matching 1-d arrays")
    if not np.all(np.isfinite(risk)):
        raise DataError("risks must be finite")
    return time, event, risk


def harrell_c(time, event, risk) -> ConcordanceResult:
    """Harrell's concordance index.

    A pair is comparable when the shorter time belongs to an event subject
    and the times differ, or when the times tie with exactly one event (the
    event subject must then be ranked riskier). Risk ties count 0.5.
    """
    time, event, risk = _check_inputs(time, event, risk)
    n = time.size
    concordant = tied = comparable = 0.0
    for a in range(0, n, _CHUNK):
        b = min(a + _CHUNK, n)
        ti, ei, ri = time[a:b, None], event[a:b, None], risk[a:b, None]
        short = ((ti < time[None, :]) & (ei == 1)) | \
                ((ti == time[None, :]) & (ei == 1) & (event[None, :] == 0))
        comparable += short.sum()
        concordant += (short & (ri > risk[None, :])).sum()
        tied += (short & (ri == risk[None, :])).sum()
    if comparable == 0:
        raise DataError("no comparable pairs")
    c = (concordant + 0.5 * tied) / comparable
    return ConcordanceResult(c_index=float(c), concordant=float(concordant),
                             discordant=float(comparable - concordant - tied),
                             tied_risk=float(tied), comparable=float(comparable))


def ipcw_c(time, event, risk, censor_dist: StepFunction,
           tau: float | None = None) -> ConcordanceResult:
    """Uno's IPCW concordance estimator.

    Event subjects i with T_i < T_j and T_i < tau contribute weight
    1 / G(T_i-)^2; risk ties count half weight. G must be positive at tau.
    """
    time, event, risk = _check_inputs(time, event, risk)
    if tau is None:
        tau = default_tau(time, event, censor_dist)
    g_tau = censor_dist(tau)
    if g_tau <= 0:
        raise DataError(f"censoring survival is zero at tau={tau}")
    g_left = np.asarray(censor_dist.left_limit(time), dtype=float)
    with np.errstate(divide="ignore"):
        w = np.where((event == 1) & (time < tau), 1.0 / g_left ** 2, 0.0)
    if not np.all(np.isfinite(w)):
        raise DataError("zero censoring survival at a contributing event")
    n = time.size
    concordant = tied = comparable = 0.0
    for a in range(0, n, _CHUNK):
        b = min(a + _CHUNK, n)
        ti, ri, wi = time[a:b, None], risk[a:b, None], w[a:b, None]
        short = (ti < time[None, :]) & (wi > 0)
        comparable += (short * wi).sum()
        concordant += ((short & (ri > risk[None, :])) * wi).sum()
        tied += ((short & (ri == risk[None, :])) * wi).sum()
    if comparable == 0:
        raise DataError("no weighted comparable mass")
    c = (concordant + 0.5 * tied) / comparable
    return ConcordanceResult(c_index=float(c), concordant=float(concordant),
                             discordant=float(comparable - concordant - tied),
                             tied_risk=float(tied), comparable=float(comparable))


def brier(t: float, predicted_survival, time, event,
          censor_dist: StepFunction) -> float:
    """Graf's censoring-weighted Brier score at a single time point.

    Subjects dead by t contribute (0 - S_hat)^2 / G(T_i-), subjects still
    at risk contribute (1 - S_hat)^2 / G(t); subjects censored by t
    contribute nothing. The mean is over all n subjects.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    s_hat = np.asarray(predicted_survival, dtype=float)
    if s_hat.shape != time.shape:
        raise DataError("predictions must match the evaluation set")
    if np.any((s_hat < 0) | (s_hat > 1)):
        raise DataError("survival predictions must lie in [0, 1]")
    g_t = censor_dist(t)
    if g_t <= 0:
        raise DataError(f"censoring survival is zero at t={t}")
    dead = (time <= t) & (event == 1)
    alive = time > t
    total = 0.0
    if dead.any():
        g_dead = np.asarray(censor_dist.left_limit(time[dead]), dtype=float)
        if np.any(g_dead <= 0):
            raise DataError("zero censoring survival at an event time")
        total += np.sum(s_hat[dead] ** 2 / g_dead)
    total += np.sum((1.0 - s_hat[alive]) ** 2 / g_t)
    return float(total / time.size)


def _curves_on_grid(curves, grid_times, n) -> np.ndarray:
    if isinstance(curves, np.ndarray):
        mat = np.asarray(curves, dtype=float)
        if mat.shape != (n, grid_times.size):
            raise DataError("curve matrix shape must be (n, len(grid))")
        return mat
    mat = np.empty((n, grid_times.size))
    if len(curves) != n:
        raise DataError("need one curve per evaluation subject")
    for i, fn in enumerate(curves):
        mat[i] = fn(grid_times)
    return mat


def ibs(grid: TimeGrid, curves, time, event,
        censor_dist: StepFunction) -> float:
    """Integrated Brier score: trapezoidal integral of brier(t) over the
    grid, normalized by the grid span."""
    if grid.times.size < 2:
        raise DataError("IBS needs a grid with at least 2 points")
    time = np.asarray(time, dtype=float)
    mat = _curves_on_grid(curves, grid.times, time.size)
    scores = np.array([brier(t, mat[:, k], time, event, censor_dist)
                       for k, t in enumerate(grid.times)])
    span = grid.times[-1] - grid.times[0]
    return float(np.trapezoid(scores, grid.times) / span)


def td_auc(time, event, risk, eval_times: TimeGrid,
           censor_dist: StepFunction) -> TdAucResult:
    """Cumulative/dynamic time-dependent AUC with IPCW case weights.

    AUC(t) compares cases (T_i <= t, event) against controls (T_j > t),
    weighting cases by 1/G(T_i-). Times with no cases or no controls are
    dropped with a warning. The mean is the simple average over retained
    times; endpoint_mean averages the first and last retained values.
    """
    time, event, risk = _check_inputs(time, event, risk)
    g_left = np.asarray(censor_dist.left_limit(time), dtype=float)
    kept_times, values = [], []
    for t in np.asarray(eval_times.times, dtype=float):
        cases = (time <= t) & (event == 1)
        controls = time > t
        if not cases.any() or not controls.any():
            warnings.warn(f"dropping evaluation time {t}: no cases or no "
                          "controls", stacklevel=2)
            continue
        if np.any(g_left[cases] <= 0):
            raise DataError("zero censoring survival at a case time")
        w = 1.0 / g_left[cases]
        rc = risk[cases]
        rk = risk[controls]
        wins = (rc[:, None] > rk[None, :]).sum(axis=1)
        ties = (rc[:, None] == rk[None, :]).sum(axis=1)
        numer = np.sum(w * (wins + 0.5 * ties))
        denom = w.sum() * controls.sum()
        kept_times.append(t)
        values.append(float(numer / denom))
    if not kept_times:
        raise DataError("every evaluation time was dropped")
    values_arr = np.asarray(values)
    return TdAucResult(times=np.asarray(kept_times), values=values_arr,
                       mean=float(values_arr.mean()),
                       endpoint_mean=float(0.5 * (values_arr[0] + values_arr[-1])))


def default_tau(time, event, censor_dist: StepFunction) -> float:
    """Largest evaluation-set event time with positive censoring survival."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    event_times = np.unique(time[event == 1])
    ok = np.asarray(censor_dist(event_times), dtype=float) > 0
    if not ok.any():
        raise DataError("no event time has positive censoring survival")
    return float(event_times[ok].max())


def default_time_grid(time, event, censor_dist: StepFunction,
                      resolution: int = 100) -> TimeGrid:
    """100 equally spaced times between the 5th and 95th percentile of the
    observed times, clipped into (min observed, max event] and to positive
    censoring survival."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if event.sum() == 0:
        raise DataError("grid needs at least one event time")
    lo = max(float(np.percentile(time, 5)),
             float(np.nextafter(time.min(), np.inf)))
    hi = min(float(np.percentile(time, 95)),
             default_tau(time, event, censor_dist))
    if not lo < hi:
        raise DataError("degenerate time grid")
    return TimeGrid(times=np.linspace(lo, hi, resolution), resolution=resolution)
