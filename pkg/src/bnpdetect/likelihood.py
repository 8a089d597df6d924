"""Per-unit likelihoods with the latent alive/dead or occupancy state summed out.

Two routes are provided.  ``cjs_loglik`` and ``occ_loglik`` evaluate a single
history directly (forward recursion / two-branch mixture).  The samplers use
``pattern_loglik``, which evaluates the same quantity from the sufficient
statistics of a history so that identical histories share one evaluation.
``oracle_loglik`` enumerates latent configurations and exists for testing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import DetectionHistoryTable, Family

# integer family codes used inside compiled kernels
CR = 0
OCC = 1
FLAT = 2  # constant likelihood, used to run samplers under the prior only

MAX_ENUMERATION_OCCASIONS = 12

_NEG_INF = -np.inf


def family_code(family):
    return CR if Family.parse(family) is Family.CAPTURE_RECAPTURE else OCC


def _check_probability(name, value):
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def _as_history(history):
    h = np.asarray(history)
    if h.ndim != 1 or not np.isin(h, (0, 1)).all():
        raise ValueError("history must be a 1-d binary vector")
    return h.astype(np.int64)


def _safe_log(x):
    return math.log(x) if x > 0.0 else -math.inf


def cjs_loglik(history, phi, p):
    """Log-probability of a capture history conditional on first capture.

    ``history[0]`` is the first-capture occasion and contributes no factor.
    The hidden alive/dead chain is summed out with a forward recursion.
    """
    h = _as_history(history)
    if h.size == 0 or h[0] != 1:
        raise ValueError("capture history must start at first capture (history[0] == 1)")
    _check_probability("phi", phi)
    _check_probability("p", p)
    log_phi, log_death = _safe_log(phi), _safe_log(1.0 - phi)
    log_p, log_miss = _safe_log(p), _safe_log(1.0 - p)

    alive, dead = 0.0, -math.inf
    for y in h[1:]:
        alive, dead = alive + log_phi, np.logaddexp(alive + log_death, dead)
        if y:
            alive, dead = alive + log_p, -math.inf
        else:
            alive = alive + log_miss
    return float(np.logaddexp(alive, dead))


def occ_detection_loglik(history, p):
    """Log-probability of a site's detections given that it is occupied."""
    h = _as_history(history)
    _check_probability("p", p)
    d = int(h.sum())
    n = h.size
    total = 0.0
    if d:
        total += d * _safe_log(p)
    if n - d:
        total += (n - d) * _safe_log(1.0 - p)
    return total


def occ_loglik(history, psi, p):
    """Log-probability of a site's detections with occupancy summed out."""
    h = _as_history(history)
    _check_probability("psi", psi)
    occupied = _safe_log(psi) + occ_detection_loglik(h, p)
    if h.any():
        return occupied
    return float(np.logaddexp(occupied, _safe_log(1.0 - psi)))


def _bernoulli(y, q):
    return q if y else 1.0 - q


def oracle_loglik(history, params, family):
    """Brute-force log-likelihood by enumerating every latent configuration.

    ``params`` is ``(structural, p)``: ``(phi, p)`` for capture-recapture and
    ``(psi, p)`` for occupancy.  Every binary latent sequence is visited,
    including inadmissible ones, which receive zero probability from the
    state-process factors.  Test use only.
    """
    h = [int(v) for v in _as_history(history)]
    if len(h) > MAX_ENUMERATION_OCCASIONS:
        raise ValueError(
            f"enumeration limited to {MAX_ENUMERATION_OCCASIONS} occasions, got {len(h)}"
        )
    s, p = params
    _check_probability("structural", s)
    _check_probability("p", p)
    family = Family.parse(family)
    total = 0.0
    if family is Family.CAPTURE_RECAPTURE:
        if h[0] != 1:
            raise ValueError("capture history must start at first capture")
        for tail in itertools.product((0, 1), repeat=len(h) - 1):
            x = (1,) + tail
            prob = 1.0
            for t in range(1, len(h)):
                prob *= _bernoulli(x[t], s * x[t - 1])
                prob *= _bernoulli(h[t], p * x[t])
            total += prob
    else:
        for z in (0, 1):
            prob = _bernoulli(z, s)
            for y in h:
                prob *= _bernoulli(y, p * z)
            total += prob
    return _safe_log(total)


@numba.njit(cache=True)
def _log(x):
    if x > 0.0:
        return math.log(x)
    return -math.inf


@numba.njit(cache=True)
def _log1m(x):
    if x < 1.0:
        return math.log1p(-x)
    return -math.inf


@numba.njit(cache=True)
def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _xlogy(n, x):
    if n == 0:
        return 0.0
    if x > 0.0:
        return n * math.log(x)
    return -math.inf


@numba.njit(cache=True)
def _xlog1my(n, x):
    if n == 0:
        return 0.0
    if x < 1.0:
        return n * math.log1p(-x)
    return -math.inf


@numba.njit(cache=True)
def pattern_loglik_scalar(family, a, b, c, s, p):
    """Log-likelihood of one history summarised by ``(a, b, c)``.

    Capture-recapture: ``a`` occasions from first to last detection,
    ``b`` detections after first capture, ``c`` occasions after the last
    detection.  Occupancy: ``a`` detections out of ``b`` occasions.
    """
    if family == CR:
        log_phi = _log(s)
        log_miss = _log1m(p)
        ll = _xlogy(a, s) + _xlogy(b, p) + _xlog1my(a - b, p)
        log_death = _log1m(s)
        # chi_r: never seen again over r remaining occasions, given alive
        log_chi = 0.0
        for _ in range(c):
            log_chi = _logaddexp(log_death, log_phi + log_miss + log_chi)
        return ll + log_chi
    elif family == OCC:
        det = _xlogy(a, p) + _xlog1my(b - a, p)
        occupied = _log(s) + det
        if a > 0:
            return occupied
        return _logaddexp(_log1m(s), occupied)
    return 0.0


@numba.vectorize(
    ["float64(int64, int64, int64, int64, float64, float64)"], cache=True
)
def _pattern_loglik_ufunc(family, a, b, c, s, p):
    return pattern_loglik_scalar(family, a, b, c, s, p)


def pattern_loglik(family, a, b, c, s, p):
    """Broadcasting form of :func:`pattern_loglik_scalar`.

    Compiled code may evaluate ``log(0)`` speculatively on branches whose
    result is discarded, so the stale floating-point flags are silenced.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return _pattern_loglik_ufunc(family, a, b, c, s, p)


@dataclass(frozen=True)
class HistoryPatterns:
    """Distinct sufficient-statistic patterns of a table's histories.

    Attributes
    ----------
    family : int
        ``CR`` or ``OCC`` code.
    a, b, c : ndarray of shape (n_patterns,)
        Pattern statistics, see :func:`pattern_loglik_scalar`.
    index : ndarray of shape (n_units,)
        Pattern of each unit.
    counts : ndarray of shape (n_patterns,)
        Number of units with each pattern.
    """

    family: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    index: np.ndarray
    counts: np.ndarray

    @property
    def n_patterns(self):
        return self.a.size

    @property
    def n_units(self):
        return self.index.size

    def loglik(self, structural, p):
        """Pattern log-likelihoods broadcast over ``p``.

        Returns an array of shape ``np.shape(p) + (n_patterns,)``.
        """
        p = np.asarray(p, dtype=np.float64)[..., None]
        return pattern_loglik(self.family, self.a, self.b, self.c, float(structural), p)

    def cluster_counts(self, labels, n_slots):
        """Matrix of pattern counts per cluster slot, shape (n_slots, n_patterns)."""
        flat = np.bincount(
            labels * self.n_patterns + self.index, minlength=n_slots * self.n_patterns
        )
        return flat.reshape(n_slots, self.n_patterns)


def history_statistics(history, family):
    """Sufficient statistics ``(a, b, c)`` of one history."""
    h = _as_history(history)
    if Family.parse(family) is Family.CAPTURE_RECAPTURE:
        last = int(np.flatnonzero(h)[-1])
        return last, int(h[1:].sum()), h.size - 1 - last
    return int(h.sum()), h.size, 0


def compress_histories(table: DetectionHistoryTable) -> HistoryPatterns:
    stats = np.array(
        [history_statistics(h, table.family) for h in table.histories()], dtype=np.int64
    )
    uniq, index, counts = np.unique(stats, axis=0, return_inverse=True, return_counts=True)
    return HistoryPatterns(
        family_code(table.family),
        np.ascontiguousarray(uniq[:, 0]),
        np.ascontiguousarray(uniq[:, 1]),
        np.ascontiguousarray(uniq[:, 2]),
        index.reshape(-1).astype(np.int64),
        counts.astype(np.int64),
    )
