"""Posterior summaries, WAIC and cluster-count reporting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class PosteriorSummary:
    name: str
    median: float
    lower: float
    upper: float
    level: float
    n_draws: int


def summarize(draws, level=0.95, name="") -> PosteriorSummary:
    """Median and equal-tailed credible interval.

    Quantiles use linear interpolation between order statistics
    (``numpy.quantile(method="linear")``, Hyndman-Fan type 7).
    """
    x = np.asarray(draws, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot summarise an empty set of draws")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(x, [tail, 0.5, 1.0 - tail], method="linear")
    return PosteriorSummary(name, float(med), float(lo), float(hi), level, int(x.size))


@dataclass(frozen=True)
class WaicReport:
    """WAIC on the deviance scale; lower is better.

    ``degenerate`` flags units whose likelihood is zero in every draw, in
    which case ``lppd`` is ``-inf`` and ``waic`` is ``inf``.
    """

    lppd: float
    p_waic: float
    waic: float
    degenerate: bool = False
    n_draws: int = 0
    n_units: int = 0

    @property
    def elpd(self):
        return self.lppd - self.p_waic


def waic(loglik_matrix) -> WaicReport:
    """WAIC from a (draws, units) matrix of per-unit log-likelihoods.

    lppd sums the log of each unit's posterior-mean likelihood; p_waic sums
    each unit's sample variance (n - 1 denominator) of the log-likelihood.
    """
    ll = np.asarray(loglik_matrix, dtype=float)
    if ll.ndim == 3:
        ll = ll.reshape(-1, ll.shape[-1])
    if ll.ndim != 2 or ll.shape[0] < 2 or ll.shape[1] < 1:
        raise ValueError("need a (draws >= 2, units >= 1) log-likelihood matrix")
    s = ll.shape[0]
    dead = np.all(ll == -np.inf, axis=0)
    if dead.any():
        return WaicReport(-np.inf, np.nan, np.inf, True, s, ll.shape[1])
    with np.errstate(invalid="ignore"):
        lppd_i = logsumexp(ll, axis=0) - np.log(s)
        var_i = np.var(ll, axis=0, ddof=1)
    var_i = np.where(np.isnan(var_i), np.inf, var_i)
    var_i = np.where(np.ptp(ll, axis=0) == 0, 0.0, var_i)  # exact zero for constant columns
    lppd = float(lppd_i.sum())
    p_waic = float(var_i.sum())
    return WaicReport(lppd, p_waic, -2.0 * (lppd - p_waic), False, s, ll.shape[1])


@dataclass(frozen=True)
class ClusterCountPosterior:
    support: np.ndarray
    probabilities: np.ndarray
    median: float
    interval: tuple
    mean: float

    def as_dict(self):
        return {int(k): float(v) for k, v in zip(self.support, self.probabilities)}


def count_distribution(counts, level=0.90) -> ClusterCountPosterior:
    counts = np.asarray(counts, dtype=np.int64).ravel()
    if counts.size == 0:
        raise ValueError("no cluster counts")
    support, freq = np.unique(counts, return_counts=True)
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(counts, [tail, 0.5, 1.0 - tail], method="linear")
    return ClusterCountPosterior(
        support, freq / counts.size, float(med), (float(lo), float(hi)), float(counts.mean())
    )


def cluster_count_posterior(label_draws, level=0.90) -> ClusterCountPosterior:
    """Distribution of the number of distinct labels across draws."""
    if label_draws is None:
        raise ValueError("label draws are required (homogeneous and stored-free fits have none)")
    labels = np.asarray(label_draws)
    if labels.ndim == 3:
        labels = labels.reshape(-1, labels.shape[-1])
    if labels.ndim != 2:
        raise ValueError("label draws must be a (draws, units) matrix")
    counts = [len(np.unique(row)) for row in labels]
    return count_distribution(counts, level)


def crp_cluster_counts(alpha, n, replications, rng, chunk=20000):
    """Final cluster counts of ``replications`` sequential CRP draws.

    Unit ``i`` (zero-based) opens a new subgroup with probability
    ``alpha / (alpha + i)`` independently of how earlier units were seated,
    so the count is a sum of independent Bernoulli indicators.
    """
    if n < 1 or replications < 1 or not alpha > 0:
        raise ValueError("need n >= 1, replications >= 1 and alpha > 0")
    p_new = alpha / (alpha + np.arange(n))
    out = np.empty(replications, dtype=np.int64)
    for start in range(0, replications, chunk):
        stop = min(start + chunk, replications)
        out[start:stop] = (rng.random((stop - start, n)) < p_new).sum(axis=1)
    return out


def crp_prior_cluster_distribution(alpha, n, replications, rng):
    """Empirical prior mass function of the CRP(alpha) cluster count."""
    counts = crp_cluster_counts(alpha, n, replications, rng)
    full = np.bincount(counts, minlength=n + 1)[1:]
    return np.arange(1, n + 1), full / replications


def sample_crp_labels(alpha, n, rng):
    """Seat ``n`` units one at a time by the CRP predictive rule."""
    labels = np.empty(n, dtype=np.int64)
    sizes = []
    for i in range(n):
        weights = np.array(sizes + [alpha], dtype=float)
        k = int(rng.choice(len(weights), p=weights / weights.sum()))
        if k == len(sizes):
            sizes.append(1)
        else:
            sizes[k] += 1
        labels[i] = k
    return labels


def expected_crp_clusters(alpha, n):
    return float(np.sum(alpha / (alpha + np.arange(n))))


SUMMARY_COLUMNS = ["model", "parameter", "median", "lo", "hi", "waic"]


def summary_row(model, summary: PosteriorSummary, report: WaicReport):
    return {
        "model": model,
        "parameter": summary.name,
        "median": summary.median,
        "lo": summary.lower,
        "hi": summary.upper,
        "waic": report.waic,
    }


def write_rows(rows, path, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
