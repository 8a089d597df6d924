"""scikit-learn style front end for the samplers."""

from __future__ import annotations

import re

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .core import DetectionHistoryTable, Family, Mode, ModelSpec
from .diagnostics import count_distribution, summarize, waic
from .mcmc import run_chains

_LABEL_RE = re.compile(r"^(hom|np|fm(\d+))$")


def parse_model_label(label):
    """Map ``hom``, ``fmK`` or ``np`` to ``(Mode, K)``."""
    m = _LABEL_RE.match(str(label).strip().lower())
    if not m:
        raise ValueError(f"unknown model {label!r}; expected hom, fm<K> or np")
    if m.group(1) == "hom":
        return Mode.HOMOGENEOUS, None
    if m.group(1) == "np":
        return Mode.NONPARAMETRIC, None
    return Mode.FINITE_MIXTURE, int(m.group(2))


def structural_name(family):
    return "phi" if Family.parse(family) is Family.CAPTURE_RECAPTURE else "psi"


class DetectionModel(BaseEstimator):
    """Bayesian capture-recapture / occupancy model with detection heterogeneity.

    Parameters
    ----------
    family : {"cr", "occ"}
        Cormack-Jolly-Seber capture-recapture or single-season occupancy.
    model : str
        ``"hom"`` (one detection probability), ``"fmK"`` (K-group finite
        mixture with ordered detection probabilities) or ``"np"``
        (CRP mixture).
    truncation : int, optional
        Number of cluster slots for ``"np"``; defaults to ``min(100, n_units)``.
    alpha_prior : (float, float)
        Gamma shape and rate for the CRP concentration.
    n_iter, burnin, thin : int
        Iterations per chain (burn-in included), burn-in length and thinning.
    label_thin : int
        Keep every ``label_thin``-th retained label vector.
    n_chains : int
    n_aux : int
        Auxiliary components per CRP label update.
    level : float
        Credible level of ``summary_``.
    random_state : int or None
    n_jobs : int
        Worker processes for chains.

    Attributes
    ----------
    draws_ : PosteriorDraws
    summary_ : PosteriorSummary
        Median and credible interval of phi (capture-recapture) or psi.
    waic_ : WaicReport
    cluster_counts_ : ClusterCountPosterior or None
        Posterior number of occupied subgroups (CRP model only).
    seed_ : int
    """

    def __init__(
        self,
        family="cr",
        model="hom",
        truncation=None,
        alpha_prior=(1.0, 1.0),
        n_iter=5000,
        burnin=2000,
        thin=1,
        label_thin=10,
        n_chains=3,
        n_aux=1,
        level=0.95,
        random_state=None,
        n_jobs=1,
    ):
        self.family = family
        self.model = model
        self.truncation = truncation
        self.alpha_prior = alpha_prior
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.label_thin = label_thin
        self.n_chains = n_chains
        self.n_aux = n_aux
        self.level = level
        self.random_state = random_state
        self.n_jobs = n_jobs

    def make_spec(self, seed=None):
        mode, k = parse_model_label(self.model)
        return ModelSpec(
            family=self.family,
            mode=mode,
            n_components=k,
            truncation=self.truncation,
            alpha_prior=tuple(self.alpha_prior),
            seed=seed,
            iterations=self.n_iter,
            burnin=self.burnin,
            thin=self.thin,
            label_thin=self.label_thin,
            n_aux=self.n_aux,
        )

    def _validate_data(self, X, first=None):
        if isinstance(X, DetectionHistoryTable):
            if Family.parse(self.family) is not X.family:
                raise ValueError("table family does not match estimator family")
            return X
        X = check_array(X, dtype=None, ensure_min_samples=1, ensure_min_features=1)
        return DetectionHistoryTable(X, self.family, first=first)

    def fit(self, X, y=None, first=None):
        """Sample the posterior given detection histories ``X``.

        ``X`` is a (n_units, n_occasions) 0/1 matrix or a
        :class:`DetectionHistoryTable`.  For capture-recapture data ``first``
        gives each row's first-capture occasion (default: its first 1).
        """
        table = self._validate_data(X, first)
        if self.random_state is None:
            seed = int(np.random.SeedSequence().generate_state(1)[0])
        else:
            seed = int(self.random_state)
        spec = self.make_spec(seed)
        draws = run_chains(spec, table, seed, self.n_chains, self.n_jobs)
        self.seed_ = seed
        self.spec_ = spec
        self.n_units_ = table.n_units
        self.n_occasions_ = table.n_occasions
        self.draws_ = draws
        self.summary_ = summarize(
            draws.pooled("structural"), self.level, structural_name(self.family)
        )
        self.waic_ = waic(draws.pooled("loglik")) if draws.structural.size >= 2 else None
        self.cluster_counts_ = (
            count_distribution(draws.pooled("n_clusters"))
            if spec.mode is Mode.NONPARAMETRIC and draws.structural.size
            else None
        )
        return self

    def score(self, X=None, y=None):
        """Expected log pointwise predictive density (``-WAIC / 2``) of the fit data."""
        check_is_fitted(self, "draws_")
        if X is not None:
            shape = X.y.shape if isinstance(X, DetectionHistoryTable) else np.shape(X)
            if tuple(shape) != (self.n_units_, self.n_occasions_):
                raise ValueError("WAIC-based score is only defined for the data used in fit")
        return self.waic_.elpd

    def posterior_summary(self, level=None):
        check_is_fitted(self, "draws_")
        return summarize(
            self.draws_.pooled("structural"),
            self.level if level is None else level,
            structural_name(self.family),
        )
