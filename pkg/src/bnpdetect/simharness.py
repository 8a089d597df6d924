"""Two-group simulation studies of detection heterogeneity."""

from __future__ import annotations

import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from .core import DetectionHistoryTable, Family
from .estimator import DetectionModel, parse_model_label
from .mcmc import TruncationWarning

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["family", "p", "model", "median", "lo95", "hi95", "waic", "n_warnings", "seconds"]
DEFAULT_MODELS = ("hom", "fm2", "fm3", "np")
WORKERS_ENV = "BNPDETECT_WORKERS"


def _check_args(n0, n1, T, structural, p0, p1):
    if n0 < 0 or n1 < 0 or n0 + n1 < 1:
        raise ValueError("group sizes must be non-negative with at least one unit")
    if T < 1:
        raise ValueError("need at least one occasion")
    for name, v in (("structural", structural), ("p0", p0), ("p1", p1)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _rng(seed):
    return np.random.default_rng(seed)


def group_detection(n0, n1, p0, p1):
    return np.r_[np.full(n0, float(p0)), np.full(n1, float(p1))]


def simulate_cr(n0, n1, T, phi, p0, p1, seed=None) -> DetectionHistoryTable:
    """Capture histories for two detection groups, all first caught at occasion 0.

    The first ``n0`` rows use detection ``p0``, the remaining ``n1`` use ``p1``.
    """
    _check_args(n0, n1, T, phi, p0, p1)
    rng = _rng(seed)
    n = n0 + n1
    p = group_detection(n0, n1, p0, p1)
    y = np.zeros((n, T), dtype=np.int8)
    y[:, 0] = 1
    alive = np.ones(n, dtype=bool)
    for t in range(1, T):
        alive &= rng.random(n) < phi
        y[:, t] = alive & (rng.random(n) < p)
    return DetectionHistoryTable(y, Family.CAPTURE_RECAPTURE)


def simulate_occ(n0, n1, T, psi, p0, p1, seed=None) -> DetectionHistoryTable:
    """Site detection histories for two detection groups."""
    _check_args(n0, n1, T, psi, p0, p1)
    rng = _rng(seed)
    n = n0 + n1
    p = group_detection(n0, n1, p0, p1)
    z = rng.random(n) < psi
    y = (rng.random((n, T)) < (p * z)[:, None]).astype(np.int8)
    return DetectionHistoryTable(y, Family.OCCUPANCY)


def simulate(family, n0, n1, T, structural, p0, p1, seed=None):
    if Family.parse(family) is Family.CAPTURE_RECAPTURE:
        return simulate_cr(n0, n1, T, structural, p0, p1, seed)
    return simulate_occ(n0, n1, T, structural, p0, p1, seed)


def occupancy_p_grid(step=1 / 30):
    """Coarse 0.1..0.8 grid plus a finer sub-grid on [0.1, 0.4] (values rounded to 3 dp)."""
    fine = np.round(0.1 + step * np.arange(int(np.floor(0.3 / step + 1e-9)) + 1), 3)
    coarse = np.round(np.arange(1, 9) / 10, 3)
    return tuple(float(v) for v in np.unique(np.r_[fine, coarse]))


@dataclass(frozen=True)
class ExperimentGrid:
    family: Family
    n0: int
    n1: int
    T: int
    structural: float
    p0: float
    p_values: tuple
    models: tuple = DEFAULT_MODELS
    seed: int = 0
    iterations: int = 5000
    burnin: int = 2000
    n_chains: int = 3
    thin: int = 1
    truncation: int = None
    replicates: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "p_values", tuple(float(v) for v in self.p_values))
        object.__setattr__(self, "models", tuple(self.models))
        _check_args(self.n0, self.n1, self.T, self.structural, self.p0, self.p0)
        if not self.p_values or not self.models:
            raise ValueError("grid needs at least one p value and one model")
        for v in self.p_values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"p value {v} outside [0, 1]")
        for m in self.models:
            parse_model_label(m)
        if self.replicates < 1 or self.n_chains < 1:
            raise ValueError("need at least one replicate and one chain")

    @classmethod
    def preset(cls, family, scale="desk", **overrides):
        """Simulation designs at desk scale (N/4) or full scale."""
        family = Family.parse(family)
        if family is Family.CAPTURE_RECAPTURE:
            n, T, p_values = (200 if scale == "desk" else 800), 8, tuple(np.round(np.arange(1, 9) / 10, 1))
        else:
            n, T, p_values = (500 if scale == "desk" else 2000), 6, occupancy_p_grid()
        if scale not in ("desk", "full"):
            raise ValueError("scale must be 'desk' or 'full'")
        iterations, burnin = (5000, 2000) if scale == "desk" else (10000, 2000)
        base = dict(
            family=family, n0=n, n1=n, T=T, structural=0.7, p0=0.8, p_values=p_values,
            iterations=iterations, burnin=burnin,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["family"] = self.family.value
        d["p_values"] = list(self.p_values)
        d["models"] = list(self.models)
        return d

    def data_seed(self, p_index, replicate=0):
        return np.random.SeedSequence(self.seed, spawn_key=(p_index, replicate, 0))

    def chain_seed(self, p_index, model_index, replicate=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=(p_index, replicate, 1 + model_index))
        return int(ss.generate_state(1)[0])

    def cells(self):
        for pi, p in enumerate(self.p_values):
            for r in range(self.replicates):
                for mi, m in enumerate(self.models):
                    yield pi, r, mi, p, m


def run_cell(grid: ExperimentGrid, p_index, replicate, model_index):
    """Simulate one dataset and fit one model; never raises."""
    p = grid.p_values[p_index]
    label = grid.models[model_index]
    row = {"family": grid.family.value, "p": p, "model": label}
    if grid.replicates > 1:
        row["replicate"] = replicate
    t0 = time.perf_counter()
    try:
        table = simulate(
            grid.family, grid.n0, grid.n1, grid.T, grid.structural, grid.p0, p,
            grid.data_seed(p_index, replicate),
        )
        est = DetectionModel(
            family=grid.family.value,
            model=label,
            truncation=grid.truncation,
            n_iter=grid.iterations,
            burnin=grid.burnin,
            thin=grid.thin,
            n_chains=grid.n_chains,
            random_state=grid.chain_seed(p_index, model_index, replicate),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            est.fit(table)
        s = est.summary_
        row.update(
            median=s.median,
            lo95=s.lower,
            hi95=s.upper,
            waic=est.waic_.waic if est.waic_ is not None else float("nan"),
            n_warnings=int(est.draws_.report()["truncation_warnings"]),
        )
    except Exception as exc:  # recorded per cell, grid continues
        log.exception("grid cell p=%s model=%s failed", p, label)
        row.update(median="", lo95="", hi95="", waic="", n_warnings="", error=repr(exc))
    row["seconds"] = round(time.perf_counter() - t0, 3)
    return row


def _cell_job(args):
    return run_cell(*args)


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_grid(grid: ExperimentGrid, workers=None):
    """Fit every (p, model) cell; rows come back in grid order.

    Failed cells carry an ``error`` entry and empty estimates.
    """
    workers = default_workers() if workers is None else workers
    jobs = [(grid, pi, r, mi) for pi, r, mi, _, _ in grid.cells()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell_job, jobs))
    return [_cell_job(j) for j in jobs]


def result_columns(grid: ExperimentGrid):
    if grid.replicates > 1:
        return RESULT_COLUMNS[:3] + ["replicate"] + RESULT_COLUMNS[3:]
    return list(RESULT_COLUMNS)
