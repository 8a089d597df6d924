"""MCMC samplers for homogeneous, finite-mixture and CRP detection models.

Every iteration applies the blocks of a :class:`SamplerSchedule` in order:
labels, detection probabilities, concentration (CRP only) and finally the
survival / occupancy parameter.  All randomness comes from one
``numpy.random.Generator`` per chain; the compiled label kernel only consumes
uniforms drawn from it, so a chain is fully determined by its seed.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .core import ChainState, DetectionHistoryTable, Family, Mode, ModelSpec
from .likelihood import (
    HistoryPatterns,
    cjs_loglik,
    compress_histories,
    occ_loglik,
    pattern_loglik_scalar,
)

TARGET_ACCEPT = 0.44
_MIN_SCALE = 1e-5
_MAX_SCALE = 2.0


class TruncationWarning(RuntimeWarning):
    """More CRP clusters were requested than the truncation allows."""


@dataclass(frozen=True)
class SamplerSchedule:
    """Ordered (block, sampler) assignments for one model."""

    blocks: tuple
    init_scale: float = 0.1
    adapt_interval: int = 50
    target_accept: float = TARGET_ACCEPT

    @classmethod
    def for_spec(cls, spec: ModelSpec):
        if spec.mode is Mode.HOMOGENEOUS:
            blocks = (("p", "rw_reflect"), ("structural", "rw_reflect"))
        elif spec.mode is Mode.FINITE_MIXTURE:
            blocks = (
                ("labels", "categorical_gibbs"),
                ("p", "rw_reflect_ordered"),
                ("structural", "rw_reflect"),
            )
        else:
            blocks = (
                ("labels", "crp_neal8"),
                ("p", "rw_reflect_active"),
                ("alpha", "escobar_west"),
                ("structural", "rw_reflect"),
            )
        return cls(blocks, spec.init_scale, spec.adapt_interval)

    @property
    def targets(self):
        return [b for b, _ in self.blocks]


class ScaleAdapter:
    """Per-element random-walk scales tuned toward a target acceptance rate.

    After ``interval`` proposals for an element its scale is multiplied by
    ``exp(10 * gamma * (rate - target))`` with ``gamma = (n + 3) ** -0.8``
    for the element's ``n``-th adaptation, so adjustments shrink over time.
    """

    def __init__(self, scale=0.1, shape=(), interval=50, target=TARGET_ACCEPT):
        self.scale = np.full(shape, float(scale))
        self.interval = interval
        self.target = target
        self.adapting = True
        self._window_accepts = np.zeros(shape)
        self._window_props = np.zeros(shape)
        self._n_adapted = np.zeros(shape)
        self.total_accepts = np.zeros(shape)
        self.total_props = np.zeros(shape)

    def record(self, accepted, where=None):
        accepted = np.asarray(accepted, dtype=float)
        if where is None:
            self._window_accepts += accepted
            self._window_props += 1
            self.total_accepts += accepted
            self.total_props += 1
        else:
            np.add.at(self._window_accepts, where, accepted)
            np.add.at(self._window_props, where, 1)
            np.add.at(self.total_accepts, where, accepted)
            np.add.at(self.total_props, where, 1)
        if self.adapting:
            self._adapt()

    def _adapt(self):
        due = self._window_props >= self.interval
        if not np.any(due):
            return
        rate = np.where(due, self._window_accepts / np.maximum(self._window_props, 1), 0.0)
        gamma = (self._n_adapted + 3.0) ** -0.8
        factor = np.where(due, np.exp(10.0 * gamma * (rate - self.target)), 1.0)
        self.scale = np.clip(self.scale * factor, _MIN_SCALE, _MAX_SCALE)
        self._n_adapted = self._n_adapted + due
        self._window_accepts = np.where(due, 0.0, self._window_accepts)
        self._window_props = np.where(due, 0.0, self._window_props)

    def freeze(self):
        self.adapting = False

    def acceptance_rate(self):
        props = float(np.sum(self.total_props))
        return float(np.sum(self.total_accepts)) / props if props else float("nan")


def reflect_unit(x):
    """Fold values back into [0, 1] by reflection at both ends."""
    x = np.mod(x, 2.0)
    return np.where(x > 1.0, 2.0 - x, x)


def rw_update_probability(
    current,
    loglik_fn: Callable[[float], float],
    scale,
    rng,
    constraint: Optional[Callable[[float], bool]] = None,
    candidate=None,
):
    """Metropolis update of a probability under a Uniform(0, 1) prior.

    The proposal is a Gaussian step reflected into [0, 1], which is
    symmetric, so the acceptance ratio is the likelihood ratio.  Candidates
    failing ``constraint`` are rejected without evaluating ``loglik_fn``.
    ``candidate`` overrides the proposal draw (an acceptance uniform is
    still consumed).

    Returns
    -------
    value : float
    accepted : bool
    """
    current_ll = loglik_fn(current)
    if not math.isfinite(current_ll):
        raise ValueError(f"log-likelihood at the current value {current} is {current_ll}")
    if candidate is None:
        candidate = float(reflect_unit(current + scale * rng.standard_normal()))
    else:
        candidate = float(reflect_unit(candidate))
    log_u = math.log(rng.random())
    if constraint is not None and not constraint(candidate):
        return current, False
    diff = loglik_fn(candidate) - current_ll
    if diff == math.inf or log_u < diff:
        return candidate, True
    return current, False


def _unit_loglik_fn(table: DetectionHistoryTable, i):
    h = table.y[i, table.first[i]:] if table.family is Family.CAPTURE_RECAPTURE else table.y[i]
    if table.family is Family.CAPTURE_RECAPTURE:
        return lambda s, p: cjs_loglik(h, s, p)
    return lambda s, p: occ_loglik(h, s, p)


def fm_label_probabilities(i, state: ChainState, spec: ModelSpec, table: DetectionHistoryTable):
    """Full conditional of unit ``i``'s finite-mixture label."""
    if spec.mode is not Mode.FINITE_MIXTURE:
        raise ValueError("finite-mixture label update needs a finite-mixture model")
    ll_fn = _unit_loglik_fn(table, i)
    ll = np.array([ll_fn(state.structural, pk) for pk in state.p])
    return _normalise_log_weights(ll)


def _normalise_log_weights(logw):
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw, axis=-1, keepdims=True)
    if np.any(top == -np.inf):
        raise ValueError("every label has zero conditional probability")
    w = np.exp(logw - top)
    return w / w.sum(axis=-1, keepdims=True)


def fm_label_gibbs(i, state, spec, table, rng):
    """Draw a new label for unit ``i`` from its full conditional.

    Membership probabilities are fixed at 1/K, so the conditional is
    proportional to the unit's likelihood under each group's p.
    """
    probs = fm_label_probabilities(i, state, spec, table)
    k = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return min(k, len(probs) - 1)


def _categorical_rows(logw, u):
    """Inverse-CDF draw per row of ``logw`` using uniforms ``u``."""
    w = _normalise_log_weights(logw)
    cdf = np.cumsum(w, axis=1)
    k = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(k, w.shape[1] - 1)


def ordering_allows(p, k, value):
    """True if setting ``p[k] = value`` keeps ``p`` non-decreasing."""
    lo = p[k - 1] if k > 0 else 0.0
    hi = p[k + 1] if k + 1 < len(p) else 1.0
    return lo <= value <= hi


def alpha_update_escobar_west(alpha, k, n, a, b, rng):
    """Gibbs draw of the CRP concentration under a Gamma(a, b) prior.

    Uses the auxiliary-variable scheme: draw eta ~ Beta(alpha + 1, n), then
    alpha from a two-component gamma mixture with rate ``b - log(eta)``.
    """
    if k < 1 or n < 1 or not (a > 0 and b > 0):
        raise ValueError("need k >= 1, n >= 1 and a, b > 0")
    eta = 0.0
    while eta <= 0.0:
        eta = rng.beta(alpha + 1.0, n)
    rate = b - math.log(eta)
    odds = (a + k - 1.0) / (n * rate)
    pi = odds / (1.0 + odds)
    shape = a + k if rng.random() < pi else a + k - 1.0
    if shape <= 0:
        shape = a + k
    return max(rng.gamma(shape, 1.0 / rate), 1e-300)


def escobar_west_mixture_weight(k, n, a, b, eta):
    """Weight of the Gamma(a + k, .) component given the auxiliary ``eta``."""
    odds = (a + k - 1.0) / (n * (b - math.log(eta)))
    return odds / (1.0 + odds)


@numba.njit(cache=True)
def neal8_log_weights(counts, loglik_existing, loglik_aux, alpha, can_open):
    """Unnormalised log weights of Algorithm-8 label choices.

    Occupied slots get ``log(n_c) + loglik``; each of the ``m`` auxiliary
    components gets ``log(alpha / m) + loglik`` unless ``can_open`` is false.
    """
    n_slots = counts.shape[0]
    m = loglik_aux.shape[0]
    out = np.empty(n_slots + m)
    for k in range(n_slots):
        if counts[k] > 0:
            out[k] = math.log(counts[k]) + loglik_existing[k]
        else:
            out[k] = -math.inf
    log_new = math.log(alpha / m) if alpha > 0.0 else -math.inf
    for j in range(m):
        out[n_slots + j] = log_new + loglik_aux[j] if can_open else -math.inf
    return out


@numba.njit(cache=True)
def _pick(logw, u):
    top = -math.inf
    for v in logw:
        if v > top:
            top = v
    if top == -math.inf:
        return -1
    total = 0.0
    for v in logw:
        total += math.exp(v - top)
    target = u * total
    acc = 0.0
    last = -1
    for k in range(logw.shape[0]):
        if logw[k] == -math.inf:
            continue
        acc += math.exp(logw[k] - top)
        last = k
        if acc > target:
            return k
    return last


@numba.njit(cache=True)
def _fill_row(table_ll, slot, family, pa, pb, pc, s, value):
    for q in range(pa.shape[0]):
        table_ll[slot, q] = pattern_loglik_scalar(family, pa[q], pb[q], pc[q], s, value)


@numba.njit(cache=True)
def _neal8_unit(i, labels, counts, p, table_ll, n_active, pat, pa, pb, pc, family, s, alpha, u_aux, u_choice):
    n_slots = p.shape[0]
    m = u_aux.shape[0]
    c = labels[i]
    q = pat[i]
    counts[c] -= 1
    singleton = counts[c] == 0
    if singleton:
        n_active -= 1
    can_open = n_active < n_slots

    aux = u_aux.copy()
    aux_ll = np.empty(m)
    for j in range(m):
        if singleton and j == 0:
            aux[0] = p[c]
            aux_ll[0] = table_ll[c, q]
        else:
            aux_ll[j] = pattern_loglik_scalar(family, pa[q], pb[q], pc[q], s, aux[j])

    logw = neal8_log_weights(counts, table_ll[:, q], aux_ll, alpha, can_open)
    k = _pick(logw, u_choice)
    if k < 0:
        raise ValueError("every label choice has zero probability")
    if k < n_slots:
        labels[i] = k
        counts[k] += 1
        return n_active, not can_open, False
    j = k - n_slots
    slot = c
    if not singleton:
        for t in range(n_slots):
            if counts[t] == 0:
                slot = t
                break
    labels[i] = slot
    counts[slot] = 1
    n_active += 1
    if not (singleton and j == 0):
        p[slot] = aux[j]
        _fill_row(table_ll, slot, family, pa, pb, pc, s, aux[j])
    return n_active, not can_open, True


@numba.njit(cache=True)
def neal8_sweep(labels, counts, p, table_ll, pat, pa, pb, pc, family, s, alpha, u_aux, u_choice):
    """One Algorithm-8 pass over every unit in index order.

    Mutates ``labels``, ``counts``, ``p`` and ``table_ll`` in place and
    returns the number of updates whose new-cluster option was suppressed
    because all slots were in use.
    """
    n_active = 0
    for k in range(counts.shape[0]):
        if counts[k] > 0:
            n_active += 1
    suppressed = 0
    for i in range(labels.shape[0]):
        n_active, trunc, _ = _neal8_unit(
            i, labels, counts, p, table_ll, n_active, pat, pa, pb, pc, family, s, alpha,
            u_aux[i], u_choice[i],
        )
        if trunc:
            suppressed += 1
    return suppressed


class _Model:
    """Data-side context shared by the block updates of one chain."""

    def __init__(self, spec: ModelSpec, table: DetectionHistoryTable):
        spec.check(table)
        self.spec = spec
        self.table = table
        self.patterns: HistoryPatterns = compress_histories(table)
        self.n_slots = spec.n_slots(table.n_units)

    def table_ll(self, structural, p):
        return np.ascontiguousarray(self.patterns.loglik(structural, p))

    def cluster_counts(self, labels):
        return self.patterns.cluster_counts(labels, self.n_slots)

    def slot_loglik(self, structural, p, counts):
        """Log-likelihood of each slot's members, shape ``np.shape(p)``."""
        return (counts * self.patterns.loglik(structural, p)).sum(axis=-1)


def initial_state(spec: ModelSpec, table: DetectionHistoryTable) -> ChainState:
    n_slots = spec.n_slots(table.n_units)
    labels = None if spec.mode is Mode.HOMOGENEOUS else np.zeros(table.n_units, dtype=np.int64)
    alpha = 1.0 if spec.mode is Mode.NONPARAMETRIC else None
    return ChainState(0.5, np.full(n_slots, 0.5), labels, alpha)


def _labels_or_zero(state, model):
    if state.labels is None:
        return np.zeros(model.table.n_units, dtype=np.int64)
    return state.labels


def _member_counts(state, model, counts):
    if counts is None:
        counts = model.cluster_counts(_labels_or_zero(state, model))
    return counts


def crp_label_update_neal8(i, state: ChainState, spec, table, m=1, rng=None, model=None):
    """Algorithm-8 update of unit ``i``'s CRP label, in place.

    Returns ``(label, opened)`` where ``opened`` says whether a new cluster
    was created.  Emits :class:`TruncationWarning` when every slot is in use
    and the new-cluster option had to be suppressed.
    """
    if spec.mode is not Mode.NONPARAMETRIC:
        raise ValueError("Algorithm-8 update needs the nonparametric model")
    model = model or _Model(spec, table)
    pt = model.patterns
    counts = np.bincount(state.labels, minlength=model.n_slots).astype(np.int64)
    table_ll = model.table_ll(state.structural, state.p)
    n_active = int((counts > 0).sum())
    u_aux = rng.random(m)
    u_choice = rng.random()
    _, trunc, opened = _neal8_unit(
        i, state.labels, counts, state.p, table_ll, n_active, pt.index, pt.a, pt.b, pt.c,
        pt.family, float(state.structural), float(state.alpha), u_aux, u_choice,
    )
    if trunc:
        warnings.warn(
            f"all {model.n_slots} cluster slots in use; new-cluster option suppressed",
            TruncationWarning,
            stacklevel=2,
        )
    return int(state.labels[i]), bool(opened)


def fm_ordered_p_update(state: ChainState, spec, table, rng, scale=0.1, model=None, counts=None):
    """Random-walk update of each ordered finite-mixture p, in place."""
    model = model or _Model(spec, table)
    adapter = scale if isinstance(scale, ScaleAdapter) else ScaleAdapter(scale, (len(state.p),))
    counts = _member_counts(state, model, counts)
    s = state.structural
    for k in range(len(state.p)):
        ck = counts[k]

        def ll(v, ck=ck):
            return float(ck @ model.patterns.loglik(s, v))

        new, acc = rw_update_probability(
            state.p[k], ll, adapter.scale[k], rng,
            constraint=lambda v, k=k: ordering_allows(state.p, k, v),
        )
        state.p[k] = new
        adapter.record(acc, where=k)
    return state.p


def crp_active_p_update(state: ChainState, spec, table, rng, scale=0.1, model=None, counts=None):
    """Random-walk update of every occupied cluster's p, in place.

    Slots without members are left untouched.  Clusters are conditionally
    independent given the labels, so all active slots move in one
    vectorised step.
    """
    model = model or _Model(spec, table)
    adapter = scale if isinstance(scale, ScaleAdapter) else ScaleAdapter(scale, (len(state.p),))
    counts = _member_counts(state, model, counts)
    active = np.flatnonzero(counts.sum(axis=1) > 0)
    s = state.structural
    cur = state.p[active]
    cc = counts[active]
    cur_ll = model.slot_loglik(s, cur, cc)
    if not np.isfinite(cur_ll).all():
        raise ValueError("current state has zero likelihood")
    cand = reflect_unit(cur + adapter.scale[active] * rng.standard_normal(active.size))
    log_u = np.log(rng.random(active.size))
    diff = model.slot_loglik(s, cand, cc) - cur_ll
    accept = log_u < diff
    state.p[active] = np.where(accept, cand, cur)
    adapter.record(accept, where=active)
    return state.p


def structural_update(state: ChainState, spec, table, rng, scale=0.1, model=None, counts=None):
    """Random-walk update of survival (phi) or occupancy (psi), in place."""
    model = model or _Model(spec, table)
    adapter = scale if isinstance(scale, ScaleAdapter) else ScaleAdapter(scale)
    counts = _member_counts(state, model, counts)
    active = np.flatnonzero(counts.sum(axis=1) > 0)
    p_act, cc = state.p[active], counts[active]

    def ll(s):
        return float(model.slot_loglik(s, p_act, cc).sum())

    state.structural, acc = rw_update_probability(state.structural, ll, float(adapter.scale), rng)
    adapter.record(acc)
    return state.structural


@dataclass
class PosteriorDraws:
    """Retained draws of one or more chains (leading axis = chain).

    ``labels`` holds every ``label_thin``-th retained label vector and is
    ``None`` for homogeneous models; ``alpha`` is ``None`` outside the CRP
    model.  ``loglik`` holds per-unit log-likelihoods for WAIC.
    """

    spec: ModelSpec
    structural: np.ndarray
    p: np.ndarray
    n_clusters: np.ndarray
    loglik: np.ndarray
    alpha: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    reports: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.structural.shape[0]

    @property
    def n_draws(self):
        return self.structural.shape[1]

    def pooled(self, name):
        """Draws of ``name`` with chains concatenated along the first axis."""
        arr = getattr(self, name)
        if arr is None:
            return None
        return arr.reshape((-1,) + arr.shape[2:])

    def report(self):
        return {
            "model": self.spec.label,
            "spec": self.spec.to_dict(),
            "chains": self.reports,
            "truncation_warnings": sum(len(r["truncation_warnings"]) for r in self.reports),
        }

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        first = parts[0]

        def cat(name):
            vals = [getattr(d, name) for d in parts]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        return cls(
            first.spec,
            cat("structural"),
            cat("p"),
            cat("n_clusters"),
            cat("loglik"),
            cat("alpha"),
            cat("labels"),
            [r for d in parts for r in d.reports],
        )


def _seed_entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def run_chain(spec: ModelSpec, table: DetectionHistoryTable, rng_seed=None) -> PosteriorDraws:
    """Run a single chain and return its retained draws.

    ``rng_seed`` (an int or ``SeedSequence``) falls back to ``spec.seed``;
    if both are ``None`` a fresh seed is drawn and recorded in the report.
    Adaptation runs during burn-in only.
    """
    seed = rng_seed if rng_seed is not None else spec.seed
    ss = _seed_entropy(seed)
    rng = np.random.default_rng(ss)
    model = _Model(spec, table)
    schedule = SamplerSchedule.for_spec(spec)
    state = initial_state(spec, table)
    n, n_slots = table.n_units, model.n_slots
    pt = model.patterns
    labels = _labels_or_zero(state, model)

    p_adapt = ScaleAdapter(schedule.init_scale, (n_slots,), schedule.adapt_interval)
    s_adapt = ScaleAdapter(schedule.init_scale, (), schedule.adapt_interval)

    n_keep = len(range(spec.burnin, spec.iterations, spec.thin))
    n_label_keep = len(range(0, n_keep, spec.label_thin))
    out_s = np.empty(n_keep)
    out_p = np.empty((n_keep, n_slots))
    out_k = np.empty(n_keep, dtype=np.int64)
    out_ll = np.empty((n_keep, n))
    out_alpha = np.empty(n_keep) if spec.mode is Mode.NONPARAMETRIC else None
    out_labels = (
        np.empty((n_label_keep, n), dtype=np.int64) if spec.mode is not Mode.HOMOGENEOUS else None
    )
    trunc_iters = []
    a_prior, b_prior = spec.alpha_prior
    counts_np = np.bincount(labels, minlength=n_slots).astype(np.int64)
    hom_counts = model.cluster_counts(labels)

    t0 = time.perf_counter()
    kept = 0
    for it in range(spec.iterations):
        if it == spec.burnin:
            p_adapt.freeze()
            s_adapt.freeze()

        if spec.mode is Mode.FINITE_MIXTURE:
            tll = model.table_ll(state.structural, state.p)
            labels[:] = _categorical_rows(tll[:, pt.index].T, rng.random(n))
            counts = model.cluster_counts(labels)
            fm_ordered_p_update(state, spec, table, rng, p_adapt, model, counts)
        elif spec.mode is Mode.NONPARAMETRIC:
            tll = model.table_ll(state.structural, state.p)
            u_aux = rng.random((n, spec.n_aux))
            u_choice = rng.random(n)
            suppressed = neal8_sweep(
                labels, counts_np, state.p, tll, pt.index, pt.a, pt.b, pt.c, pt.family,
                float(state.structural), float(state.alpha), u_aux, u_choice,
            )
            if suppressed:
                trunc_iters.append(it)
            counts = model.cluster_counts(labels)
            crp_active_p_update(state, spec, table, rng, p_adapt, model, counts)
            k_active = int((counts_np > 0).sum())
            state.alpha = alpha_update_escobar_west(state.alpha, k_active, n, a_prior, b_prior, rng)
        else:
            counts = hom_counts
            crp_active_p_update(state, spec, table, rng, p_adapt, model, counts)

        structural_update(state, spec, table, rng, s_adapt, model, counts)

        if it >= spec.burnin and (it - spec.burnin) % spec.thin == 0:
            tll = model.table_ll(state.structural, state.p)
            out_s[kept] = state.structural
            out_p[kept] = state.p
            out_ll[kept] = tll[labels, pt.index]
            out_k[kept] = len(np.unique(labels)) if state.labels is not None else 1
            if out_alpha is not None:
                out_alpha[kept] = state.alpha
            if out_labels is not None and kept % spec.label_thin == 0:
                out_labels[kept // spec.label_thin] = labels
            kept += 1

    seconds = time.perf_counter() - t0
    if trunc_iters:
        warnings.warn(
            f"{len(trunc_iters)} iterations needed more than M={n_slots} clusters; "
            "new-cluster creation was suppressed",
            TruncationWarning,
            stacklevel=2,
        )
    report = {
        "seed": _describe_seed(seed, ss),
        "iterations": spec.iterations,
        "burnin": spec.burnin,
        "thin": spec.thin,
        "acceptance": {"p": p_adapt.acceptance_rate(), "structural": s_adapt.acceptance_rate()},
        "final_scales": {"structural": float(s_adapt.scale)},
        "truncation_warnings": trunc_iters,
        "seconds": seconds,
    }
    return PosteriorDraws(
        spec,
        out_s[None],
        out_p[None],
        out_k[None],
        out_ll[None],
        None if out_alpha is None else out_alpha[None],
        None if out_labels is None else out_labels[None],
        [report],
    )


def _describe_seed(seed, ss):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": str(seed.entropy), "spawn_key": list(seed.spawn_key)}
    if seed is None:
        return {"entropy": str(ss.entropy), "spawn_key": []}
    return int(seed)


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(spec: ModelSpec, table, seed=None, n_chains=3, n_jobs=1) -> PosteriorDraws:
    """Run independent chains with child seeds spawned from ``seed``.

    Chains run in worker processes when ``n_jobs > 1``; results are always
    concatenated in chain order.
    """
    seed = seed if seed is not None else spec.seed
    root = _seed_entropy(seed)
    jobs = [(spec, table, child) for child in root.spawn(n_chains)]
    if n_jobs > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_run_chain_job, jobs))
    else:
        parts = [_run_chain_job(j) for j in jobs]
    draws = PosteriorDraws.concat(parts)
    for r in draws.reports:
        r["root_entropy"] = str(root.entropy)
    return draws
