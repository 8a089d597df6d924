"""Data containers, model configuration and detection-history ingestion."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np


class HistoryParseError(ValueError):
    """Raised when a detection-history file cannot be parsed."""

    def __init__(self, message, row=None, column=None):
        if row is not None:
            where = f"row {row}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class HistoryValidationError(ValueError):
    """Raised when parsed data violates the model's data requirements."""


class Family(str, enum.Enum):
    CAPTURE_RECAPTURE = "cr"
    OCCUPANCY = "occ"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "cr": cls.CAPTURE_RECAPTURE,
            "cjs": cls.CAPTURE_RECAPTURE,
            "capture_recapture": cls.CAPTURE_RECAPTURE,
            "occ": cls.OCCUPANCY,
            "occupancy": cls.OCCUPANCY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown model family {value!r}") from None


class Mode(str, enum.Enum):
    HOMOGENEOUS = "hom"
    FINITE_MIXTURE = "fm"
    NONPARAMETRIC = "np"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "hom": cls.HOMOGENEOUS,
            "homogeneous": cls.HOMOGENEOUS,
            "fm": cls.FINITE_MIXTURE,
            "finite_mixture": cls.FINITE_MIXTURE,
            "np": cls.NONPARAMETRIC,
            "nonparametric": cls.NONPARAMETRIC,
            "crp": cls.NONPARAMETRIC,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown heterogeneity mode {value!r}") from None


@dataclass(frozen=True)
class DetectionHistoryTable:
    """Binary detection histories, one row per individual or site.

    Attributes
    ----------
    y : ndarray of shape (n_units, n_occasions)
        0/1 detection matrix (read-only).
    family : Family
    first : ndarray of shape (n_units,) or None
        Zero-based occasion of first detection. Only set for
        capture-recapture data, where each row is conditioned on it.
    n_dropped : int
        Rows discarded at load time because their first detection fell on
        the final occasion.
    """

    y: np.ndarray
    family: Family
    first: Optional[np.ndarray] = None
    n_dropped: int = 0

    def __post_init__(self):
        family = Family.parse(self.family)
        object.__setattr__(self, "family", family)
        raw = np.asarray(self.y)
        if raw.ndim != 2:
            raise HistoryValidationError("detection histories must be a 2-d matrix")
        if raw.shape[0] < 1 or raw.shape[1] < 1:
            raise HistoryValidationError("need at least one unit and one occasion")
        if raw.dtype.kind not in "biuf" or not np.isin(raw, (0, 1)).all():
            raise HistoryValidationError("detection histories must be binary (0/1)")
        y = np.array(raw, dtype=np.int8, copy=True)
        if family is Family.CAPTURE_RECAPTURE:
            seen = y.any(axis=1)
            if not seen.all():
                bad = int(np.flatnonzero(~seen)[0])
                raise HistoryValidationError(
                    f"unit {bad} has no detection; capture-recapture rows "
                    "need a first capture"
                )
            computed = y.argmax(axis=1)
            first = computed if self.first is None else np.asarray(self.first, dtype=np.int64)
            if first.shape != (y.shape[0],):
                raise HistoryValidationError("first must have one entry per unit")
            if (first < 0).any() or (first >= y.shape[1]).any():
                raise HistoryValidationError("first capture index out of range")
            if (y[np.arange(y.shape[0]), first] != 1).any():
                raise HistoryValidationError("history must be 1 at its first-capture occasion")
            if (first > computed).any():
                raise HistoryValidationError("detections recorded before first capture")
            first = first.astype(np.int64)
            first.setflags(write=False)
            object.__setattr__(self, "first", first)
        else:
            object.__setattr__(self, "first", None)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n_units(self):
        return self.y.shape[0]

    @property
    def n_occasions(self):
        return self.y.shape[1]

    def histories(self):
        """Yield each unit's history as used by the likelihood.

        Capture-recapture rows start at first capture; occupancy rows are
        returned whole.
        """
        if self.family is Family.CAPTURE_RECAPTURE:
            for row, f in zip(self.y, self.first):
                yield row[f:]
        else:
            yield from self.y


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_history_csv(path, family) -> DetectionHistoryTable:
    """Read a headerless (or single-header) CSV of 0/1 detections.

    For capture-recapture data, rows first detected on the final occasion
    carry no information about survival and are dropped; the number dropped
    is kept on the returned table as ``n_dropped``.
    """
    family = Family.parse(family)
    with open(path, newline="") as fh:
        rows = [(lineno, r) for lineno, r in enumerate(csv.reader(fh), start=1)]
    rows = [(n, [tok.strip() for tok in r]) for n, r in rows if any(tok.strip() for tok in r)]
    if rows and not all(_is_number(tok) for tok in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise HistoryParseError("file contains no detection histories")

    width = len(rows[0][1])
    data = np.empty((len(rows), width), dtype=np.int8)
    for r, (lineno, tokens) in enumerate(rows):
        if len(tokens) != width:
            raise HistoryParseError(
                f"expected {width} values, found {len(tokens)}", row=lineno
            )
        for c, tok in enumerate(tokens):
            if tok not in ("0", "1"):
                raise HistoryParseError(f"non-binary value {tok!r}", row=lineno, column=c + 1)
            data[r, c] = tok == "1"

    n_dropped = 0
    if family is Family.CAPTURE_RECAPTURE:
        empty = ~data.any(axis=1)
        if empty.any():
            lineno = rows[int(np.flatnonzero(empty)[0])][0]
            raise HistoryValidationError(
                f"row {lineno}: all-zero history has no first capture"
            )
        first = data.argmax(axis=1)
        keep = first < width - 1
        n_dropped = int((~keep).sum())
        data = data[keep]
        if data.shape[0] == 0:
            raise HistoryValidationError("every row was first detected on the final occasion")
    return DetectionHistoryTable(data, family, n_dropped=n_dropped)


def write_history_csv(table: DetectionHistoryTable, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(table.y.tolist())


@dataclass(frozen=True)
class ModelSpec:
    """Model family, heterogeneity structure, priors and sampler settings.

    ``iterations`` counts every MCMC iteration including ``burnin``; draws
    are retained from the post-burn-in iterations every ``thin`` steps.
    Label vectors are stored every ``label_thin`` retained draws.
    """

    family: Family = Family.CAPTURE_RECAPTURE
    mode: Mode = Mode.HOMOGENEOUS
    n_components: Optional[int] = None
    truncation: Optional[int] = None
    alpha_prior: tuple = (1.0, 1.0)
    seed: Optional[int] = None
    iterations: int = 5000
    burnin: int = 2000
    thin: int = 1
    label_thin: int = 10
    n_aux: int = 1
    init_scale: float = 0.1
    adapt_interval: int = 50

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "alpha_prior", tuple(float(v) for v in self.alpha_prior))
        a, b = self.alpha_prior
        if not (a > 0 and b > 0):
            raise ValueError("alpha prior shape and rate must be positive")
        if self.mode is Mode.FINITE_MIXTURE and (self.n_components is None or self.n_components < 2):
            raise ValueError("finite mixtures need n_components >= 2")
        if self.mode is Mode.NONPARAMETRIC and self.truncation is not None and self.truncation < 1:
            raise ValueError("truncation must be >= 1")
        if self.iterations < 0 or self.burnin < 0 or self.burnin > self.iterations:
            raise ValueError("need 0 <= burnin <= iterations")
        if self.thin < 1 or self.label_thin < 1:
            raise ValueError("thinning intervals must be >= 1")
        if self.n_aux < 1:
            raise ValueError("need at least one auxiliary component")
        if not self.init_scale > 0 or self.adapt_interval < 1:
            raise ValueError("invalid proposal settings")

    @property
    def label(self):
        """Short model name, e.g. ``hom``, ``fm3`` or ``np``."""
        if self.mode is Mode.FINITE_MIXTURE:
            return f"fm{self.n_components}"
        return self.mode.value

    def n_slots(self, n_units):
        """Length of the detection-probability vector for ``n_units`` units."""
        if self.mode is Mode.HOMOGENEOUS:
            return 1
        if self.mode is Mode.FINITE_MIXTURE:
            return self.n_components
        return self.truncation if self.truncation is not None else min(100, n_units)

    def check(self, table: DetectionHistoryTable):
        if table.family is not self.family:
            raise ValueError(
                f"data family {table.family.value!r} does not match model family {self.family.value!r}"
            )
        n = table.n_units
        if self.mode is Mode.FINITE_MIXTURE and not 2 <= self.n_components <= n:
            raise ValueError(f"need 2 <= K <= n_units ({n}), got K={self.n_components}")
        if self.mode is Mode.NONPARAMETRIC and not 1 <= self.n_slots(n) <= n:
            raise ValueError(f"need 1 <= M <= n_units ({n}), got M={self.n_slots(n)}")

    def to_dict(self):
        return {
            "family": self.family.value,
            "mode": self.mode.value,
            "K": self.n_components,
            "M": self.truncation,
            "alpha_prior": list(self.alpha_prior),
            "seed": self.seed,
            "iterations": self.iterations,
            "burnin": self.burnin,
            "thin": self.thin,
            "label_thin": self.label_thin,
            "aux": self.n_aux,
        }

    @classmethod
    def from_dict(cls, doc):
        keymap = {
            "family": "family",
            "mode": "mode",
            "K": "n_components",
            "M": "truncation",
            "alpha_prior": "alpha_prior",
            "seed": "seed",
            "iterations": "iterations",
            "burnin": "burnin",
            "thin": "thin",
            "label_thin": "label_thin",
            "aux": "n_aux",
        }
        unknown = set(doc) - set(keymap)
        if unknown:
            raise ValueError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return cls(**{keymap[k]: v for k, v in doc.items() if v is not None})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class ChainState:
    """Current values of every sampled quantity in one chain.

    ``p`` holds one slot per mixture component: 1 for homogeneous models,
    K for finite mixtures and M (the truncation) for the CRP model, where
    only slots referenced by ``labels`` are active. ``labels`` are zero-based
    slot indices and are ``None`` for homogeneous models.
    """

    structural: float
    p: np.ndarray
    labels: Optional[np.ndarray] = None
    alpha: Optional[float] = None

    def copy(self):
        return ChainState(
            self.structural,
            self.p.copy(),
            None if self.labels is None else self.labels.copy(),
            self.alpha,
        )

    @property
    def n_clusters(self):
        if self.labels is None:
            return 1
        return len(np.unique(self.labels))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate_state(state: ChainState, spec: ModelSpec, table: DetectionHistoryTable):
    """Return every invariant the state violates; an empty list means valid."""
    out = []
    s = state.structural
    if not (np.isfinite(s) and 0.0 <= s <= 1.0):
        out.append(Violation("range", f"structural parameter {s} outside [0, 1]"))
    p = np.asarray(state.p, dtype=float)
    expected = spec.n_slots(table.n_units)
    if p.shape != (expected,):
        out.append(Violation("shape", f"p has shape {p.shape}, expected ({expected},)"))
    if not (np.isfinite(p).all() and (p >= 0).all() and (p <= 1).all()):
        out.append(Violation("range", "detection probabilities outside [0, 1]"))
    if spec.mode is Mode.FINITE_MIXTURE and (np.diff(p) < 0).any():
        out.append(Violation("ordering", f"finite-mixture p is not non-decreasing: {p.tolist()}"))

    if spec.mode is Mode.HOMOGENEOUS:
        if state.labels is not None:
            out.append(Violation("label", "homogeneous model carries no labels"))
    else:
        labels = state.labels
        if labels is None or np.shape(labels) != (table.n_units,):
            out.append(Violation("label", "need one label per unit"))
        else:
            labels = np.asarray(labels)
            if (labels < 0).any() or (labels >= len(p)).any():
                out.append(Violation("label", "labels must index entries of p"))
            if spec.mode is Mode.NONPARAMETRIC:
                k = len(np.unique(labels))
                if k > spec.n_slots(table.n_units):
                    out.append(
                        Violation(
                            "truncation exceeded",
                            f"{k} distinct labels but truncation M={spec.n_slots(table.n_units)}",
                        )
                    )

    if spec.mode is Mode.NONPARAMETRIC:
        a = state.alpha
        if a is None or not (np.isfinite(a) and a > 0):
            out.append(Violation("alpha", f"concentration must be positive, got {a}"))
    return out
