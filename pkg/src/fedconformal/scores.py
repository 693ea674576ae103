"""Nonconformity scores: generation, CSV ingestion and uniform quantization.

Labels are 1-based at every public boundary (CSV files, ``nc_score``,
prediction sets); arrays store them 0-based internally.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_SUM_TOL = 1e-6


class ScoreFileError(ValueError):
    """Raised when a score CSV file cannot be parsed or fails validation."""


@dataclass(frozen=True)
class LabeledExample:
    """Model output for one input together with its true label."""

    true_label: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if np.any(probs < 0):
            raise ValueError("probs must be non-negative")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1")
        if not 1 <= self.true_label <= probs.size:
            raise ValueError(f"true_label {self.true_label} outside 1..{probs.size}")
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self) -> int:
        return self.probs.size


def nc_score(example: LabeledExample, label: int) -> float:
    """Return the nonconformity score ``1 - p(label | x)`` for a 1-based label."""
    if not 1 <= label <= example.n_classes:
        raise ValueError(f"label {label} outside 1..{example.n_classes}")
    return float(1.0 - example.probs[label - 1])


def scores_from_probs(probs: np.ndarray) -> np.ndarray:
    """Vectorized score function, clipped into [0, 1] against rounding."""
    return np.clip(1.0 - np.asarray(probs, dtype=float), 0.0, 1.0)


@dataclass(frozen=True)
class ScoreTable:
    """Calibration and test scores for one experiment.

    Attributes
    ----------
    calib_scores : ndarray, shape (K, N_d)
        True-label scores of the calibration points, one row per device.
    test_labels : ndarray of int, shape (n_test,)
        0-based true labels of the test points.
    test_scores : ndarray, shape (n_test, C)
        Score of every candidate label for each test point.
    """

    calib_scores: np.ndarray
    test_labels: np.ndarray
    test_scores: np.ndarray

    def __post_init__(self):
        calib = np.asarray(self.calib_scores, dtype=float)
        test = np.asarray(self.test_scores, dtype=float)
        labels = np.asarray(self.test_labels, dtype=np.int64)
        if calib.ndim != 2 or calib.size == 0:
            raise ValueError("calib_scores must be a non-empty K x N_d matrix")
        if test.ndim != 2 or labels.shape != (test.shape[0],):
            raise ValueError("test_scores must be n_test x C with one label per row")
        for name, arr in (("calib_scores", calib), ("test_scores", test)):
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= test.shape[1]):
            raise ValueError("test label out of range")
        object.__setattr__(self, "calib_scores", calib)
        object.__setattr__(self, "test_scores", test)
        object.__setattr__(self, "test_labels", labels)

    @property
    def n_devices(self) -> int:
        return self.calib_scores.shape[0]

    @property
    def n_per_device(self) -> int:
        return self.calib_scores.shape[1]

    @property
    def n_classes(self) -> int:
        return self.test_scores.shape[1]

    @property
    def n_test(self) -> int:
        return self.test_scores.shape[0]

    @property
    def test_rows(self) -> list[tuple[int, np.ndarray]]:
        """``(true_label, score_vector)`` pairs with 1-based labels."""
        return [(int(y) + 1, s) for y, s in zip(self.test_labels, self.test_scores)]

    def pooled(self) -> np.ndarray:
        return self.calib_scores.ravel()


class Quantizer:
    """Uniform scalar quantizer over [0, 1] with ``M`` levels.

    Bins are ``[S_0, S_1], (S_1, S_2], ..., (S_{M-1}, S_M]`` and every score
    is mapped to the upper edge of its bin, so quantization never decreases
    a score.
    """

    def __init__(self, M: int):
        if int(M) != M or M < 1:
            raise ValueError(f"M must be a positive integer, got {M!r}")
        self.M = int(M)
        self.edges = np.arange(self.M + 1) / self.M

    def __repr__(self):
        return f"Quantizer(M={self.M})"

    def __eq__(self, other):
        return isinstance(other, Quantizer) and other.M == self.M

    def __hash__(self):
        return hash(("Quantizer", self.M))

    def level(self, s):
        """1-based level index of score(s) ``s``; accepts scalars or arrays."""
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
            raise ValueError("scores must lie in [0, 1]")
        idx = np.searchsorted(self.edges[1:], arr, side="left") + 1
        if idx.ndim == 0:
            return int(idx)
        return idx

    def value(self, level):
        """Quantized value ``S_m`` for 1-based level(s) ``m``."""
        return self.edges[np.asarray(level)]

    def __call__(self, s):
        return self.value(self.level(s))


def quantize(q: Quantizer, s: float) -> int:
    """Level index ``m`` in ``1..M`` of score ``s``."""
    return q.level(s)


def synthetic_probs(C: int, n: int, dirichlet_conc=None, seed=None, temperature: float = 1.0):
    """Draw ``n`` (0-based label, probability vector) pairs from the Dirichlet model.

    See ``generate_synthetic`` for the model.
    """
    conc = np.ones(C) if dirichlet_conc is None else np.asarray(dirichlet_conc, float)
    if conc.shape != (C,) or np.any(conc <= 0):
        raise ValueError("dirichlet_conc must be C positive reals")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return _dirichlet_probs(np.random.default_rng(seed), conc, n, temperature)


def _dirichlet_probs(rng, conc, n, temperature):
    pi = rng.dirichlet(conc, size=n)
    # categorical draw by inverse CDF on the row-wise cumulative sums
    u = rng.random(n)
    cdf = np.cumsum(pi, axis=1)
    labels = (cdf < u[:, None]).sum(axis=1)
    np.minimum(labels, len(conc) - 1, out=labels)
    if temperature != 1.0:
        with np.errstate(divide="ignore"):
            logits = np.log(pi) / temperature
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
    else:
        probs = pi
    return labels, probs


def generate_synthetic(
    C: int,
    K: int,
    N_d: int,
    n_test: int,
    dirichlet_conc=None,
    seed=None,
    temperature: float = 1.0,
) -> ScoreTable:
    """Draw an exchangeable score table from a Dirichlet "model".

    For every example a probability vector ``pi ~ Dirichlet(conc)`` is drawn
    and the true label is sampled from ``pi`` itself, so the simulated model
    is calibrated and all rows are i.i.d. A ``temperature`` other than 1
    reports ``pi ** (1 / temperature)`` (renormalized) as the model output,
    which emulates over- (``< 1``) or under-confidence while leaving the
    label distribution unchanged.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if min(C, K, N_d) < 1 or n_test < 0:
        raise ValueError("C, K and N_d must be >= 1 and n_test >= 0")
    labels, probs = synthetic_probs(C, K * N_d + n_test, dirichlet_conc, seed, temperature)
    scores = scores_from_probs(probs)
    n_cal = K * N_d
    calib = scores[np.arange(n_cal), labels[:n_cal]].reshape(K, N_d)
    return ScoreTable(calib, labels[n_cal:], scores[n_cal:])


def read_probs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a ``label,p1,...,pC`` file into 0-based labels and probabilities."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScoreFileError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        C = len(header) - 1
        if C < 1 or header[0] != "label" or header[1:] != [f"p{i}" for i in range(1, C + 1)]:
            raise ScoreFileError(f"{path}: header must be label,p1,...,pC")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != C + 1:
                raise ScoreFileError(f"{path}: row {lineno}: expected {C + 1} fields, got {len(row)}")
            try:
                y = int(row[0])
                p = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ScoreFileError(f"{path}: row {lineno}: {exc}") from None
            if not 1 <= y <= C:
                raise ScoreFileError(f"{path}: row {lineno}: label {y} outside 1..{C}")
            if any(v < 0 or v > 1 or v != v for v in p):
                raise ScoreFileError(f"{path}: row {lineno}: probabilities must lie in [0, 1]")
            if abs(sum(p) - 1.0) > PROB_SUM_TOL:
                raise ScoreFileError(f"{path}: row {lineno}: probabilities sum to {sum(p)!r}")
            labels.append(y - 1)
            rows.append(p)
    if not rows:
        raise ScoreFileError(f"{path}: no data rows")
    return np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=float)


def write_probs_csv(path, labels, probs) -> None:
    """Write 0-based ``labels`` and a probability matrix as a score CSV."""
    probs = np.asarray(probs, dtype=float)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"p{i}" for i in range(1, probs.shape[1] + 1)])
        for y, p in zip(labels, probs):
            writer.writerow([int(y) + 1] + [repr(float(v)) for v in p])


def ingest_csv(path, K: int, test_path=None, n_calib: int | None = None) -> ScoreTable:
    """Load a score table from CSV.

    Calibration rows are taken from ``path`` in file order and dealt to ``K``
    devices in contiguous shards. Test rows come from ``test_path`` when
    given; otherwise the first ``n_calib`` rows of ``path`` calibrate and the
    rest are test rows.
    """
    labels, probs = read_probs_csv(path)
    if test_path is not None:
        t_labels, t_probs = read_probs_csv(test_path)
        if t_probs.shape[1] != probs.shape[1]:
            raise ScoreFileError("calibration and test files disagree on class count")
        if n_calib is not None:
            labels, probs = labels[:n_calib], probs[:n_calib]
    else:
        if n_calib is None:
            raise ValueError("n_calib is required when no separate test file is given")
        if n_calib > len(labels):
            raise ValueError(f"n_calib={n_calib} exceeds the {len(labels)} rows available")
        t_labels, t_probs = labels[n_calib:], probs[n_calib:]
        labels, probs = labels[:n_calib], probs[:n_calib]
    return table_from_probs(labels, probs, t_labels, t_probs, K)


def table_from_probs(labels, probs, test_labels, test_probs, K: int) -> ScoreTable:
    """Build a ``ScoreTable`` from model outputs, sharding calibration rows."""
    n = len(labels)
    if K < 1 or n % K:
        raise ValueError(f"{n} calibration rows cannot be split equally across {K} devices")
    scores = scores_from_probs(probs)
    calib = scores[np.arange(n), labels].reshape(K, n // K)
    return ScoreTable(calib, np.asarray(test_labels), scores_from_probs(test_probs))
