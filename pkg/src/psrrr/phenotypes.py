"""Multivariate disease-signature phenotype from longitudinal trait data.

Per-subject, per-trait least-squares slopes summarise change over time;
a covariate-adjusted two-group ANOVA with Bonferroni correction selects
discriminative traits; the selected slopes are residualised on sex and
age and mean-centred to form the phenotype matrix.  A diagonal-covariance
Gaussian classifier cross-validates the signature's discriminative power.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._validation import DataError

logger = logging.getLogger(__name__)

_BINARY_MAGIC = b"PSRRRLT1\n"


@dataclass
class LongitudinalTable:
    """Per-subject trait values at a shared set of visit times (months)."""

    subject_ids: list
    visit_times: np.ndarray      # (T,), strictly increasing
    values: np.ndarray           # (N, T, Q*)

    def __post_init__(self):
        self.visit_times = np.asarray(self.visit_times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError("longitudinal values must have shape (N, T, Q*)")
        n, t, _ = self.values.shape
        if len(self.subject_ids) != n or self.visit_times.size != t:
            raise DataError("longitudinal table dimensions are inconsistent")
        if np.unique(self.visit_times).size != t:
            raise DataError("visit times must be distinct")

    @property
    def n_traits(self):
        return self.values.shape[2]


@dataclass
class SlopeMatrix:
    """Per-subject, per-trait slope of trait value against visit time."""

    values: np.ndarray           # (N, Q*)
    subject_ids: list


@dataclass
class PhenotypeMatrix:
    """Selected, covariate-corrected, mean-centred traits (N x Q)."""

    values: np.ndarray
    subject_ids: list
    selected_traits: np.ndarray  # indices into the original Q* traits

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.selected_traits = np.asarray(self.selected_traits, dtype=np.int64)


def parse_longitudinal(path):
    """Read longitudinal traits from long TSV or the dense binary format.

    The TSV layout is one row per (subject, visit): subject_id,
    visit_months, then Q* trait columns.  Large trait counts can use the
    binary block format written by :func:`write_longitudinal_binary`,
    detected by its magic header.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
    if magic == _BINARY_MAGIC:
        return _read_longitudinal_binary(path)
    by_subject = {}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        if header[:2] != ["subject_id", "visit_months"]:
            raise DataError(f"{path}: expected columns subject_id, visit_months, ...")
        n_traits = len(header) - 2
        if n_traits < 1:
            raise DataError(f"{path}: no trait columns")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != n_traits + 2:
                raise DataError(f"{path}:{line_no}: expected {n_traits + 2} fields")
            subj = parts[0]
            visit = float(parts[1])
            row = np.array(parts[2:], dtype=np.float64)
            by_subject.setdefault(subj, {})[visit] = row
    if not by_subject:
        raise DataError(f"{path}: no rows")
    subjects = list(by_subject)
    visit_sets = {tuple(sorted(v)) for v in (by_subject[s] for s in subjects)}
    if len(visit_sets) != 1:
        raise DataError(f"{path}: subjects do not share a common visit-time set")
    times = np.array(sorted(visit_sets.pop()), dtype=np.float64)
    values = np.stack(
        [np.stack([by_subject[s][t] for t in times]) for s in subjects]
    )
    return LongitudinalTable(subjects, times, values)


def write_longitudinal_tsv(table, path):
    with open(path, "w") as fh:
        cols = "\t".join(f"trait{q}" for q in range(table.n_traits))
        fh.write(f"subject_id\tvisit_months\t{cols}\n")
        for i, subj in enumerate(table.subject_ids):
            for k, t in enumerate(table.visit_times):
                vals = "\t".join(f"{v:.10g}" for v in table.values[i, k])
                fh.write(f"{subj}\t{t:.10g}\t{vals}\n")


def write_longitudinal_binary(table, path):
    """Dense block format: magic, JSON header line, raw float64 block."""
    header = {
        "subject_ids": list(table.subject_ids),
        "visit_times": [float(t) for t in table.visit_times],
        "shape": list(table.values.shape),
    }
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(table.values, dtype="<f8").tobytes())


def _read_longitudinal_binary(path):
    with open(path, "rb") as fh:
        fh.read(len(_BINARY_MAGIC))
        header = json.loads(fh.readline().decode())
        shape = tuple(header["shape"])
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return LongitudinalTable(
        header["subject_ids"], np.array(header["visit_times"]), data.copy()
    )


def fit_slopes(table):
    """Ordinary least-squares slope of each trait against visit time.

    Fits value ~ intercept + time per (subject, trait); the slope
    coefficient summarises change over time.
    """
    t = table.visit_times
    if np.unique(t).size < 2:
        raise DataError("at least two distinct visit times are required")
    design = np.column_stack([np.ones_like(t), t])
    # (2, T) projector applied across all subjects and traits at once
    proj = np.linalg.pinv(design)
    slopes = np.einsum("t,ntq->nq", proj[1], table.values)
    return SlopeMatrix(values=slopes, subject_ids=list(table.subject_ids))


def ancova_filter(slopes, covariates, group_a, group_b, alpha=0.05):
    """Select traits discriminating two groups, adjusting for sex and age.

    For each trait, fits slope ~ group-indicator + sex + age over the
    subjects of the two compared groups and tests the group coefficient
    (F-test with 1 numerator degree of freedom, equivalently a squared
    t-test).  Traits whose p-value falls below the Bonferroni-corrected
    threshold ``alpha / n_traits`` are selected.

    Returns ``(selected trait indices, p-values for all traits)``.
    """
    cov = covariates.aligned_to(slopes.subject_ids)
    in_a = np.array([g == group_a for g in cov.group])
    in_b = np.array([g == group_b for g in cov.group])
    if in_a.sum() < 2 or in_b.sum() < 2:
        raise DataError("each compared group needs at least 2 subjects")
    rows = np.flatnonzero(in_a | in_b)
    indicator = in_a[rows].astype(np.float64)
    design = np.column_stack(
        [np.ones(rows.size), indicator, cov.sex[rows], cov.age[rows]]
    )
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DataError("ANCOVA design is rank deficient (collinear covariates)")
    dof = rows.size - design.shape[1]
    if dof < 1:
        raise DataError("not enough subjects for the ANCOVA degrees of freedom")
    y = slopes.values[rows]
    gram_inv = np.linalg.inv(design.T @ design)
    coefs = gram_inv @ (design.T @ y)
    resid = y - design @ coefs
    sigma2 = np.einsum("ij,ij->j", resid, resid) / dof
    se2 = sigma2 * gram_inv[1, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        f_stat = np.where(se2 > 0, coefs[1] ** 2 / se2, np.inf)
    pvalues = stats.f.sf(f_stat, 1, dof)
    threshold = alpha / slopes.values.shape[1]
    selected = np.flatnonzero(pvalues < threshold)
    logger.info(
        "ANCOVA selected %d of %d traits at threshold %.3g",
        selected.size, slopes.values.shape[1], threshold,
    )
    return selected, pvalues


def residualize(slopes, selected, covariates):
    """Residualise selected traits on (intercept, sex, age) over all subjects."""
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= slopes.values.shape[1]):
        raise DataError("selected trait index out of range")
    cov = covariates.aligned_to(slopes.subject_ids)
    design = np.column_stack(
        [np.ones(len(slopes.subject_ids)), cov.sex.astype(np.float64), cov.age]
    )
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DataError("residualization design is rank deficient")
    y = slopes.values[:, selected]
    coefs, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coefs
    resid -= resid.mean(axis=0)
    return PhenotypeMatrix(
        values=resid,
        subject_ids=list(slopes.subject_ids),
        selected_traits=selected,
    )


@dataclass
class ValidationReport:
    accuracy: float
    sensitivity: float
    specificity: float
    fold_rows: list              # (fold, n_test, accuracy)

    def write_tsv(self, path):
        with open(path, "w") as fh:
            fh.write("#fold\tn_test\taccuracy\n")
            for fold, n_test, acc in self.fold_rows:
                fh.write(f"{fold}\t{n_test}\t{acc:.6g}\n")
            fh.write(
                f"#summary\taccuracy={self.accuracy:.6g}\t"
                f"sensitivity={self.sensitivity:.6g}\t"
                f"specificity={self.specificity:.6g}\n"
            )


def validate_signature(phenotypes, labels, folds=10, seed=0):
    """Cross-validated two-class Gaussian classifier on the signature.

    Class-conditional Gaussian densities share a pooled diagonal
    covariance; test points go to the class with the higher log-density
    under equal priors.  Folds are stratified by class and seeded, so the
    estimate is deterministic in (labels, folds, seed).  Labels must be
    0/1 with 1 the positive class.
    """
    x = np.asarray(phenotypes, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape[0] != x.shape[0]:
        raise DataError("phenotypes and labels are inconsistent")
    classes = np.unique(y)
    if classes.size != 2 or not np.all(np.isin(classes, (0, 1))):
        raise DataError("labels must contain exactly the classes 0 and 1")
    for c in (0, 1):
        if (y == c).sum() < folds:
            raise DataError(f"class {c} has fewer members than folds={folds}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    tp = tn = fp = fn = 0
    fold_rows = []
    for fold in range(folds):
        test = fold_of == fold
        train = ~test
        pred = _gaussian_diag_predict(x[train], y[train], x[test])
        truth = y[test]
        tp += int(np.sum((pred == 1) & (truth == 1)))
        tn += int(np.sum((pred == 0) & (truth == 0)))
        fp += int(np.sum((pred == 1) & (truth == 0)))
        fn += int(np.sum((pred == 0) & (truth == 1)))
        fold_rows.append(
            (fold, int(test.sum()), float(np.mean(pred == truth)))
        )
    accuracy = (tp + tn) / y.size
    sensitivity = tp / (tp + fn) if tp + fn else float("nan")
    specificity = tn / (tn + fp) if tn + fp else float("nan")
    return ValidationReport(accuracy, sensitivity, specificity, fold_rows)


def _gaussian_diag_predict(x_train, y_train, x_test):
    means = {}
    ssq = np.zeros(x_train.shape[1])
    for c in (0, 1):
        xc = x_train[y_train == c]
        means[c] = xc.mean(axis=0)
        ssq += ((xc - means[c]) ** 2).sum(axis=0)
    pooled = ssq / max(x_train.shape[0] - 2, 1)
    mean_var = pooled.mean()
    if not mean_var > 0:
        raise DataError("pooled variance is zero in every dimension")
    pooled = np.maximum(pooled, 1e-9 * mean_var)
    log_dens = np.empty((x_test.shape[0], 2))
    for c in (0, 1):
        diff = x_test - means[c]
        log_dens[:, c] = -0.5 * np.sum(diff * diff / pooled, axis=1)
    return (log_dens[:, 1] > log_dens[:, 0]).astype(np.int64)
