"""Genotype ingestion: file parsing, quality control, imputation, standardization.

Genotypes are minor-allele counts per (subject, SNP), read from a
tab-separated file with a header row of SNP identifiers and one row per
subject (subject id followed by fields from ``{0, 1, 2, NA}``).  SNP
metadata (chromosome, base-pair position) comes from a companion TSV.
Missing entries are carried as NaN until :func:`impute_missing` replaces
them by the per-SNP mean of observed counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from ._validation import AllSnpsFilteredError, DataError

logger = logging.getLogger(__name__)

AUTOSOMES = frozenset(str(c) for c in range(1, 23))
VALID_CHROMOSOMES = AUTOSOMES | {"X", "Y", "MT"}


@dataclass
class GenotypeMatrix:
    """N x P minor-allele count matrix with SNP and subject metadata.

    ``values`` holds float64 counts with NaN marking missing entries.
    After :func:`standardize`, each column has mean 0 and unit squared
    Euclidean norm, and ``standardized`` is True.
    """

    values: np.ndarray
    snp_ids: list
    chromosomes: list
    positions: np.ndarray
    subject_ids: list
    standardized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.values.ndim != 2:
            raise DataError("genotype values must be a 2-D matrix")
        n, p = self.values.shape
        if len(self.subject_ids) != n:
            raise DataError("subject_ids length does not match matrix rows")
        if not len(self.snp_ids) == len(self.chromosomes) == self.positions.size == p:
            raise DataError("SNP metadata length does not match matrix columns")
        if len(set(self.subject_ids)) != n:
            raise DataError("subject ids are not unique")
        if len(set(self.snp_ids)) != p:
            raise DataError("SNP ids are not unique")

    @property
    def n_subjects(self):
        return self.values.shape[0]

    @property
    def n_snps(self):
        return self.values.shape[1]

    @property
    def missing_mask(self):
        return np.isnan(self.values)

    @property
    def n_missing(self):
        return int(np.isnan(self.values).sum())

    def take_snps(self, indices):
        """New matrix restricted to the given SNP column indices."""
        idx = np.asarray(indices, dtype=np.int64)
        return GenotypeMatrix(
            values=self.values[:, idx].copy(),
            snp_ids=[self.snp_ids[i] for i in idx],
            chromosomes=[self.chromosomes[i] for i in idx],
            positions=self.positions[idx].copy(),
            subject_ids=list(self.subject_ids),
            standardized=self.standardized,
        )


@dataclass
class SnpQCRecord:
    snp_id: str
    chromosome: str
    call_rate: float
    maf: float
    hwe_p: float
    removed: bool
    reasons: tuple


@dataclass
class QCReport:
    """Per-SNP quality-control metrics and removal tags."""

    records: list
    thresholds: dict

    @property
    def n_input(self):
        return len(self.records)

    @property
    def n_removed(self):
        return sum(1 for r in self.records if r.removed)

    @property
    def n_retained(self):
        return self.n_input - self.n_removed

    def removed_by(self, reason):
        return [r.snp_id for r in self.records if reason in r.reasons]

    def write_tsv(self, path):
        with open(path, "w") as fh:
            fh.write("#snp_id\tchromosome\tcall_rate\tmaf\thwe_p\tremoved\treasons\n")
            for r in self.records:
                fh.write(
                    f"{r.snp_id}\t{r.chromosome}\t{r.call_rate:.6g}\t{r.maf:.6g}\t"
                    f"{r.hwe_p:.6g}\t{int(r.removed)}\t{','.join(r.reasons) or '-'}\n"
                )
            fh.write(
                f"#summary\tinput={self.n_input}\tretained={self.n_retained}\t"
                f"removed={self.n_removed}\n"
            )


@dataclass
class CovariateTable:
    """Per-subject covariates: age in years, sex coded 0/1, group label."""

    subject_ids: list
    age: np.ndarray
    sex: np.ndarray
    group: list

    def __post_init__(self):
        self.age = np.asarray(self.age, dtype=np.float64)
        self.sex = np.asarray(self.sex, dtype=np.int64)
        n = len(self.subject_ids)
        if len(set(self.subject_ids)) != n:
            raise DataError("covariate subject ids are not unique")
        if not self.age.size == self.sex.size == len(self.group) == n:
            raise DataError("covariate columns have inconsistent lengths")
        if not np.all(np.isin(self.sex, (0, 1))):
            raise DataError("sex must be coded 0/1")

    def aligned_to(self, subject_ids):
        """Reorder rows to match the given subject id sequence."""
        index = {s: i for i, s in enumerate(self.subject_ids)}
        missing = [s for s in subject_ids if s not in index]
        if missing:
            raise DataError(f"covariates missing for subjects: {missing[:5]}...")
        order = [index[s] for s in subject_ids]
        return CovariateTable(
            subject_ids=list(subject_ids),
            age=self.age[order],
            sex=self.sex[order],
            group=[self.group[i] for i in order],
        )


def _parse_count(token, path, line_no):
    if token == "NA":
        return np.nan
    if token in ("0", "1", "2"):
        return float(token)
    raise DataError(f"{path}:{line_no}: invalid genotype token {token!r}")


def parse_snp_metadata(path):
    """Read SNP metadata TSV (snp_id, chromosome, position) into a dict."""
    meta = {}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        if header[:3] != ["snp_id", "chromosome", "position"]:
            raise DataError(f"{path}: expected columns snp_id, chromosome, position")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                raise DataError(f"{path}:{line_no}: expected 3 fields")
            snp_id, chrom, pos = parts[0], parts[1], parts[2]
            if chrom not in VALID_CHROMOSOMES:
                raise DataError(f"{path}:{line_no}: unknown chromosome {chrom!r}")
            if snp_id in meta:
                raise DataError(f"{path}:{line_no}: duplicate SNP id {snp_id!r}")
            meta[snp_id] = (chrom, int(pos))
    return meta


def parse_genotypes(genotype_path, snp_metadata_path):
    """Parse genotype and SNP-metadata files into a :class:`GenotypeMatrix`.

    The genotype file is TSV with header ``subject_id`` followed by SNP
    ids, then one row per subject with allele counts in {0, 1, 2, NA}.
    """
    meta = parse_snp_metadata(snp_metadata_path)
    with open(genotype_path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        if len(header) < 2:
            raise DataError(f"{genotype_path}: header must list at least one SNP")
        snp_ids = header[1:]
        if len(set(snp_ids)) != len(snp_ids):
            raise DataError(f"{genotype_path}: duplicate SNP id in header")
        unknown = [s for s in snp_ids if s not in meta]
        if unknown:
            raise DataError(
                f"{genotype_path}: SNPs missing from metadata: {unknown[:5]}"
            )
        subject_ids = []
        rows = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(snp_ids) + 1:
                raise DataError(
                    f"{genotype_path}:{line_no}: expected {len(snp_ids) + 1} "
                    f"fields, got {len(parts)}"
                )
            subject_ids.append(parts[0])
            rows.append(
                [_parse_count(tok, genotype_path, line_no) for tok in parts[1:]]
            )
    if not rows:
        raise DataError(f"{genotype_path}: no subject rows")
    values = np.array(rows, dtype=np.float64)
    return GenotypeMatrix(
        values=values,
        snp_ids=snp_ids,
        chromosomes=[meta[s][0] for s in snp_ids],
        positions=np.array([meta[s][1] for s in snp_ids], dtype=np.int64),
        subject_ids=subject_ids,
        standardized=False,
    )


def write_genotype_files(g, genotype_path, snp_metadata_path):
    """Write a genotype matrix back to the two input file formats."""
    with open(snp_metadata_path, "w") as fh:
        fh.write("snp_id\tchromosome\tposition\n")
        for sid, chrom, pos in zip(g.snp_ids, g.chromosomes, g.positions):
            fh.write(f"{sid}\t{chrom}\t{int(pos)}\n")
    with open(genotype_path, "w") as fh:
        fh.write("subject_id\t" + "\t".join(g.snp_ids) + "\n")
        for i, subj in enumerate(g.subject_ids):
            tokens = [
                "NA" if np.isnan(v) else str(int(round(v))) for v in g.values[i]
            ]
            fh.write(subj + "\t" + "\t".join(tokens) + "\n")


def parse_covariates(path):
    """Read covariates TSV (subject_id, age, sex, group)."""
    subject_ids, age, sex, group = [], [], [], []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        if header[:4] != ["subject_id", "age", "sex", "group"]:
            raise DataError(f"{path}: expected columns subject_id, age, sex, group")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 4:
                raise DataError(f"{path}:{line_no}: expected 4 fields")
            subject_ids.append(parts[0])
            try:
                age.append(float(parts[1]))
                sex.append(int(parts[2]))
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
            group.append(parts[3])
    return CovariateTable(subject_ids, np.array(age), np.array(sex), group)


def write_covariates(cov, path):
    with open(path, "w") as fh:
        fh.write("subject_id\tage\tsex\tgroup\n")
        for s, a, x, grp in zip(cov.subject_ids, cov.age, cov.sex, cov.group):
            fh.write(f"{s}\t{a:.6g}\t{int(x)}\t{grp}\n")


def hwe_pvalue(n_hom_minor, n_het, n_hom_major):
    """Hardy-Weinberg equilibrium p-value from genotype counts.

    One-degree-of-freedom chi-square goodness-of-fit of observed genotype
    counts against the expected proportions at the observed allele
    frequency.  A monomorphic SNP returns 1 by convention.
    """
    counts = np.array([n_hom_minor, n_het, n_hom_major], dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("genotype counts must be non-negative")
    n = counts.sum()
    if n <= 0:
        raise ValueError("total genotype count must be positive")
    p = (2 * counts[0] + counts[1]) / (2 * n)
    if p <= 0.0 or p >= 1.0:
        return 1.0
    expected = n * np.array([p * p, 2 * p * (1 - p), (1 - p) * (1 - p)])
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(stats.chi2.sf(chi2, df=1))


def _snp_metrics(column):
    """(call_rate, maf, hwe_p) for one genotype column with NaN missing."""
    observed = column[~np.isnan(column)]
    call_rate = observed.size / column.size
    if observed.size == 0:
        return call_rate, 0.0, 1.0
    freq = observed.sum() / (2.0 * observed.size)
    maf = min(freq, 1.0 - freq)
    n2 = int((observed == 2).sum())
    n1 = int((observed == 1).sum())
    n0 = int((observed == 0).sum())
    return call_rate, maf, hwe_pvalue(n2, n1, n0)


def qc_filter(
    g,
    call_rate_min=0.95,
    hwe_p_min=5e-7,
    maf_min=0.1,
    autosomes_only=True,
):
    """Apply per-SNP quality-control filters.

    Removes SNPs with call rate below ``call_rate_min``, Hardy-Weinberg
    p-value below ``hwe_p_min``, minor allele frequency below ``maf_min``,
    and (optionally) SNPs outside autosomes.  Each removed SNP is tagged
    with every criterion it violated.  Metrics use observed (non-missing)
    genotypes only.
    """
    if g.standardized:
        raise DataError("qc_filter expects unstandardized allele counts")
    records = []
    keep = []
    for j in range(g.n_snps):
        call_rate, maf, hwe_p = _snp_metrics(g.values[:, j])
        reasons = []
        if call_rate < call_rate_min:
            reasons.append("call_rate")
        if hwe_p < hwe_p_min:
            reasons.append("hwe")
        if maf < maf_min:
            reasons.append("maf")
        if autosomes_only and g.chromosomes[j] not in AUTOSOMES:
            reasons.append("non_autosomal")
        removed = bool(reasons)
        if not removed:
            keep.append(j)
        records.append(
            SnpQCRecord(
                snp_id=g.snp_ids[j],
                chromosome=g.chromosomes[j],
                call_rate=call_rate,
                maf=maf,
                hwe_p=hwe_p,
                removed=removed,
                reasons=tuple(reasons),
            )
        )
    report = QCReport(
        records=records,
        thresholds={
            "call_rate_min": call_rate_min,
            "hwe_p_min": hwe_p_min,
            "maf_min": maf_min,
            "autosomes_only": autosomes_only,
        },
    )
    if not keep:
        raise AllSnpsFilteredError("no SNPs passed quality control")
    logger.info(
        "QC retained %d of %d SNPs (%d removed)",
        report.n_retained,
        report.n_input,
        report.n_removed,
    )
    return g.take_snps(keep), report


def impute_missing(g):
    """Replace missing entries by the per-SNP mean of observed counts."""
    values = g.values.copy()
    mask = np.isnan(values)
    if not mask.any():
        return replace(g, values=values)
    all_missing = mask.all(axis=0)
    if all_missing.any():
        bad = [g.snp_ids[j] for j in np.flatnonzero(all_missing)[:5]]
        raise DataError(f"SNPs with no observed genotypes: {bad}")
    col_means = np.nanmean(values, axis=0)
    rows, cols = np.nonzero(mask)
    values[rows, cols] = col_means[cols]
    return replace(g, values=values)


def standardize(g, on_constant="drop"):
    """Mean-centre each SNP column and scale to unit Euclidean norm.

    Zero-variance columns cannot be scaled; depending on ``on_constant``
    they are dropped (returned in the second element) or raise.
    Returns ``(standardized_matrix, dropped_snp_ids)``.
    """
    if np.isnan(g.values).any():
        raise DataError("standardize requires imputed (no-missing) genotypes")
    if on_constant not in ("drop", "error"):
        raise ValueError("on_constant must be 'drop' or 'error'")
    centred = g.values - g.values.mean(axis=0)
    norms = np.linalg.norm(centred, axis=0)
    constant = norms <= 1e-12 * max(1.0, float(np.abs(g.values).max()))
    dropped = [g.snp_ids[j] for j in np.flatnonzero(constant)]
    if dropped and on_constant == "error":
        raise DataError(f"zero-variance SNP columns: {dropped[:5]}")
    if dropped:
        logger.warning("dropping %d zero-variance SNP columns", len(dropped))
        keep = np.flatnonzero(~constant)
        centred = centred[:, keep]
        norms = norms[keep]
        base = g.take_snps(keep)
    else:
        base = g
    out = replace(base, values=centred / norms, standardized=True)
    return out, dropped
