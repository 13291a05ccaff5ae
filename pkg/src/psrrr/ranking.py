"""Stability-selection ranking of pathways, SNPs and genes.

Pathways are ranked by how often the rank-1 model selects them across
repeated fits on row subsamples of the data.  A second selection level
runs a lasso-penalised rank-1 fit over the deduplicated SNPs of each
subsample's selected pathways, giving SNP and gene selection
frequencies.  A permutation test scores the enrichment of a target gene
list among highly-ranked pathways.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._validation import ConfigError, DataError, as_float_matrix
from .model import PsRRR, fit_rank1_lasso

logger = logging.getLogger(__name__)


def subsample_rows(n, fraction=0.5, seed=0, b=0):
    """Deterministic draw of floor(fraction*n) distinct row indices.

    The stream is keyed by (seed, b), so the same pair always yields the
    same set regardless of execution order or worker count.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    k = int(np.floor(fraction * n))
    if k < 2:
        raise DataError(f"subsample of {k} rows is too small")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))
    return np.sort(rng.choice(n, size=k, replace=False))


def standardize_columns(M):
    """Mean-centre columns and scale to unit norm; zero-variance columns
    become all-zero (inert for the solvers)."""
    M = M - M.mean(axis=0)
    norms = np.linalg.norm(M, axis=0)
    nonzero = norms > 0
    M[:, nonzero] /= norms[nonzero]
    return np.asfortranarray(M)


@dataclass
class SubsampleRecord:
    """Everything recorded about one subsample's fits."""

    index: int
    rows: np.ndarray
    selected: tuple              # pathway indices chosen by the group model
    block_norms: dict            # pathway index -> coefficient block norm
    lam: float
    n_alt: int
    converged: bool
    snps: tuple = ()             # second-level selected original SNP indices
    genes: tuple = ()            # second-level attributed gene symbols
    n_snps_pool: int = 0         # deduplicated SNP count entering level two
    lam_lasso: float = 0.0

    def to_json_dict(self):
        return {
            "index": int(self.index),
            "rows": [int(r) for r in self.rows],
            "selected": [int(l) for l in self.selected],
            "block_norms": {str(k): float(v) for k, v in self.block_norms.items()},
            "lam": float(self.lam),
            "n_alt": int(self.n_alt),
            "converged": bool(self.converged),
            "snps": [int(j) for j in self.snps],
            "genes": list(self.genes),
            "n_snps_pool": int(self.n_snps_pool),
            "lam_lasso": float(self.lam_lasso),
        }


def _fit_one_subsample(X, Y, sizes, weights, gamma, fraction, seed, b,
                       tol, max_alt, solver_tol, solver_max_outer):
    rows = subsample_rows(X.shape[0], fraction, seed, b)
    Xs = standardize_columns(X[rows].copy())
    Ys = Y[rows] - Y[rows].mean(axis=0)
    model = PsRRR(
        sizes=sizes, weights=weights, gamma=gamma, tol=tol, max_alt=max_alt,
        solver_tol=solver_tol, solver_max_outer=solver_max_outer,
        validate=False,
    ).fit(Xs, Ys)
    return SubsampleRecord(
        index=b,
        rows=rows,
        selected=tuple(int(l) for l in model.selected_),
        block_norms=model.block_norms(),
        lam=model.lam_,
        n_alt=model.n_alt_,
        converged=model.converged_,
    )


def rank_pathways(
    X,
    Y,
    sizes,
    weights=None,
    names=None,
    gamma=0.8,
    n_subsamples=1000,
    fraction=0.5,
    seed=0,
    n_jobs=1,
    tol=1e-4,
    max_alt=100,
    solver_tol=1e-6,
    solver_max_outer=1000,
):
    """Pathway selection frequencies over repeated subsample fits.

    For each subsample the expanded design columns are re-standardized
    and the phenotype re-centred on the retained rows before fitting the
    rank-1 model at ``gamma * lambda_max``.  Returns the ranking table
    (rank, pathway, selection frequency, size) and the per-subsample
    records.  Results are deterministic in (seed, n_subsamples, fraction,
    gamma, weights) and independent of ``n_jobs``.
    """
    X = np.asfortranarray(np.asarray(X, dtype=np.float64))
    Y = as_float_matrix(Y, "Y")
    sizes = np.asarray(sizes, dtype=np.int64)
    records = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(_fit_one_subsample)(
            X, Y, sizes, weights, gamma, fraction, seed, b,
            tol, max_alt, solver_tol, solver_max_outer,
        )
        for b in range(n_subsamples)
    )
    counts = np.zeros(sizes.size, dtype=np.int64)
    for rec in records:
        for l in rec.selected:
            counts[l] += 1
    if not counts.any():
        logger.warning(
            "no pathway was selected in any of the %d subsamples "
            "(gamma too aggressive for the data?)", n_subsamples,
        )
    table = _ranking_table(
        ids=np.arange(sizes.size),
        names=names if names is not None else [f"pathway{l}" for l in range(sizes.size)],
        frequencies=counts / float(n_subsamples),
        sizes=sizes,
        id_column="pathway",
    )
    return table, records


def _ranking_table(ids, names, frequencies, sizes, id_column):
    frame = pd.DataFrame(
        {
            id_column: names,
            "pi": frequencies,
            "size": sizes,
            "_id": ids,
        }
    )
    frame = frame.sort_values(
        ["pi", id_column], ascending=[False, True], kind="mergesort"
    ).reset_index(drop=True)
    frame.insert(0, "rank", np.arange(1, len(frame) + 1))
    return frame.drop(columns="_id")


def _second_level_one(rec, geno_std, Y, groups, group_sets, pathway_genes,
                      snp_to_genes, gamma_lasso, tol, max_alt,
                      lasso_tol, lasso_max_iter):
    if not rec.selected:
        return rec
    pool = np.unique(np.concatenate([groups[l] for l in rec.selected]))
    rows = rec.rows
    Xs = standardize_columns(geno_std[np.ix_(rows, pool)])
    Ys = Y[rows] - Y[rows].mean(axis=0)
    beta, _a, lam_lasso, _n_alt, _conv = fit_rank1_lasso(
        Xs, Ys, gamma=gamma_lasso, tol=tol, max_alt=max_alt,
        lasso_tol=lasso_tol, lasso_max_iter=lasso_max_iter,
    )
    snps = tuple(int(j) for j in pool[np.flatnonzero(beta)])
    genes = set()
    for j in snps:
        mapped = snp_to_genes[j] if snp_to_genes is not None else ()
        if not mapped:
            continue
        for l in rec.selected:
            if j in group_sets[l]:
                genes.update(g for g in mapped if g in pathway_genes[l])
    rec.snps = snps
    rec.genes = tuple(sorted(genes))
    rec.n_snps_pool = int(pool.size)
    rec.lam_lasso = float(lam_lasso)
    return rec


def rank_snps_genes(
    records,
    geno_std,
    Y,
    groups,
    pathway_genes=None,
    snp_to_genes=None,
    snp_ids=None,
    gamma_lasso=0.8,
    n_jobs=1,
    tol=1e-4,
    max_alt=100,
    lasso_tol=1e-6,
    lasso_max_iter=1000,
):
    """Second-level SNP and gene selection frequencies.

    For each subsample with a nonempty pathway selection, a rank-1 lasso
    fit runs over the deduplicated union of SNPs in the selected
    pathways (each SNP once, regardless of how many pathways carry it),
    on the same row subsample.  A gene is attributed when one of its
    mapped SNPs is selected inside a selected pathway that contains both
    the SNP and the gene, so a shared SNP selected only via pathway A
    never credits a gene that sits in pathway B alone.

    Empty subsamples contribute zero counts but stay in the denominator.
    Returns (snp_table, gene_table, records); the records are updated in
    place with the second-level outcomes.
    """
    geno_std = np.asarray(geno_std, dtype=np.float64)
    Y = as_float_matrix(Y, "Y")
    if pathway_genes is None:
        pathway_genes = [frozenset() for _ in groups]
    else:
        pathway_genes = [frozenset(g) for g in pathway_genes]
    group_sets = [frozenset(int(j) for j in grp) for grp in groups]
    records = Parallel(n_jobs=n_jobs, backend="threading")(
        delayed(_second_level_one)(
            rec, geno_std, Y, groups, group_sets, pathway_genes, snp_to_genes,
            gamma_lasso, tol, max_alt, lasso_tol, lasso_max_iter,
        )
        for rec in records
    )
    n = len(records)
    if n == 0:
        raise DataError("no subsample records supplied")
    if all(not rec.selected for rec in records):
        logger.warning("every subsample had an empty pathway selection")
    snp_universe = np.unique(np.concatenate(groups))
    snp_counts = {int(j): 0 for j in snp_universe}
    gene_universe = sorted(set().union(*pathway_genes)) if pathway_genes else []
    gene_counts = {g: 0 for g in gene_universe}
    for rec in records:
        for j in rec.snps:
            snp_counts[j] += 1
        for g in rec.genes:
            gene_counts[g] += 1
    snp_names = (
        [snp_ids[j] for j in snp_universe]
        if snp_ids is not None
        else [f"snp{j}" for j in snp_universe]
    )
    snp_table = _ranking_table(
        ids=snp_universe,
        names=snp_names,
        frequencies=np.array([snp_counts[int(j)] for j in snp_universe]) / n,
        sizes=np.array(
            [len(snp_to_genes[int(j)]) if snp_to_genes is not None else 0
             for j in snp_universe]
        ),
        id_column="snp",
    )
    snp_table = snp_table.rename(columns={"size": "n_genes"})
    gene_sizes = np.array(
        [sum(1 for pg in pathway_genes if g in pg) for g in gene_universe]
    )
    gene_table = _ranking_table(
        ids=np.arange(len(gene_universe)),
        names=gene_universe,
        frequencies=np.array([gene_counts[g] for g in gene_universe]) / n
        if gene_universe
        else np.array([]),
        sizes=gene_sizes,
        id_column="gene",
    )
    gene_table = gene_table.rename(columns={"size": "n_pathways"})
    return snp_table, gene_table, records


@dataclass
class EnrichmentResult:
    score: float
    p_value: float
    n_targets_used: int
    dropped_genes: list
    n_permutations: int


def enrichment_test(ranks, pathway_genes, target_genes, n_perm=100000, seed=0):
    """Permutation test for target-gene enrichment among top pathway ranks.

    Each target gene scores the average rank of the pathways containing
    it; the observed score sums these over target genes (low = enriched
    near the top).  The null redistributes the existing ranks uniformly
    over pathways; the p-value is the proportion of permuted scores
    strictly lower than the observed one, so ties count against
    significance.  Target genes contained in no ranked pathway are
    dropped and reported.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    L = ranks.size
    if L != len(pathway_genes):
        raise DataError("ranks and pathway_genes lengths differ")
    sets_ = [frozenset(g) for g in pathway_genes]
    membership = []
    used, dropped = [], []
    for g in dict.fromkeys(target_genes):
        row = np.fromiter((g in s for s in sets_), dtype=np.float64, count=L)
        if row.any():
            membership.append(row)
            used.append(g)
        else:
            dropped.append(g)
    if not used:
        raise DataError("no target gene belongs to any ranked pathway")
    M = np.vstack(membership)
    m = M.sum(axis=1)
    observed = float(np.sum(M @ ranks / m))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    lower = 0
    chunk = 20000
    for start in range(0, n_perm, chunk):
        count = min(chunk, n_perm - start)
        perm_ranks = rng.permuted(
            np.broadcast_to(ranks, (count, L)).copy(), axis=1
        )
        scores = (M @ perm_ranks.T) / m[:, None]
        lower += int(np.sum(scores.sum(axis=0) < observed))
    return EnrichmentResult(
        score=observed,
        p_value=lower / float(n_perm),
        n_targets_used=len(used),
        dropped_genes=dropped,
        n_permutations=int(n_perm),
    )
