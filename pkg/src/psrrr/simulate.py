"""Synthetic data generation for testing and calibration.

Genotypes are drawn through a latent Gaussian copula: within an LD block
each of the two allele draws follows an AR(1) Gaussian process across
SNPs, thresholded at the quantile matching the SNP's minor allele
frequency, and the two independent draws are summed to a {0, 1, 2}
count.  The attained inter-SNP correlation is therefore approximate (it
is attenuated by thresholding) and should be measured, not assumed.

Phenotypes follow the generative model Y = X b a + E with a group-sparse
b supported on causal pathways and independent Gaussian noise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as _stats

from ._validation import ConfigError, DataError
from .genotypes import GenotypeMatrix
from .pathways import PathwayAnnotation, init_weights

logger = logging.getLogger(__name__)


@dataclass
class SimulationSpec:
    """Parameters of a synthetic dataset."""

    n_subjects: int = 200
    n_snps: int = 2000
    n_pathways: int = 20
    size_min: int = 20
    size_max: int = 200
    overlap_rate: float = 0.1
    maf_min: float = 0.1
    maf_max: float = 0.5
    ld_block_size: int = 10
    ld_rho: float = 0.2
    causal_pathways: tuple = (0,)
    causal_snps_per_pathway: int = 10
    noise_sd: float = 0.1
    n_traits: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.maf_min <= self.maf_max <= 0.5:
            raise ConfigError("MAF range must satisfy 0 < min <= max <= 0.5")
        if not 0.0 <= self.ld_rho < 1.0:
            raise ConfigError("ld_rho must lie in [0, 1)")
        if not 0.0 <= self.overlap_rate < 1.0:
            raise ConfigError("overlap_rate must lie in [0, 1)")
        if any(c < 0 or c >= self.n_pathways for c in self.causal_pathways):
            raise ConfigError("causal pathways must index into 0..n_pathways-1")
        if not 1 <= self.size_min <= self.size_max:
            raise ConfigError("pathway size range is invalid")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, default=list)


def _rng(spec, *key):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, *key]))


def gen_genotypes(spec):
    """Draw a genotype matrix with block-AR(1) linkage structure.

    Deterministic in the spec seed; per-block substreams keep columns
    independent of generation order.
    """
    p = spec.n_snps
    maf = _rng(spec, 1).uniform(spec.maf_min, spec.maf_max, size=p)
    thresholds = _stats.norm.ppf(maf)
    counts = np.empty((spec.n_subjects, p), dtype=np.float64)
    n_blocks = (p + spec.ld_block_size - 1) // spec.ld_block_size
    for block in range(n_blocks):
        lo = block * spec.ld_block_size
        hi = min(lo + spec.ld_block_size, p)
        rng = _rng(spec, 2, block)
        for allele in range(2):
            latent = _ar1_latent(rng, spec.n_subjects, hi - lo, spec.ld_rho)
            alleles = (latent < thresholds[lo:hi]).astype(np.float64)
            if allele == 0:
                counts[:, lo:hi] = alleles
            else:
                counts[:, lo:hi] += alleles
    chroms, positions = _snp_coordinates(p)
    return GenotypeMatrix(
        values=counts,
        snp_ids=[f"snp{j:06d}" for j in range(p)],
        chromosomes=chroms,
        positions=positions,
        subject_ids=[f"subj{i:05d}" for i in range(spec.n_subjects)],
        standardized=False,
    )


def _ar1_latent(rng, n, width, rho):
    eps = rng.standard_normal((n, width))
    if rho == 0.0 or width == 1:
        return eps
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    scale = np.sqrt(1.0 - rho * rho)
    for k in range(1, width):
        out[:, k] = rho * out[:, k - 1] + scale * eps[:, k]
    return out


def _snp_coordinates(p, spacing=1_000_000):
    """Autosomal coordinates with wide spacing (1 Mb) so that window
    mapping captures exactly the genes built around each SNP."""
    per_chrom = (p + 21) // 22
    chroms, positions = [], []
    for j in range(p):
        chroms.append(str(j // per_chrom + 1))
        positions.append((j % per_chrom + 1) * spacing)
    return chroms, np.array(positions, dtype=np.int64)


def gen_annotation(spec):
    """Pathway groups: contiguous disjoint blocks plus random overlap.

    Base sizes are drawn uniformly from [size_min, size_max] and rescaled
    to cover the n_snps SNPs; a fraction ``overlap_rate`` of SNPs is then
    added to one additional uniformly-chosen pathway each.
    """
    rng = _rng(spec, 3)
    L = spec.n_pathways
    raw = rng.integers(spec.size_min, spec.size_max + 1, size=L).astype(np.float64)
    sizes = np.maximum(1, np.round(raw / raw.sum() * spec.n_snps)).astype(np.int64)
    sizes[-1] = spec.n_snps - sizes[:-1].sum()
    if sizes[-1] < 1:
        raise ConfigError("pathway sizes do not fit n_snps; widen the size range")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    member_lists = [
        list(range(bounds[l], bounds[l + 1])) for l in range(L)
    ]
    n_extra = int(round(spec.overlap_rate * spec.n_snps))
    extra_snps = rng.choice(spec.n_snps, size=n_extra, replace=False)
    base_of = np.searchsorted(bounds, extra_snps, side="right") - 1
    for j, home in zip(extra_snps, base_of):
        others = [l for l in range(L) if l != home]
        member_lists[others[int(rng.integers(L - 1))]].append(int(j))
    groups = [np.array(sorted(m), dtype=np.int64) for m in member_lists]
    group_sizes = np.array([g.size for g in groups], dtype=np.int64)
    return PathwayAnnotation(
        names=[f"PATHWAY_{l:03d}" for l in range(L)],
        groups=groups,
        genes=[[] for _ in range(L)],
        weights=init_weights(group_sizes),
        dropped=[],
        unmatched_genes=[],
    )


def plant_rank1_phenotype(g, annotation, spec, design=None):
    """Phenotypes from the rank-1 model with group-sparse causal SNPs.

    Causal SNPs are drawn uniformly without replacement inside each
    causal pathway; their coefficients get random signs and equal
    magnitude, normalised so the expanded loading ``b*`` has unit norm.
    ``Y = X b* a* + E`` with independent mean-0, sd ``noise_sd`` errors,
    then mean-centred.  Overlapping SNPs may carry signal into other
    pathways containing them; that is the intended behaviour.

    Returns ``(Y, b_star, a_star)`` with ``b_star`` in expanded
    coordinates when ``design`` is given (entries on the causal
    pathway's block), otherwise in original SNP coordinates.
    """
    if not g.standardized:
        raise DataError("plant_rank1_phenotype requires standardized genotypes")
    rng = _rng(spec, 4)
    causal = []
    for l in spec.causal_pathways:
        grp = annotation.groups[l]
        if spec.causal_snps_per_pathway > grp.size:
            raise ConfigError(
                f"pathway {l} has {grp.size} SNPs, fewer than "
                f"causal_snps_per_pathway={spec.causal_snps_per_pathway}"
            )
        chosen = rng.choice(grp, size=spec.causal_snps_per_pathway, replace=False)
        causal.extend((int(l), int(j)) for j in np.sort(chosen))
    n_causal = len(causal)
    signs = rng.choice((-1.0, 1.0), size=n_causal)
    magnitude = 1.0 / np.sqrt(n_causal)
    beta = np.zeros(g.n_snps)
    for (_l, j), s in zip(causal, signs):
        beta[j] += s * magnitude
    a_star = rng.standard_normal(spec.n_traits)
    a_star /= np.linalg.norm(a_star)
    score = g.values @ beta
    noise = rng.standard_normal((g.n_subjects, spec.n_traits)) * spec.noise_sd
    Y = np.outer(score, a_star) + noise
    Y -= Y.mean(axis=0)
    if design is not None:
        b_star = np.zeros(design.n_columns)
        for (l, j), s in zip(causal, signs):
            cols = np.flatnonzero(
                (design.column_pathway == l) & (design.column_snp == j)
            )
            b_star[cols[0]] = s * magnitude
        norm = np.linalg.norm(b_star)
        b_star = b_star / norm if norm else b_star
    else:
        b_star = beta
    return Y, b_star, a_star


def noise_sd_for_marginal_r2(n_causal, r2, n_subjects, n_traits=1,
                             signal_norm2=1.0):
    """Noise level giving each causal SNP a marginal R^2 of about ``r2``.

    The marginal model is the usual genome-wide screen: one SNP against
    one observed trait.  With unit-norm standardized SNP columns, an
    equal-magnitude unit-norm loading over ``n_causal`` SNPs and a unit
    trait loading spread over ``n_traits`` responses, the per-(SNP,
    trait) R^2 is roughly (1/n_causal) / (||Xb*||^2 + N*Q*sigma^2), so
    sigma^2 = (1/(n_causal*r2) - ||Xb*||^2) / (N*Q).  With ``n_traits=1``
    this is the R^2 against the single latent phenotype score.
    """
    target = 1.0 / (n_causal * r2)
    if target <= signal_norm2:
        raise ConfigError(
            f"marginal r2={r2} is unattainable with {n_causal} causal SNPs"
        )
    return float(np.sqrt((target - signal_norm2) / (n_subjects * n_traits)))


def null_phenotype(n_subjects, n_traits, seed=0):
    """Independent standard-normal phenotype matrix, mean-centred."""
    if n_subjects < 1 or n_traits < 1:
        raise ConfigError("n_subjects and n_traits must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    Y = rng.standard_normal((n_subjects, n_traits))
    return Y - Y.mean(axis=0)


def _gene_runs(group, chromosomes):
    """Split a sorted SNP index group into runs of consecutive indices on
    one chromosome; each run becomes one synthetic gene."""
    runs = []
    current = [int(group[0])]
    for j in group[1:]:
        j = int(j)
        prev = current[-1]
        if j == prev + 1 and chromosomes[j] == chromosomes[prev]:
            current.append(j)
        else:
            runs.append(current)
            current = [j]
    runs.append(current)
    return runs


def write_dataset(spec, out_dir, disease_effect=0.6, visit_times=(6.0, 12.0, 24.0)):
    """Write a complete synthetic dataset in the pipeline's input formats.

    Emits genotype, SNP-metadata, covariate, gene-location, gene-set
    (GMT), longitudinal-trait and target-gene files, plus a truth.json
    with the planted structure.  Genes are built as intervals covering
    runs of consecutive member SNPs, so window mapping at 10 kb
    reconstructs exactly the generated pathway groups (SNPs are spaced
    1 Mb apart).

    Disease labels follow the latent genotype score: subjects in the top
    quartile are "AD", the bottom quartile "CN", the rest "MCI", and each
    trait's longitudinal slope adds ``disease_effect * code * a*_q`` so
    the trait signature is driven by the same planted factor.
    """
    from pathlib import Path

    from .genotypes import standardize, write_covariates, write_genotype_files
    from .genotypes import CovariateTable
    from .phenotypes import LongitudinalTable, write_longitudinal_tsv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = gen_genotypes(spec)
    ann = gen_annotation(spec)
    gs, dropped = standardize(g)
    if dropped:
        raise DataError(
            "simulated genotypes contain constant columns; raise maf_min"
        )
    Y, beta, a_star = plant_rank1_phenotype(gs, ann, spec)
    write_genotype_files(g, out / "genotypes.tsv", out / "snps.tsv")

    # genes and gene sets reconstructing the annotation through mapping
    gene_names_per_pathway = []
    with open(out / "genes.tsv", "w") as fh:
        fh.write("gene_symbol\tchromosome\tstart_bp\tend_bp\n")
        for l, grp in enumerate(ann.groups):
            names = []
            for k, run in enumerate(_gene_runs(grp, g.chromosomes)):
                name = f"GENE_{l:03d}_{k:03d}"
                names.append(name)
                fh.write(
                    f"{name}\t{g.chromosomes[run[0]]}\t"
                    f"{int(g.positions[run[0]])}\t{int(g.positions[run[-1]])}\n"
                )
            gene_names_per_pathway.append(names)
    with open(out / "pathways.gmt", "w") as fh:
        for name, genes in zip(ann.names, gene_names_per_pathway):
            fh.write(name + "\tsynthetic\t" + "\t".join(genes) + "\n")

    # disease labels from the latent genotype score
    rng = _rng(spec, 5)
    score = gs.values @ beta
    noisy = score + rng.standard_normal(score.size) * (0.5 * score.std() + 1e-12)
    q25, q75 = np.quantile(noisy, [0.25, 0.75])
    group = ["AD" if v >= q75 else "CN" if v <= q25 else "MCI" for v in noisy]
    code = np.array([{"AD": 1.0, "MCI": 0.5, "CN": 0.0}[grp] for grp in group])
    cov = CovariateTable(
        subject_ids=list(g.subject_ids),
        age=rng.normal(75.0, 5.0, g.n_subjects),
        sex=rng.integers(0, 2, g.n_subjects),
        group=group,
    )
    write_covariates(cov, out / "covariates.tsv")

    # longitudinal trajectories whose per-trait slopes carry the planted
    # factor plus a disease shift along the same trait loading, so the
    # derived signature keeps the genetic factor's direction
    slopes = Y + disease_effect * np.outer(code, a_star)
    times = np.asarray(visit_times, dtype=np.float64)
    values = slopes[:, None, :] * times[None, :, None]
    table = LongitudinalTable(
        subject_ids=list(g.subject_ids), visit_times=times, values=values
    )
    write_longitudinal_tsv(table, out / "longitudinal.tsv")

    # enrichment targets: genes of causal pathways covering causal SNPs
    causal_snps = np.flatnonzero(beta)
    targets = []
    for l in spec.causal_pathways:
        for name, run in zip(
            gene_names_per_pathway[l], _gene_runs(ann.groups[l], g.chromosomes)
        ):
            if any(j in causal_snps for j in run):
                targets.append(name)
    with open(out / "targets.txt", "w") as fh:
        fh.write("\n".join(targets) + "\n")

    truth = {
        "spec": json.loads(spec.to_json()),
        "causal_pathways": [ann.names[l] for l in spec.causal_pathways],
        "causal_snp_ids": [g.snp_ids[j] for j in causal_snps],
        "target_genes": targets,
        "disease_effect": disease_effect,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    logger.info("wrote synthetic dataset to %s", out)
    return truth
