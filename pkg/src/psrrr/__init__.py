"""Pathways sparse reduced-rank regression (PsRRR).

Group-lasso penalised rank-1 reduced-rank regression that identifies
groups of predictors (gene pathways) jointly associated with a
high-dimensional quantitative response, with adaptive group-weight
tuning, stability-selection ranking, and the supporting genotype and
phenotype preparation pipeline.
"""

from .genotypes import (
    CovariateTable,
    GenotypeMatrix,
    QCReport,
    hwe_pvalue,
    impute_missing,
    parse_covariates,
    parse_genotypes,
    qc_filter,
    standardize,
)
from .model import PsRRR, WeightState, tune_weights, update_a
from .pathways import (
    ExpandedDesign,
    PathwayAnnotation,
    SnpGeneMap,
    expand_design,
    init_weights,
    map_genes_to_pathways,
    map_snps_to_genes,
    mapping_stats,
)
from .phenotypes import (
    PhenotypeMatrix,
    ancova_filter,
    fit_slopes,
    residualize,
    validate_signature,
)
from .ranking import (
    SubsampleRecord,
    enrichment_test,
    rank_pathways,
    rank_snps_genes,
    subsample_rows,
)
from .simulate import SimulationSpec, gen_genotypes, null_phenotype, plant_rank1_phenotype
from .solver import (
    GroupLasso,
    SolverResult,
    active_set_solve,
    group_lasso_bcd,
    group_objective,
    kkt_check,
    lambda_max,
    lasso_cd,
    lasso_lambda_max,
)

__version__ = "0.1.0"

__all__ = [
    "CovariateTable",
    "ExpandedDesign",
    "GenotypeMatrix",
    "GroupLasso",
    "PathwayAnnotation",
    "PhenotypeMatrix",
    "PsRRR",
    "QCReport",
    "SimulationSpec",
    "SnpGeneMap",
    "SolverResult",
    "SubsampleRecord",
    "WeightState",
    "active_set_solve",
    "ancova_filter",
    "enrichment_test",
    "expand_design",
    "fit_slopes",
    "gen_genotypes",
    "group_lasso_bcd",
    "group_objective",
    "hwe_pvalue",
    "impute_missing",
    "init_weights",
    "kkt_check",
    "lambda_max",
    "lasso_cd",
    "lasso_lambda_max",
    "map_genes_to_pathways",
    "map_snps_to_genes",
    "mapping_stats",
    "null_phenotype",
    "parse_covariates",
    "parse_genotypes",
    "plant_rank1_phenotype",
    "qc_filter",
    "rank_pathways",
    "rank_snps_genes",
    "residualize",
    "standardize",
    "subsample_rows",
    "tune_weights",
    "update_a",
    "validate_signature",
]
