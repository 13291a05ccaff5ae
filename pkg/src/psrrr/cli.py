"""Command-line pipeline: qc, map, phenotype, tune, fit, rank, snprank,
enrich, simulate.

Every command reads a JSON config (plus per-field overrides), writes its
artifacts and a stage manifest into the output directory, and is
re-entrant: when the manifest shows identical config and input hashes
and the outputs exist, the stage is skipped.  Tables are TSV with a
single '#' header line; metadata is JSON.

Exit codes: 0 success, 2 config error, 3 data error, 4 non-convergence
when the config flags it fatal.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import ConfigError, DataError
from .genotypes import (
    GenotypeMatrix,
    impute_missing,
    parse_covariates,
    parse_genotypes,
    qc_filter,
    standardize,
)
from .model import PsRRR, tune_weights
from .pathways import (
    PathwayAnnotation,
    expand_design,
    map_genes_to_pathways,
    map_snps_to_genes,
    parse_gene_locations,
    parse_gmt,
    write_mapping_report,
)
from .phenotypes import (
    ancova_filter,
    fit_slopes,
    parse_longitudinal,
    residualize,
    validate_signature,
)
from .ranking import (
    SubsampleRecord,
    enrichment_test,
    rank_pathways,
    rank_snps_genes,
)
from .simulate import SimulationSpec, write_dataset

logger = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """A stage failed to converge and the config flags that as fatal."""


@dataclass
class RunConfig:
    """All pipeline knobs; unset inputs are only required per command."""

    # input files
    genotypes: str = ""
    snp_metadata: str = ""
    covariates: str = ""
    gene_locations: str = ""
    gene_sets: str = ""
    longitudinal: str = ""
    targets: str = ""
    out: str = "psrrr_out"
    # quality control
    call_rate_min: float = 0.95
    hwe_p_min: float = 5e-7
    maf_min: float = 0.1
    autosomes_only: bool = True
    # mapping
    window_bp: int = 10000
    exclude_pathways: list = field(default_factory=list)
    # phenotype derivation
    group_a: str = "AD"
    group_b: str = "CN"
    alpha: float = 0.05
    folds: int = 10
    # model and ranking
    gamma: float = 0.8
    gamma_lasso: float = 0.8
    n_subsamples: int = 1000
    fraction: float = 0.5
    tol: float = 1e-4
    max_alt: int = 100
    solver_tol: float = 1e-6
    solver_max_outer: int = 1000
    # weight tuning
    eta: float = 0.5
    epsilon: float = 0.05
    fits_per_iter: int = 0          # 0 means the default 50 * n_pathways
    tune_max_iter: int = 30
    # enrichment
    n_perm: int = 100000
    # execution
    seed: int = -1                  # mandatory (>= 0) for tune/rank/snprank/enrich
    workers: int = 1
    fail_on_nonconvergence: bool = False
    # simulate block, passed through to SimulationSpec
    simulate: dict = field(default_factory=dict)
    disease_effect: float = 0.6

    def validate(self, command):
        problems = []

        def within(name, lo, hi, open_low=False, open_high=False):
            v = getattr(self, name)
            ok_lo = v > lo if open_low else v >= lo
            ok_hi = v < hi if open_high else v <= hi
            if not (ok_lo and ok_hi):
                problems.append(f"{name}={v} outside the allowed range")

        within("call_rate_min", 0, 1)
        within("maf_min", 0, 0.5)
        within("hwe_p_min", 0, 1)
        within("alpha", 0, 1, open_low=True)
        within("gamma", 0, 1, open_low=True, open_high=True)
        within("gamma_lasso", 0, 1, open_low=True, open_high=True)
        within("fraction", 0, 1, open_low=True, open_high=True)
        within("eta", 0, 1, open_low=True, open_high=True)
        if self.epsilon <= 0:
            problems.append(f"epsilon={self.epsilon} must be > 0")
        if self.window_bp < 0:
            problems.append(f"window_bp={self.window_bp} must be >= 0")
        for name in ("n_subsamples", "folds", "tune_max_iter", "max_alt",
                     "solver_max_outer", "n_perm", "workers"):
            if getattr(self, name) < 1:
                problems.append(f"{name}={getattr(self, name)} must be >= 1")
        if self.tol <= 0 or self.solver_tol <= 0:
            problems.append("tolerances must be > 0")
        if command in ("tune", "rank", "snprank", "enrich") and self.seed < 0:
            problems.append(f"seed must be set (>= 0) for the {command} command")
        required_inputs = {
            "qc": ["genotypes", "snp_metadata"],
            "map": ["gene_locations", "gene_sets"],
            "phenotype": ["longitudinal", "covariates"],
            "enrich": ["targets"],
        }
        for name in required_inputs.get(command, []):
            path = getattr(self, name)
            if not path:
                problems.append(f"input '{name}' is required for {command}")
            elif not os.path.exists(path):
                problems.append(f"input '{name}' not found: {path}")
        if problems:
            raise ConfigError(
                "invalid configuration:\n  - " + "\n  - ".join(problems)
            )

    @property
    def n_workers(self):
        env = os.environ.get("PSRRR_WORKERS")
        if env is not None:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"PSRRR_WORKERS={env!r} is not an integer")
        return self.workers


_CONFIG_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def load_config(path=None, overrides=()):
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
    problems = [k for k in data if k not in _CONFIG_FIELDS]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        if key not in _CONFIG_FIELDS:
            problems.append(key)
            continue
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    if problems:
        raise ConfigError(f"unknown config fields: {sorted(set(problems))}")
    return RunConfig(**data)


# ---------------------------------------------------------------------------
# manifests and artifact helpers

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(cfg, stage, names):
    return {name: getattr(cfg, name) for name in names}


def _manifest_path(out, stage):
    return Path(out) / f"{stage}_manifest.json"


def _is_fresh(cfg, stage, config_subset, inputs, outputs):
    path = _manifest_path(cfg.out, stage)
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("config") != json.loads(json.dumps(config_subset)):
        return False
    if manifest.get("inputs") != {str(p): _sha256(p) for p in inputs}:
        return False
    return all((Path(cfg.out) / name).exists() for name in outputs)


def _write_manifest(cfg, stage, config_subset, inputs, outputs, summary):
    manifest = {
        "stage": stage,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config_subset,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "summary": summary,
    }
    _manifest_path(cfg.out, stage).write_text(json.dumps(manifest, indent=2) + "\n")


def _write_matrix_tsv(path, matrix, row_ids, col_ids, id_label):
    with open(path, "w") as fh:
        fh.write("#" + id_label + "\t" + "\t".join(col_ids) + "\n")
        for rid, row in zip(row_ids, matrix):
            fh.write(rid + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")


def _read_matrix_tsv(path):
    with open(path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        col_ids = header[1:]
        row_ids, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            row_ids.append(parts[0])
            rows.append(np.array(parts[1:], dtype=np.float64))
    return np.vstack(rows), row_ids, col_ids


def _write_table(path, columns, rows):
    with open(path, "w") as fh:
        fh.write("#" + "\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _frame_rows(frame):
    return [tuple(rec) for rec in frame.itertuples(index=False)]


# ---------------------------------------------------------------------------
# stage artifact loaders

def _load_qc_genotypes(cfg):
    path = Path(cfg.out) / "genotype_qc.tsv"
    meta = Path(cfg.out) / "genotype_qc_snps.tsv"
    if not path.exists() or not meta.exists():
        raise DataError("run the qc command first (genotype_qc.tsv missing)")
    values, subject_ids, snp_ids = _read_matrix_tsv(path)
    chroms, positions = [], []
    with open(meta) as fh:
        fh.readline()
        for line in fh:
            _sid, c, p = line.rstrip("\n").split("\t")[:3]
            chroms.append(c)
            positions.append(int(p))
    return GenotypeMatrix(
        values=values, snp_ids=snp_ids, chromosomes=chroms,
        positions=np.array(positions), subject_ids=subject_ids,
    )


def _load_annotation(cfg):
    path = Path(cfg.out) / "annotation.json"
    if not path.exists():
        raise DataError("run the map command first (annotation.json missing)")
    data = json.loads(path.read_text())
    ann = PathwayAnnotation(
        names=data["names"],
        groups=[np.array(grp, dtype=np.int64) for grp in data["groups"]],
        genes=data["genes"],
        weights=np.array(data["weights"], dtype=np.float64),
        dropped=[tuple(d) for d in data["dropped"]],
        unmatched_genes=data["unmatched_genes"],
    )
    return ann, data["snp_to_genes"], data["snp_ids"]


def _load_phenotype(cfg):
    path = Path(cfg.out) / "phenotype.tsv"
    if not path.exists():
        raise DataError("run the phenotype command first (phenotype.tsv missing)")
    values, subject_ids, _ = _read_matrix_tsv(path)
    return values, subject_ids


def _load_weights(cfg, annotation):
    path = Path(cfg.out) / "weights.tsv"
    if not path.exists():
        logger.warning(
            "weights.tsv not found; using untuned sqrt(size) weights"
        )
        return annotation.weights
    by_name = {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            by_name[parts[0]] = float(parts[2])
    try:
        return np.array([by_name[name] for name in annotation.names])
    except KeyError as exc:
        raise DataError(f"weights.tsv is missing pathway {exc}")


def _build_design(cfg):
    g = _load_qc_genotypes(cfg)
    gs, dropped = standardize(g)
    if dropped:
        raise DataError(
            f"constant genotype columns after QC: {dropped[:5]} (rerun qc)"
        )
    ann, snp_to_genes, snp_ids = _load_annotation(cfg)
    if snp_ids != gs.snp_ids:
        raise DataError(
            "annotation.json was built against a different genotype_qc.tsv"
        )
    design = expand_design(gs, ann)
    return gs, ann, snp_to_genes, design


def _aligned_phenotype(cfg, subject_ids):
    values, pheno_subjects = _load_phenotype(cfg)
    if pheno_subjects != subject_ids:
        index = {s: i for i, s in enumerate(pheno_subjects)}
        missing = [s for s in subject_ids if s not in index]
        if missing:
            raise DataError(
                f"phenotype.tsv lacks subjects {missing[:5]} from the genotypes"
            )
        values = values[[index[s] for s in subject_ids]]
        values = values - values.mean(axis=0)
    return values


# ---------------------------------------------------------------------------
# stages

def run_qc(cfg):
    stage = "qc"
    key = _stage_key(cfg, stage, [
        "call_rate_min", "hwe_p_min", "maf_min", "autosomes_only",
    ])
    inputs = [cfg.genotypes, cfg.snp_metadata]
    outputs = ["qc_report.tsv", "genotype_qc.tsv", "genotype_qc_snps.tsv"]
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("qc outputs are fresh; skipping")
        return 0
    g = parse_genotypes(cfg.genotypes, cfg.snp_metadata)
    kept, report = qc_filter(
        g,
        call_rate_min=cfg.call_rate_min,
        hwe_p_min=cfg.hwe_p_min,
        maf_min=cfg.maf_min,
        autosomes_only=cfg.autosomes_only,
    )
    imputed = impute_missing(kept)
    out = Path(cfg.out)
    report.write_tsv(out / "qc_report.tsv")
    _write_matrix_tsv(
        out / "genotype_qc.tsv", imputed.values, imputed.subject_ids,
        imputed.snp_ids, "subject_id",
    )
    _write_table(
        out / "genotype_qc_snps.tsv",
        ["snp_id", "chromosome", "position"],
        zip(imputed.snp_ids, imputed.chromosomes, imputed.positions),
    )
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "n_input_snps": report.n_input,
        "n_retained": report.n_retained,
        "n_removed": report.n_removed,
        "n_subjects": imputed.n_subjects,
    })
    return 0


def run_map(cfg):
    stage = "map"
    key = _stage_key(cfg, stage, ["window_bp", "exclude_pathways"])
    inputs = [cfg.gene_locations, cfg.gene_sets,
              str(Path(cfg.out) / "genotype_qc_snps.tsv")]
    outputs = ["annotation.json", "mapping_report.tsv"]
    g = _load_qc_genotypes(cfg)
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("map outputs are fresh; skipping")
        return 0
    genes = parse_gene_locations(cfg.gene_locations)
    gene_sets = parse_gmt(cfg.gene_sets)
    snp_gene_map = map_snps_to_genes(
        g.chromosomes, g.positions, genes, window_bp=cfg.window_bp
    )
    ann = map_genes_to_pathways(
        gene_sets, snp_gene_map, exclude=cfg.exclude_pathways
    )
    out = Path(cfg.out)
    write_mapping_report(ann, snp_gene_map, g.snp_ids, out / "mapping_report.tsv")
    (out / "annotation.json").write_text(json.dumps({
        "names": ann.names,
        "groups": [[int(j) for j in grp] for grp in ann.groups],
        "genes": ann.genes,
        "weights": [float(w) for w in ann.weights],
        "dropped": ann.dropped,
        "unmatched_genes": ann.unmatched_genes,
        "snp_to_genes": snp_gene_map.snp_to_genes,
        "snp_ids": g.snp_ids,
        "window_bp": cfg.window_bp,
    }) + "\n")
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "n_pathways": ann.n_pathways,
        "n_mapped_snps": int(sum(1 for s in snp_gene_map.snp_to_genes if s)),
        "n_dropped_pathways": len(ann.dropped),
    })
    return 0


def run_phenotype(cfg):
    stage = "phenotype"
    key = _stage_key(cfg, stage, ["group_a", "group_b", "alpha", "folds", "seed"])
    inputs = [cfg.longitudinal, cfg.covariates]
    outputs = ["phenotype.tsv", "selected_traits.tsv", "validation_report.tsv"]
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("phenotype outputs are fresh; skipping")
        return 0
    table = parse_longitudinal(cfg.longitudinal)
    covariates = parse_covariates(cfg.covariates)
    slopes = fit_slopes(table)
    selected, pvalues = ancova_filter(
        slopes, covariates, cfg.group_a, cfg.group_b, alpha=cfg.alpha
    )
    if selected.size == 0:
        raise DataError("no trait passed the Bonferroni-corrected ANCOVA filter")
    pheno = residualize(slopes, selected, covariates)
    cov = covariates.aligned_to(slopes.subject_ids)
    contrast = [i for i, grp in enumerate(cov.group)
                if grp in (cfg.group_a, cfg.group_b)]
    labels = np.array(
        [1 if cov.group[i] == cfg.group_a else 0 for i in contrast]
    )
    report = validate_signature(
        pheno.values[contrast], labels, folds=cfg.folds, seed=max(cfg.seed, 0)
    )
    out = Path(cfg.out)
    _write_matrix_tsv(
        out / "phenotype.tsv", pheno.values, pheno.subject_ids,
        [f"trait{q}" for q in pheno.selected_traits], "subject_id",
    )
    _write_table(
        out / "selected_traits.tsv", ["trait_index", "p_value"],
        [(int(q), float(pvalues[q])) for q in selected],
    )
    report.write_tsv(out / "validation_report.tsv")
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "n_traits_input": int(slopes.values.shape[1]),
        "n_traits_selected": int(selected.size),
        "classifier_accuracy": report.accuracy,
        "classifier_sensitivity": report.sensitivity,
        "classifier_specificity": report.specificity,
    })
    return 0


def run_tune(cfg):
    stage = "tune"
    key = _stage_key(cfg, stage, [
        "eta", "epsilon", "fits_per_iter", "tune_max_iter", "seed", "gamma",
        "solver_tol", "solver_max_outer",
    ])
    inputs = [str(Path(cfg.out) / name) for name in
              ("genotype_qc.tsv", "annotation.json", "phenotype.tsv")]
    outputs = ["weights.tsv", "weight_state.json"]
    gs, ann, _snp_to_genes, design = _build_design(cfg)
    manifest_path = _manifest_path(cfg.out, stage)
    if _is_fresh(cfg, stage, key, inputs, outputs):
        previous = json.loads(manifest_path.read_text())
        if previous.get("summary", {}).get("converged"):
            logger.info("tune outputs are fresh and converged; skipping")
            return 0
    weights0 = None
    if (Path(cfg.out) / "weights.tsv").exists():
        weights0 = _load_weights(cfg, ann)
        logger.info("resuming weight tuning from the existing weights.tsv")
    Y = _aligned_phenotype(cfg, gs.subject_ids)
    state = tune_weights(
        design.matrix, Y, design.sizes, weights=weights0,
        eta=cfg.eta, epsilon=cfg.epsilon,
        fits_per_iter=cfg.fits_per_iter or None,
        max_iter=cfg.tune_max_iter, seed=cfg.seed, n_jobs=cfg.n_workers,
        solver_tol=cfg.solver_tol, solver_max_outer=cfg.solver_max_outer,
    )
    out = Path(cfg.out)
    state.write_tsv(out / "weights.tsv", names=ann.names, sizes=ann.sizes)
    (out / "weight_state.json").write_text(json.dumps({
        "eta": state.eta,
        "epsilon": state.epsilon,
        "seed": state.seed,
        "n_fits_per_iter": state.n_fits_per_iter,
        "iterations": state.iteration + 1,
        "converged": state.converged,
        "history": state.history,
    }, indent=2) + "\n")
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "converged": state.converged,
        "iterations": state.iteration + 1,
        "sum_abs_d": float(np.abs(state.discrepancy).sum()),
    })
    if cfg.fail_on_nonconvergence and not state.converged:
        raise NonConvergenceError("weight tuning did not converge")
    return 0


def run_fit(cfg):
    stage = "fit"
    key = _stage_key(cfg, stage, [
        "gamma", "tol", "max_alt", "solver_tol", "solver_max_outer",
    ])
    inputs = [str(Path(cfg.out) / name) for name in
              ("genotype_qc.tsv", "annotation.json", "phenotype.tsv")]
    outputs = ["fit.json", "genotype_loading.tsv", "phenotype_loading.tsv"]
    gs, ann, _snp_to_genes, design = _build_design(cfg)
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("fit outputs are fresh; skipping")
        return 0
    Y = _aligned_phenotype(cfg, gs.subject_ids)
    weights = _load_weights(cfg, ann)
    model = PsRRR(
        sizes=design.sizes, weights=weights, gamma=cfg.gamma, tol=cfg.tol,
        max_alt=cfg.max_alt, solver_tol=cfg.solver_tol,
        solver_max_outer=cfg.solver_max_outer,
    ).fit(design.matrix, Y)
    out = Path(cfg.out)
    _write_table(
        out / "genotype_loading.tsv",
        ["column", "pathway", "snp_id", "coefficient"],
        [
            (int(c), ann.names[design.column_pathway[c]],
             gs.snp_ids[design.column_snp[c]], float(model.b_[c]))
            for c in np.flatnonzero(model.b_)
        ],
    )
    _write_table(
        out / "phenotype_loading.tsv", ["trait", "coefficient"],
        [(q, float(v)) for q, v in enumerate(model.a_)],
    )
    (out / "fit.json").write_text(json.dumps({
        "selected_pathways": [ann.names[l] for l in model.selected_],
        "lambda": model.lam_,
        "alternations": model.n_alt_,
        "converged": model.converged_,
        "empty_selection": model.empty_selection_,
        "kkt_violation": model.kkt_violation_,
    }, indent=2) + "\n")
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "n_selected": int(model.selected_.size),
        "lambda": model.lam_,
        "converged": model.converged_,
    })
    if cfg.fail_on_nonconvergence and not model.converged_:
        raise NonConvergenceError("alternating estimation did not converge")
    return 0


def run_rank(cfg):
    stage = "rank"
    key = _stage_key(cfg, stage, [
        "gamma", "n_subsamples", "fraction", "seed", "tol", "max_alt",
        "solver_tol", "solver_max_outer",
    ])
    inputs = [str(Path(cfg.out) / name) for name in
              ("genotype_qc.tsv", "annotation.json", "phenotype.tsv")]
    weights_path = Path(cfg.out) / "weights.tsv"
    if weights_path.exists():
        inputs.append(str(weights_path))
    outputs = ["pathway_ranking.tsv", "subsamples.jsonl"]
    gs, ann, _snp_to_genes, design = _build_design(cfg)
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("rank outputs are fresh; skipping")
        return 0
    Y = _aligned_phenotype(cfg, gs.subject_ids)
    weights = _load_weights(cfg, ann)
    table, records = rank_pathways(
        design.matrix, Y, design.sizes, weights=weights, names=ann.names,
        gamma=cfg.gamma, n_subsamples=cfg.n_subsamples, fraction=cfg.fraction,
        seed=cfg.seed, n_jobs=cfg.n_workers, tol=cfg.tol, max_alt=cfg.max_alt,
        solver_tol=cfg.solver_tol, solver_max_outer=cfg.solver_max_outer,
    )
    if all(not rec.selected for rec in records):
        raise DataError(
            "no pathway was selected in any subsample; lower gamma"
        )
    out = Path(cfg.out)
    _write_table(
        out / "pathway_ranking.tsv", list(table.columns), _frame_rows(table)
    )
    with open(out / "subsamples.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")
    n_sel = [len(rec.selected) for rec in records]
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "n_subsamples": cfg.n_subsamples,
        "selection_mean": float(np.mean(n_sel)),
        "selection_min": int(np.min(n_sel)),
        "selection_max": int(np.max(n_sel)),
        "selection_sd": float(np.std(n_sel)),
        "n_nonconverged": int(sum(1 for rec in records if not rec.converged)),
    })
    if cfg.fail_on_nonconvergence and any(not rec.converged for rec in records):
        raise NonConvergenceError("some subsample fits did not converge")
    return 0


def run_snprank(cfg):
    stage = "snprank"
    key = _stage_key(cfg, stage, [
        "gamma_lasso", "seed", "tol", "max_alt", "solver_tol",
    ])
    inputs = [str(Path(cfg.out) / name) for name in
              ("genotype_qc.tsv", "annotation.json", "phenotype.tsv",
               "subsamples.jsonl")]
    outputs = ["snp_ranking.tsv", "gene_ranking.tsv"]
    gs, ann, snp_to_genes, design = _build_design(cfg)
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("snprank outputs are fresh; skipping")
        return 0
    Y = _aligned_phenotype(cfg, gs.subject_ids)
    records = []
    with open(Path(cfg.out) / "subsamples.jsonl") as fh:
        for line in fh:
            data = json.loads(line)
            records.append(SubsampleRecord(
                index=data["index"],
                rows=np.array(data["rows"], dtype=np.int64),
                selected=tuple(data["selected"]),
                block_norms={int(k): v for k, v in data["block_norms"].items()},
                lam=data["lam"],
                n_alt=data["n_alt"],
                converged=data["converged"],
            ))
    snp_table, gene_table, records = rank_snps_genes(
        records, gs.values, Y, ann.groups,
        pathway_genes=ann.genes, snp_to_genes=snp_to_genes,
        snp_ids=gs.snp_ids, gamma_lasso=cfg.gamma_lasso,
        n_jobs=cfg.n_workers, tol=cfg.tol, max_alt=cfg.max_alt,
        lasso_tol=cfg.solver_tol,
    )
    out = Path(cfg.out)
    _write_table(out / "snp_ranking.tsv", list(snp_table.columns),
                 _frame_rows(snp_table))
    _write_table(out / "gene_ranking.tsv", list(gene_table.columns),
                 _frame_rows(gene_table))
    with open(out / "subsamples.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")
    pool = [rec.n_snps_pool for rec in records if rec.selected]
    n_sel = [len(rec.snps) for rec in records if rec.selected]
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "pool_mean": float(np.mean(pool)) if pool else 0.0,
        "pool_min": int(np.min(pool)) if pool else 0,
        "pool_max": int(np.max(pool)) if pool else 0,
        "snps_selected_mean": float(np.mean(n_sel)) if n_sel else 0.0,
    })
    return 0


def run_enrich(cfg):
    stage = "enrich"
    key = _stage_key(cfg, stage, ["n_perm", "seed"])
    inputs = [cfg.targets, str(Path(cfg.out) / "pathway_ranking.tsv"),
              str(Path(cfg.out) / "annotation.json")]
    outputs = ["enrichment.json"]
    ranking_path = Path(cfg.out) / "pathway_ranking.tsv"
    if not ranking_path.exists():
        raise DataError("run the rank command first (pathway_ranking.tsv missing)")
    if _is_fresh(cfg, stage, key, inputs, outputs):
        logger.info("enrich outputs are fresh; skipping")
        return 0
    ann, _snp_to_genes, _snp_ids = _load_annotation(cfg)
    rank_by_name = {}
    with open(ranking_path) as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            rank_by_name[parts[1]] = int(parts[0])
    try:
        ranks = np.array([rank_by_name[name] for name in ann.names], dtype=float)
    except KeyError as exc:
        raise DataError(f"pathway_ranking.tsv is missing pathway {exc}")
    targets = [
        line.strip() for line in Path(cfg.targets).read_text().splitlines()
        if line.strip()
    ]
    result = enrichment_test(
        ranks, ann.genes, targets, n_perm=cfg.n_perm, seed=cfg.seed
    )
    (Path(cfg.out) / "enrichment.json").write_text(json.dumps({
        "score": result.score,
        "p_value": result.p_value,
        "n_targets_used": result.n_targets_used,
        "dropped_genes": result.dropped_genes,
        "n_permutations": result.n_permutations,
    }, indent=2) + "\n")
    _write_manifest(cfg, stage, key, inputs, outputs, {
        "score": result.score, "p_value": result.p_value,
    })
    return 0


def run_simulate(cfg):
    stage = "simulate"
    key = {"simulate": cfg.simulate, "disease_effect": cfg.disease_effect}
    outputs = ["genotypes.tsv", "snps.tsv", "covariates.tsv", "genes.tsv",
               "pathways.gmt", "longitudinal.tsv", "targets.txt", "truth.json"]
    if _is_fresh(cfg, stage, key, [], outputs):
        logger.info("simulate outputs are fresh; skipping")
        return 0
    try:
        spec = SimulationSpec(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in cfg.simulate.items()
        })
    except TypeError as exc:
        raise ConfigError(f"invalid simulate block: {exc}")
    write_dataset(spec, cfg.out, disease_effect=cfg.disease_effect)
    _write_manifest(cfg, stage, key, [], outputs, {
        "n_subjects": spec.n_subjects, "n_snps": spec.n_snps,
        "n_pathways": spec.n_pathways,
    })
    return 0


_COMMANDS = {
    "qc": run_qc,
    "map": run_map,
    "phenotype": run_phenotype,
    "tune": run_tune,
    "fit": run_fit,
    "rank": run_rank,
    "snprank": run_snprank,
    "enrich": run_enrich,
    "simulate": run_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="psrrr",
        description="Pathway-level sparse reduced-rank regression pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--workers", type=int, help="worker count")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override any config field (repeatable)",
        )
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = list(args.set)
        if args.out is not None:
            overrides.append(f"out={args.out}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        cfg = load_config(args.config, overrides)
        cfg.validate(args.command)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
