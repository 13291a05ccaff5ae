"""SNP-to-gene-to-pathway mapping and the overlap-expanded design matrix.

SNPs are assigned to genes lying within a base-pair window (inclusive on
both boundaries) on the same chromosome, and thence to every pathway
containing such a gene.  Because pathways overlap, SNP columns shared by
several pathways are duplicated so that each pathway becomes an
independent contiguous block of the expanded design matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._validation import DataError
from .genotypes import VALID_CHROMOSOMES

logger = logging.getLogger(__name__)

_CHROM_ORDER = {c: i for i, c in enumerate([str(k) for k in range(1, 23)] + ["X", "Y", "MT"])}


@dataclass
class GeneLocation:
    symbol: str
    chromosome: str
    start: int
    end: int

    def __post_init__(self):
        if self.chromosome not in VALID_CHROMOSOMES:
            raise DataError(f"gene {self.symbol}: unknown chromosome {self.chromosome!r}")
        if self.start > self.end:
            raise DataError(f"gene {self.symbol}: start {self.start} > end {self.end}")


def parse_gene_locations(path):
    """Read gene locations TSV (gene_symbol, chromosome, start_bp, end_bp)."""
    genes = []
    seen = set()
    with open(path) as fh:
        header = fh.readline().rstrip("\n").lstrip("#").split("\t")
        if header[:4] != ["gene_symbol", "chromosome", "start_bp", "end_bp"]:
            raise DataError(
                f"{path}: expected columns gene_symbol, chromosome, start_bp, end_bp"
            )
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 4:
                raise DataError(f"{path}:{line_no}: expected 4 fields")
            symbol = parts[0].upper()
            if symbol in seen:
                raise DataError(f"{path}:{line_no}: duplicate gene symbol {symbol!r}")
            seen.add(symbol)
            genes.append(
                GeneLocation(symbol, parts[1], int(parts[2]), int(parts[3]))
            )
    return genes


def parse_gmt(path):
    """Parse a GMT gene-set file into [(name, description, [gene symbols])]."""
    sets_ = []
    seen = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise DataError(f"{path}:{line_no}: GMT line needs name, "
                                "description and at least one gene")
            name, description = parts[0], parts[1]
            if name in seen:
                raise DataError(f"{path}:{line_no}: duplicate pathway name {name!r}")
            seen.add(name)
            genes = [g.upper() for g in parts[2:] if g]
            sets_.append((name, description, genes))
    if not sets_:
        raise DataError(f"{path}: no gene sets found")
    return sets_


@dataclass
class SnpGeneMap:
    """Bidirectional SNP-gene window mapping.

    ``snp_to_genes[j]`` lists gene symbols within the window of SNP ``j``;
    ``gene_to_snps`` maps each gene symbol to a sorted array of SNP
    indices.  The two views are mutually consistent by construction.
    """

    snp_to_genes: list
    gene_to_snps: dict
    window_bp: int
    snp_order_key: np.ndarray  # (P, 2) [chromosome rank, position]

    @property
    def unmapped_snps(self):
        return [j for j, genes in enumerate(self.snp_to_genes) if not genes]


def map_snps_to_genes(chromosomes, positions, gene_locations, window_bp=10000):
    """Map SNPs to genes within ``window_bp`` base pairs, inclusive.

    SNP ``j`` maps to gene ``g`` iff they share a chromosome and
    ``start(g) - window <= position(j) <= end(g) + window``.
    """
    if window_bp < 0:
        raise ValueError("window_bp must be >= 0")
    positions = np.asarray(positions, dtype=np.int64)
    chromosomes = list(chromosomes)
    for c in chromosomes:
        if c not in VALID_CHROMOSOMES:
            raise DataError(f"unknown chromosome {c!r} in SNP metadata")
    snp_to_genes = [[] for _ in range(len(chromosomes))]
    gene_to_snps = {}
    by_chrom = {}
    for j, c in enumerate(chromosomes):
        by_chrom.setdefault(c, []).append(j)
    for gene in gene_locations:
        snp_idx = by_chrom.get(gene.chromosome)
        if snp_idx is None:
            continue
        idx = np.asarray(snp_idx)
        pos = positions[idx]
        inside = (pos >= gene.start - window_bp) & (pos <= gene.end + window_bp)
        hits = idx[inside]
        if hits.size:
            symbol = gene.symbol.upper()
            gene_to_snps[symbol] = np.sort(hits)
            for j in hits:
                snp_to_genes[j].append(symbol)
    order_key = np.column_stack(
        [np.array([_CHROM_ORDER[c] for c in chromosomes], dtype=np.int64), positions]
    )
    return SnpGeneMap(
        snp_to_genes=snp_to_genes,
        gene_to_snps=gene_to_snps,
        window_bp=window_bp,
        snp_order_key=order_key,
    )


@dataclass
class PathwayAnnotation:
    """L pathway groups of SNP indices, with sizes, weights and genes.

    Groups may overlap: a SNP can belong to several pathways.  Group
    weights default to sqrt(size) via :func:`init_weights`.
    """

    names: list
    groups: list              # per pathway, sorted array of SNP indices
    genes: list               # per pathway, gene symbols with >=1 mapped SNP
    weights: np.ndarray
    dropped: list             # (name, reason) for pathways dropped at build
    unmatched_genes: list     # gene-set symbols with no located/mapped SNPs

    @property
    def n_pathways(self):
        return len(self.names)

    @property
    def sizes(self):
        return np.array([len(g) for g in self.groups], dtype=np.int64)

    def snp_pathway_counts(self, n_snps):
        """Number of pathways containing each SNP (0 for unmapped SNPs)."""
        counts = np.zeros(n_snps, dtype=np.int64)
        for grp in self.groups:
            counts[grp] += 1
        return counts


def init_weights(sizes):
    """Initial group weights: the square root of each group size."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes < 1):
        raise ValueError("group sizes must be >= 1")
    return np.sqrt(sizes)


def map_genes_to_pathways(gene_sets, snp_gene_map, exclude=()):
    """Build pathway SNP groups from gene sets and the SNP-gene map.

    Each pathway's group is the union of SNP indices over its matched
    genes, sorted by (chromosome, position).  Pathways named in
    ``exclude`` or mapping zero SNPs are dropped with a report entry.
    """
    exclude = {name for name in exclude}
    names, groups, genes_per_pathway = [], [], []
    dropped = []
    matched_symbols = set()
    all_symbols = set()
    key = snp_gene_map.snp_order_key
    for name, _description, symbols in gene_sets:
        symbols = [s.upper() for s in symbols]
        all_symbols.update(symbols)
        if name in exclude:
            dropped.append((name, "excluded"))
            continue
        snps = set()
        matched = []
        for sym in symbols:
            hits = snp_gene_map.gene_to_snps.get(sym)
            if hits is not None:
                snps.update(int(j) for j in hits)
                matched.append(sym)
                matched_symbols.add(sym)
        if not snps:
            dropped.append((name, "no_mapped_snps"))
            logger.info("dropping pathway %s: no mapped SNPs", name)
            continue
        idx = np.fromiter(snps, dtype=np.int64, count=len(snps))
        order = np.lexsort((idx, key[idx, 1], key[idx, 0]))
        names.append(name)
        groups.append(idx[order])
        genes_per_pathway.append(sorted(matched))
    if not names:
        raise DataError("no pathway has any mapped SNPs")
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    unmatched = sorted(all_symbols - matched_symbols)
    if unmatched:
        logger.info("%d gene-set symbols had no mapped SNPs", len(unmatched))
    return PathwayAnnotation(
        names=names,
        groups=groups,
        genes=genes_per_pathway,
        weights=init_weights(sizes),
        dropped=dropped,
        unmatched_genes=unmatched,
    )


@dataclass
class ExpandedDesign:
    """Column-wise concatenation of every pathway's SNP columns.

    The matrix has P* = sum of group sizes columns; pathway l owns the
    contiguous block ``offsets[l] : offsets[l] + sizes[l]``.  Each column
    is a copy of the source standardized SNP column, so a SNP in k
    pathways appears k times.
    """

    matrix: np.ndarray
    column_snp: np.ndarray      # original SNP index per expanded column
    column_pathway: np.ndarray  # pathway index per expanded column
    offsets: np.ndarray
    sizes: np.ndarray

    @property
    def n_columns(self):
        return self.matrix.shape[1]

    @property
    def n_pathways(self):
        return self.offsets.size

    def block(self, l):
        return self.matrix[:, self.offsets[l]: self.offsets[l] + self.sizes[l]]


def expand_design(g, annotation):
    """Materialize the overlap-expanded design from standardized genotypes."""
    if not g.standardized:
        raise DataError("expand_design requires a standardized genotype matrix")
    sizes = annotation.sizes
    p_star = int(sizes.sum())
    offsets = np.zeros(len(sizes), dtype=np.int64)
    np.cumsum(sizes[:-1], out=offsets[1:])
    column_snp = np.empty(p_star, dtype=np.int64)
    column_pathway = np.empty(p_star, dtype=np.int64)
    for l, grp in enumerate(annotation.groups):
        if grp.size and (grp.min() < 0 or grp.max() >= g.n_snps):
            raise DataError(
                f"pathway {annotation.names[l]} references a SNP index outside "
                f"the genotype matrix (was it removed by QC?)"
            )
        sl = slice(offsets[l], offsets[l] + sizes[l])
        column_snp[sl] = grp
        column_pathway[sl] = l
    matrix = np.asfortranarray(g.values[:, column_snp])
    return ExpandedDesign(
        matrix=matrix,
        column_snp=column_snp,
        column_pathway=column_pathway,
        offsets=offsets,
        sizes=sizes,
    )


@dataclass
class MappingStats:
    """Summary of pathway sizes and SNP overlap counts."""

    n_pathways: int
    n_mapped_snps: int
    size_min: int
    size_max: int
    size_mean: float
    size_histogram: tuple       # (bin_edges, counts)
    overlap_min: int
    overlap_max: int
    overlap_mean: float
    overlap_histogram: tuple


def mapping_stats(annotation, n_snps=None):
    """Pathway-size and SNP-overlap distributions for a built annotation."""
    sizes = annotation.sizes
    if n_snps is None:
        n_snps = max(int(grp.max()) for grp in annotation.groups) + 1
    counts = annotation.snp_pathway_counts(n_snps)
    overlaps = counts[counts > 0]
    size_edges, size_counts = _histogram(sizes)
    ov_edges, ov_counts = _histogram(overlaps)
    return MappingStats(
        n_pathways=annotation.n_pathways,
        n_mapped_snps=int(overlaps.size),
        size_min=int(sizes.min()),
        size_max=int(sizes.max()),
        size_mean=float(sizes.mean()),
        size_histogram=(size_edges, size_counts),
        overlap_min=int(overlaps.min()),
        overlap_max=int(overlaps.max()),
        overlap_mean=float(overlaps.mean()),
        overlap_histogram=(ov_edges, ov_counts),
    )


def _histogram(values, bins=10):
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts


def write_mapping_report(annotation, snp_gene_map, snp_ids, path):
    """Per-pathway mapping counts plus unmatched-gene and unmapped-SNP lists."""
    with open(path, "w") as fh:
        fh.write("#pathway\tn_genes_matched\tn_snps\n")
        for name, genes, grp in zip(annotation.names, annotation.genes, annotation.groups):
            fh.write(f"{name}\t{len(genes)}\t{len(grp)}\n")
        for name, reason in annotation.dropped:
            fh.write(f"#dropped\t{name}\t{reason}\n")
        if annotation.unmatched_genes:
            fh.write("#unmatched_genes\t" + ",".join(annotation.unmatched_genes) + "\n")
        unmapped = snp_gene_map.unmapped_snps
        if unmapped:
            ids = ",".join(snp_ids[j] for j in unmapped)
            fh.write(f"#unmapped_snps\t{ids}\n")
