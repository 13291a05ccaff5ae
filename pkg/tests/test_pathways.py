import numpy as np
import pytest

from psrrr._validation import DataError
from psrrr.genotypes import GenotypeMatrix, standardize
from psrrr.pathways import (
    GeneLocation,
    expand_design,
    init_weights,
    map_genes_to_pathways,
    map_snps_to_genes,
    mapping_stats,
    parse_gene_locations,
    parse_gmt,
)


def snp_map(chroms, positions, genes, window=10000):
    return map_snps_to_genes(chroms, positions, genes, window_bp=window)


class TestSnpGeneMapping:
    def test_inclusive_boundary(self):
        genes = [GeneLocation("G1", "1", 50000, 60000)]
        m = snp_map(["1", "1"], [40000, 39999], genes)
        assert m.snp_to_genes[0] == ["G1"]   # exactly start - window
        assert m.snp_to_genes[1] == []       # one base pair further out
        assert m.unmapped_snps == [1]

    def test_downstream_boundary(self):
        genes = [GeneLocation("G1", "1", 50000, 60000)]
        m = snp_map(["1", "1"], [70000, 70001], genes)
        assert m.snp_to_genes[0] == ["G1"]
        assert m.snp_to_genes[1] == []

    def test_chromosome_must_match(self):
        genes = [GeneLocation("G1", "2", 50000, 60000)]
        m = snp_map(["1"], [55000], genes)
        assert m.snp_to_genes[0] == []

    def test_brute_force_oracle(self, rng):
        chroms = [str(rng.integers(1, 5)) for _ in range(1000)]
        positions = rng.integers(1, 2_000_000, size=1000)
        genes = []
        for k in range(50):
            start = int(rng.integers(1, 1_900_000))
            genes.append(
                GeneLocation(f"G{k}", str(rng.integers(1, 5)), start,
                             start + int(rng.integers(1, 50_000)))
            )
        window = 10000
        m = snp_map(chroms, positions, genes, window)
        for j in range(1000):
            expected = sorted(
                g.symbol
                for g in genes
                if g.chromosome == chroms[j]
                and g.start - window <= positions[j] <= g.end + window
            )
            assert sorted(m.snp_to_genes[j]) == expected
        # the two views agree
        for sym, snps in m.gene_to_snps.items():
            for j in snps:
                assert sym in m.snp_to_genes[j]

    def test_gene_interval_validation(self):
        with pytest.raises(DataError, match="start"):
            GeneLocation("G1", "1", 100, 50)
        with pytest.raises(DataError, match="chromosome"):
            GeneLocation("G1", "banana", 10, 50)

    def test_unknown_snp_chromosome(self):
        with pytest.raises(DataError, match="unknown chromosome"):
            snp_map(["weird"], [100], [GeneLocation("G1", "1", 10, 50)])


def build_map_for_pathways():
    """Five SNPs; G1 -> {2, 5 -> index 1,4}, G2 -> {0}, G3 -> {}, shared G4."""
    chroms = ["1"] * 5
    positions = [100_000, 200_000, 300_000, 400_000, 500_000]
    genes = [
        GeneLocation("G1", "1", 195_000, 205_000),   # snp 1
        GeneLocation("G1B", "1", 495_000, 505_000),  # snp 4
        GeneLocation("G2", "1", 95_000, 105_000),    # snp 0
        GeneLocation("G4", "1", 295_000, 305_000),   # snp 2, shared
    ]
    return snp_map(chroms, positions, genes, window=1000)


class TestPathwayBuilding:
    def test_union_of_gene_snps(self):
        m = build_map_for_pathways()
        ann = map_genes_to_pathways(
            [("pwA", "", ["G1", "G1B"]), ("pwB", "", ["G2"])], m
        )
        assert ann.names == ["pwA", "pwB"]
        np.testing.assert_array_equal(ann.groups[0], [1, 4])
        np.testing.assert_array_equal(ann.groups[1], [0])
        assert list(ann.sizes) == [2, 1]

    def test_shared_gene_appears_in_both(self):
        m = build_map_for_pathways()
        ann = map_genes_to_pathways(
            [("pwA", "", ["G1", "G4"]), ("pwB", "", ["G2", "G4"])], m
        )
        assert 2 in ann.groups[0] and 2 in ann.groups[1]

    def test_zero_snp_pathway_dropped(self):
        m = build_map_for_pathways()
        ann = map_genes_to_pathways(
            [("pwA", "", ["G1"]), ("pwEmpty", "", ["NOPE"])], m
        )
        assert ann.names == ["pwA"]
        assert ("pwEmpty", "no_mapped_snps") in ann.dropped
        assert "NOPE" in ann.unmatched_genes

    def test_exclude_list(self):
        m = build_map_for_pathways()
        ann = map_genes_to_pathways(
            [("pwA", "", ["G1"]), ("pwB", "", ["G2"])], m, exclude=["pwB"]
        )
        assert ann.names == ["pwA"]
        assert ("pwB", "excluded") in ann.dropped

    def test_case_insensitive_gene_match(self):
        chroms, positions = ["1"], [100_000]
        genes = parse_gene_locations_from(
            [("ApoE", "1", 95_000, 105_000)]
        )
        m = snp_map(chroms, positions, genes, window=1000)
        ann = map_genes_to_pathways([("pw", "", ["apoe"])], m)
        assert list(ann.groups[0]) == [0]

    def test_snp_pathway_count_histogram_matches_recount(self, rng):
        n_snps = 300
        chroms = ["1"] * n_snps
        positions = (np.arange(n_snps) + 1) * 100_000
        genes = []
        for k in range(40):
            lo, hi = np.sort(rng.integers(n_snps, size=2))
            genes.append(
                GeneLocation(f"G{k}", "1",
                             int(positions[lo]) - 500, int(positions[hi]) + 500)
            )
        m = snp_map(chroms, positions, genes, window=1000)
        gene_sets = [
            (f"pw{i}", "", [f"G{k}" for k in rng.choice(40, size=5, replace=False)])
            for i in range(12)
        ]
        try:
            ann = map_genes_to_pathways(gene_sets, m)
        except DataError:
            pytest.skip("random draw produced no mapped pathway")
        counts = ann.snp_pathway_counts(n_snps)
        brute = np.zeros(n_snps, dtype=int)
        for grp in ann.groups:
            for j in grp:
                brute[j] += 1
        np.testing.assert_array_equal(counts, brute)

    def test_order_independence_of_inputs(self):
        m = build_map_for_pathways()
        sets_a = [("pwA", "", ["G1", "G4"]), ("pwB", "", ["G2"])]
        sets_b = [("pwA", "", ["G4", "G1"]), ("pwB", "", ["G2"])]
        ann_a = map_genes_to_pathways(sets_a, m)
        ann_b = map_genes_to_pathways(sets_b, m)
        assert ann_a.names == ann_b.names
        for ga, gb in zip(ann_a.groups, ann_b.groups):
            np.testing.assert_array_equal(ga, gb)

    def test_group_independence_under_drop(self):
        m = build_map_for_pathways()
        full = map_genes_to_pathways(
            [("pwA", "", ["G1"]), ("pwB", "", ["G2"]), ("pwC", "", ["G4"])], m
        )
        without = map_genes_to_pathways(
            [("pwA", "", ["G1"]), ("pwC", "", ["G4"])], m
        )
        np.testing.assert_array_equal(full.groups[0], without.groups[0])
        np.testing.assert_array_equal(full.groups[2], without.groups[1])


def parse_gene_locations_from(rows):
    return [GeneLocation(sym.upper(), c, s, e) for sym, c, s, e in rows]


class TestInitWeights:
    def test_examples(self):
        np.testing.assert_allclose(init_weights([4]), [2.0])
        np.testing.assert_allclose(init_weights([1]), [1.0])

    def test_square_is_size(self, rng):
        sizes = rng.integers(1, 1000, size=50)
        w = init_weights(sizes)
        np.testing.assert_allclose(w ** 2, sizes, rtol=1e-12)


def standardized_matrix(n, p, seed=0):
    rng = np.random.default_rng(seed)
    g = GenotypeMatrix(
        values=rng.integers(0, 3, size=(n, p)).astype(float),
        snp_ids=[f"s{j}" for j in range(p)],
        chromosomes=["1"] * p,
        positions=(np.arange(p) + 1) * 1000,
        subject_ids=[f"i{i}" for i in range(n)],
    )
    out, _ = standardize(g)
    return out


class TestExpandDesign:
    def make_annotation(self, groups, n_snps):
        from psrrr.pathways import PathwayAnnotation

        groups = [np.asarray(g, dtype=np.int64) for g in groups]
        return PathwayAnnotation(
            names=[f"pw{i}" for i in range(len(groups))],
            groups=groups,
            genes=[[] for _ in groups],
            weights=init_weights([len(g) for g in groups]),
            dropped=[],
            unmatched_genes=[],
        )

    def test_overlapping_column_map(self):
        g = standardized_matrix(20, 4)
        ann = self.make_annotation([[1, 2], [2, 3]], 4)
        d = expand_design(g, ann)
        assert d.n_columns == 4
        np.testing.assert_array_equal(d.column_snp, [1, 2, 2, 3])
        np.testing.assert_array_equal(d.column_pathway, [0, 0, 1, 1])
        np.testing.assert_array_equal(d.offsets, [0, 2])

    def test_disjoint_total(self):
        g = standardized_matrix(20, 6)
        ann = self.make_annotation([[0, 1], [2, 3, 4]], 6)
        d = expand_design(g, ann)
        assert d.n_columns == 5

    def test_columns_equal_sources(self, rng):
        g = standardized_matrix(30, 10, seed=3)
        groups = [
            np.sort(rng.choice(10, size=rng.integers(1, 6), replace=False))
            for _ in range(4)
        ]
        ann = self.make_annotation(groups, 10)
        d = expand_design(g, ann)
        for col in range(d.n_columns):
            np.testing.assert_array_equal(
                d.matrix[:, col], g.values[:, d.column_snp[col]]
            )

    def test_duplicated_column_count(self):
        g = standardized_matrix(20, 4)
        ann = self.make_annotation([[0, 2], [2], [1, 2]], 4)
        d = expand_design(g, ann)
        assert int(np.sum(d.column_snp == 2)) == 3

    def test_requires_standardized(self):
        g = standardized_matrix(20, 4)
        raw = GenotypeMatrix(
            values=np.zeros((20, 4)) + np.arange(20)[:, None] % 3,
            snp_ids=g.snp_ids, chromosomes=g.chromosomes,
            positions=g.positions, subject_ids=g.subject_ids,
        )
        ann = self.make_annotation([[0]], 4)
        with pytest.raises(DataError, match="standardized"):
            expand_design(raw, ann)

    def test_out_of_range_index(self):
        g = standardized_matrix(20, 4)
        ann = self.make_annotation([[0, 7]], 4)
        with pytest.raises(DataError, match="outside"):
            expand_design(g, ann)


class TestMappingStats:
    def test_single_pathway(self):
        from psrrr.pathways import PathwayAnnotation

        ann = PathwayAnnotation(
            names=["pw"], groups=[np.arange(10)], genes=[[]],
            weights=init_weights([10]), dropped=[], unmatched_genes=[],
        )
        stats = mapping_stats(ann, n_snps=10)
        assert (stats.size_min, stats.size_max, stats.size_mean) == (10, 10, 10.0)
        assert (stats.overlap_min, stats.overlap_max) == (1, 1)

    def test_random_against_recount(self, rng):
        from psrrr.pathways import PathwayAnnotation

        groups = [
            np.sort(rng.choice(200, size=rng.integers(2, 50), replace=False))
            for _ in range(15)
        ]
        ann = PathwayAnnotation(
            names=[f"p{i}" for i in range(15)], groups=groups,
            genes=[[] for _ in groups],
            weights=init_weights([len(g) for g in groups]),
            dropped=[], unmatched_genes=[],
        )
        stats = mapping_stats(ann, n_snps=200)
        sizes = [len(g) for g in groups]
        assert stats.size_min == min(sizes)
        assert stats.size_max == max(sizes)
        assert stats.size_mean == pytest.approx(np.mean(sizes))
        member_count = {}
        for grp in groups:
            for j in grp:
                member_count[j] = member_count.get(j, 0) + 1
        overlaps = list(member_count.values())
        assert stats.overlap_mean == pytest.approx(np.mean(overlaps))
        assert stats.n_mapped_snps == len(overlaps)


class TestFileParsers:
    def test_gmt(self, tmp_path):
        path = tmp_path / "sets.gmt"
        path.write_text("pw1\tdesc\tGENEA\tgeneB\npw2\turl\tGENEC\n")
        sets_ = parse_gmt(path)
        assert sets_[0] == ("pw1", "desc", ["GENEA", "GENEB"])
        assert sets_[1][2] == ["GENEC"]

    def test_gmt_rejects_short_line(self, tmp_path):
        path = tmp_path / "sets.gmt"
        path.write_text("pw1\tdesc\n")
        with pytest.raises(DataError):
            parse_gmt(path)

    def test_gene_locations(self, tmp_path):
        path = tmp_path / "genes.tsv"
        path.write_text(
            "gene_symbol\tchromosome\tstart_bp\tend_bp\nbrCa1\t17\t100\t200\n"
        )
        genes = parse_gene_locations(path)
        assert genes[0].symbol == "BRCA1"
        assert genes[0].chromosome == "17"
