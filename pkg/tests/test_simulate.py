import numpy as np
import pytest

from psrrr._validation import ConfigError
from psrrr.genotypes import standardize
from psrrr.pathways import expand_design
from psrrr.simulate import (
    SimulationSpec,
    gen_annotation,
    gen_genotypes,
    noise_sd_for_marginal_r2,
    null_phenotype,
    plant_rank1_phenotype,
)


def spec_with(**overrides):
    base = dict(
        n_subjects=200, n_snps=300, n_pathways=6, size_min=20, size_max=80,
        overlap_rate=0.1, maf_min=0.1, maf_max=0.5, ld_block_size=10,
        ld_rho=0.2, causal_pathways=(0,), causal_snps_per_pathway=5,
        noise_sd=0.1, n_traits=10, seed=0,
    )
    base.update(overrides)
    return SimulationSpec(**base)


class TestGenGenotypes:
    def test_deterministic_in_seed(self):
        g1 = gen_genotypes(spec_with(seed=11))
        g2 = gen_genotypes(spec_with(seed=11))
        np.testing.assert_array_equal(g1.values, g2.values)
        g3 = gen_genotypes(spec_with(seed=12))
        assert not np.array_equal(g1.values, g3.values)

    def test_values_are_allele_counts(self):
        g = gen_genotypes(spec_with())
        assert set(np.unique(g.values)) <= {0.0, 1.0, 2.0}

    def test_zero_rho_uncorrelated_neighbours(self):
        g = gen_genotypes(spec_with(n_subjects=2000, n_snps=60, ld_rho=0.0, seed=5))
        corrs = []
        for j in range(0, 58):
            c = np.corrcoef(g.values[:, j], g.values[:, j + 1])[0, 1]
            corrs.append(c)
        assert np.max(np.abs(corrs)) < 0.08
        assert abs(np.mean(corrs)) < 0.02

    def test_positive_rho_induces_correlation(self):
        g = gen_genotypes(
            spec_with(n_subjects=2000, n_snps=60, ld_rho=0.7, ld_block_size=10, seed=6)
        )
        within = []
        for j in range(59):
            if (j // 10) == ((j + 1) // 10):
                within.append(np.corrcoef(g.values[:, j], g.values[:, j + 1])[0, 1])
        assert np.mean(within) > 0.25  # attenuated below the latent 0.7

    def test_fixed_maf_recovered(self):
        g = gen_genotypes(
            spec_with(n_subjects=2000, n_snps=40, maf_min=0.3, maf_max=0.3, seed=7)
        )
        maf = g.values.mean(axis=0) / 2.0
        assert np.max(np.abs(maf - 0.3)) < 0.03

    def test_autosomal_coordinates(self):
        g = gen_genotypes(spec_with())
        assert all(c.isdigit() and 1 <= int(c) <= 22 for c in g.chromosomes)


class TestAnnotation:
    def test_every_snp_in_a_pathway(self):
        spec = spec_with()
        ann = gen_annotation(spec)
        counts = ann.snp_pathway_counts(spec.n_snps)
        assert counts.min() >= 1

    def test_overlap_rate_approximate(self):
        spec = spec_with(n_snps=2000, overlap_rate=0.1, n_pathways=10)
        ann = gen_annotation(spec)
        counts = ann.snp_pathway_counts(spec.n_snps)
        frac = np.mean(counts >= 2)
        assert abs(frac - 0.1) < 0.02

    def test_deterministic(self):
        a1 = gen_annotation(spec_with(seed=3))
        a2 = gen_annotation(spec_with(seed=3))
        for g1, g2 in zip(a1.groups, a2.groups):
            np.testing.assert_array_equal(g1, g2)


class TestPlant:
    def standardized(self, spec):
        g = gen_genotypes(spec)
        gs, _ = standardize(g)
        return gs

    def test_noiseless_rank_one(self):
        spec = spec_with(noise_sd=0.0)
        gs = self.standardized(spec)
        ann = gen_annotation(spec)
        Y, b_star, a_star = plant_rank1_phenotype(gs, ann, spec)
        s = np.linalg.svd(Y, compute_uv=False)
        assert s[1] < 1e-10
        assert np.linalg.norm(a_star) == pytest.approx(1.0)

    def test_support_confined_to_causal_pathways(self):
        spec = spec_with(noise_sd=0.0, causal_pathways=(2,))
        gs = self.standardized(spec)
        ann = gen_annotation(spec)
        design = expand_design(gs, ann)
        _, b_star, _ = plant_rank1_phenotype(gs, ann, spec, design=design)
        outside = design.column_pathway != 2
        assert not b_star[outside].any()
        assert np.linalg.norm(b_star) == pytest.approx(1.0)

    def test_noise_scale(self):
        spec = spec_with(
            n_subjects=1000, n_traits=120, noise_sd=0.37, causal_pathways=(1,)
        )
        gs = self.standardized(spec)
        ann = gen_annotation(spec)
        Y, b_star, a_star = plant_rank1_phenotype(gs, ann, spec)
        # reconstruct the noise: Y was centred after adding it, so compare
        # against the centred signal
        signal = np.outer(gs.values @ _original_beta(gs, ann, spec), a_star)
        signal -= signal.mean(axis=0)
        resid = Y - signal
        assert resid.std() == pytest.approx(0.37, rel=0.03)

    def test_causal_count_exceeding_pathway_errors(self):
        spec = spec_with(causal_snps_per_pathway=10_000)
        gs = self.standardized(spec)
        ann = gen_annotation(spec)
        with pytest.raises(ConfigError, match="fewer"):
            plant_rank1_phenotype(gs, ann, spec)

    def test_recovery_at_gamma_half(self):
        # noiseless planted factor is recovered nearly exactly; the
        # causal pathway is kept small relative to N because group
        # shrinkage distorts the within-block direction in proportion to
        # the block Gram's eigenvalue spread, roughly sqrt(size/N)
        from psrrr.model import PsRRR
        from psrrr.pathways import PathwayAnnotation, init_weights

        spec = spec_with(
            n_subjects=2500, n_snps=400, n_pathways=6, size_min=8, size_max=132,
            overlap_rate=0.0, ld_rho=0.0, noise_sd=0.0,
            causal_pathways=(0,), causal_snps_per_pathway=5, seed=21,
        )
        gs = self.standardized(spec)
        sizes = [8, 50, 60, 70, 80, 132]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        ann = PathwayAnnotation(
            names=[f"P{l}" for l in range(6)],
            groups=[np.arange(bounds[l], bounds[l + 1]) for l in range(6)],
            genes=[[] for _ in sizes],
            weights=init_weights(np.asarray(sizes)),
            dropped=[], unmatched_genes=[],
        )
        design = expand_design(gs, ann)
        Y, b_star, a_star = plant_rank1_phenotype(gs, ann, spec, design=design)
        model = PsRRR(sizes=ann.sizes, gamma=0.5, tol=1e-6).fit(design.matrix, Y)
        assert 0 in model.selected_
        corr = np.corrcoef(design.matrix @ model.b_, design.matrix @ b_star)[0, 1]
        assert abs(corr) > 0.999
        assert abs(float(model.a_ @ a_star)) > 0.999


def _original_beta(gs, ann, spec):
    """Recompute the planted per-SNP coefficients from the seeded stream."""
    _, b, _ = plant_rank1_phenotype(gs, ann, spec)
    return b


class TestNullPhenotype:
    def test_centred_and_deterministic(self):
        y1 = null_phenotype(50, 8, seed=4)
        y2 = null_phenotype(50, 8, seed=4)
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_allclose(y1.mean(axis=0), 0.0, atol=1e-14)

    def test_unit_scale(self):
        y = null_phenotype(2000, 15, seed=9)
        assert np.max(np.abs(y.std(axis=0) - 1.0)) < 0.05

    def test_invalid_dims(self):
        with pytest.raises(ConfigError):
            null_phenotype(0, 5)


class TestHelpers:
    def test_noise_sd_matches_hand_computation(self):
        # 20 causal SNPs at 0.5% marginal R^2 with N=500 and one trait:
        # sigma^2 = (1/(20*0.005) - 1)/500
        sd = noise_sd_for_marginal_r2(20, 0.005, 500)
        assert sd == pytest.approx(np.sqrt(9.0 / 500.0), rel=1e-12)
        # spread over 100 traits the per-trait noise shrinks by sqrt(Q)
        sd_multi = noise_sd_for_marginal_r2(20, 0.005, 500, n_traits=100)
        assert sd_multi == pytest.approx(sd / 10.0, rel=1e-12)

    def test_unattainable_r2_raises(self):
        with pytest.raises(ConfigError):
            noise_sd_for_marginal_r2(2, 0.9, 100)
