import numpy as np
import pytest

from psrrr._validation import DataError
from psrrr.genotypes import CovariateTable
from psrrr.phenotypes import (
    LongitudinalTable,
    SlopeMatrix,
    ancova_filter,
    fit_slopes,
    parse_longitudinal,
    residualize,
    validate_signature,
    write_longitudinal_binary,
    write_longitudinal_tsv,
)


def make_table(values, times=(6.0, 12.0, 24.0)):
    values = np.asarray(values, dtype=np.float64)
    return LongitudinalTable(
        subject_ids=[f"i{k}" for k in range(values.shape[0])],
        visit_times=np.asarray(times, dtype=np.float64),
        values=values,
    )


def make_covariates(n, age=None, sex=None, group=None, seed=0):
    rng = np.random.default_rng(seed)
    return CovariateTable(
        subject_ids=[f"i{k}" for k in range(n)],
        age=age if age is not None else rng.uniform(60, 90, n),
        sex=sex if sex is not None else rng.integers(0, 2, n),
        group=group if group is not None else ["CN"] * n,
    )


class TestSlopes:
    def test_noiseless_line(self):
        table = make_table([[[13.0], [25.0], [49.0]]])
        slopes = fit_slopes(table)
        assert slopes.values[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_constant_trajectory(self):
        table = make_table([[[7.0], [7.0], [7.0]]])
        assert fit_slopes(table).values[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_oracle(self, rng):
        values = rng.standard_normal((5, 4, 3))
        times = np.array([0.0, 6.0, 12.0, 24.0])
        slopes = fit_slopes(make_table(values, times))
        tc = times - times.mean()
        denom = (tc ** 2).sum()
        for i in range(5):
            for q in range(3):
                y = values[i, :, q]
                expected = float(tc @ (y - y.mean())) / denom
                assert slopes.values[i, q] == pytest.approx(expected, abs=1e-12)

    def test_visit_order_invariance(self, rng):
        values = rng.standard_normal((4, 3, 2))
        times = np.array([6.0, 12.0, 24.0])
        base = fit_slopes(make_table(values, times))
        perm = np.array([2, 0, 1])
        shuffled = fit_slopes(make_table(values[:, perm, :], times[perm]))
        np.testing.assert_allclose(shuffled.values, base.values, atol=1e-12)

    def test_single_visit_errors(self):
        table = make_table(np.zeros((2, 1, 1)), times=[6.0])
        with pytest.raises(DataError, match="two distinct visit"):
            fit_slopes(table)


class TestLongitudinalIO:
    def test_tsv_roundtrip(self, tmp_path, rng):
        table = make_table(rng.standard_normal((3, 3, 4)))
        path = tmp_path / "long.tsv"
        write_longitudinal_tsv(table, path)
        back = parse_longitudinal(path)
        assert back.subject_ids == table.subject_ids
        np.testing.assert_allclose(back.values, table.values, rtol=1e-9)

    def test_binary_roundtrip(self, tmp_path, rng):
        table = make_table(rng.standard_normal((5, 3, 7)))
        path = tmp_path / "long.bin"
        write_longitudinal_binary(table, path)
        back = parse_longitudinal(path)
        np.testing.assert_array_equal(back.values, table.values)
        np.testing.assert_array_equal(back.visit_times, table.visit_times)

    def test_inconsistent_visits_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "subject_id\tvisit_months\ttrait0\n"
            "a\t6\t1.0\na\t12\t2.0\nb\t6\t1.0\n"
        )
        with pytest.raises(DataError, match="common visit-time set"):
            parse_longitudinal(path)


class TestAncova:
    def make_slopes(self, rng, n=200, q=40, group_shift=0.0, shifted=()):
        half = n // 2
        group = ["AD"] * half + ["CN"] * (n - half)
        cov = make_covariates(n, group=group, seed=1)
        values = rng.standard_normal((n, q))
        # covariate effects present in every trait
        values += 0.05 * cov.age[:, None] + 0.3 * cov.sex[:, None]
        for q_idx in shifted:
            values[:half, q_idx] += group_shift
        return SlopeMatrix(values=values, subject_ids=cov.subject_ids), cov

    def test_null_selects_alpha_level(self, rng):
        # permuted labels leave only Bonferroni-level false positives:
        # expected selections per run = alpha, so over 50 runs the total
        # stays small with overwhelming probability
        total = 0
        for rep in range(50):
            slopes, cov = self.make_slopes(np.random.default_rng(rep), n=80, q=30)
            perm = np.random.default_rng(1000 + rep).permutation(len(cov.group))
            cov_perm = CovariateTable(
                cov.subject_ids, cov.age, cov.sex,
                [cov.group[i] for i in perm],
            )
            selected, _ = ancova_filter(slopes, cov_perm, "AD", "CN")
            total += selected.size
        assert total <= 3

    def test_strong_separation_selected(self, rng):
        # group means 10 within-group standard deviations apart
        slopes, cov = self.make_slopes(rng, n=200, q=40, group_shift=10.0, shifted=(3,))
        selected, pvalues = ancova_filter(slopes, cov, "AD", "CN")
        assert 3 in selected
        # power oracle: t ~ shift / sqrt(4/n) is astronomically large
        assert pvalues[3] < 1e-50

    def test_scale_invariance_of_pvalues(self, rng):
        slopes, cov = self.make_slopes(rng, n=100, q=10, group_shift=0.5, shifted=(0,))
        _, p1 = ancova_filter(slopes, cov, "AD", "CN")
        rescaled = SlopeMatrix(
            values=slopes.values * 37.5 + 4.0, subject_ids=slopes.subject_ids
        )
        _, p2 = ancova_filter(rescaled, cov, "AD", "CN")
        np.testing.assert_allclose(p1, p2, rtol=1e-9)

    def test_bonferroni_threshold_formula(self):
        # at the reported full-scale trait count the threshold is
        # 0.05 / 2,153,231 (about 7.6 on the -log10 scale)
        threshold = 0.05 / 2_153_231
        assert -np.log10(threshold) == pytest.approx(7.634, abs=0.01)

    def test_small_group_errors(self, rng):
        slopes, cov = self.make_slopes(rng, n=10, q=3)
        cov_bad = CovariateTable(
            cov.subject_ids, cov.age, cov.sex, ["AD"] + ["CN"] * 9
        )
        with pytest.raises(DataError, match="at least 2 subjects"):
            ancova_filter(slopes, cov_bad, "AD", "CN")

    def test_collinear_covariates_error(self, rng):
        slopes, cov = self.make_slopes(rng, n=50, q=3)
        cov_bad = CovariateTable(
            cov.subject_ids, np.full(50, 70.0), np.zeros(50, dtype=int), cov.group
        )
        with pytest.raises(DataError, match="rank deficient"):
            ancova_filter(slopes, cov_bad, "AD", "CN")


class TestResidualize:
    def test_exact_projection_of_covariate_multiple(self, rng):
        cov = make_covariates(60, seed=2)
        values = np.column_stack([3.0 * cov.age, rng.standard_normal(60)])
        slopes = SlopeMatrix(values=values, subject_ids=cov.subject_ids)
        pheno = residualize(slopes, [0, 1], cov)
        assert np.max(np.abs(pheno.values[:, 0])) < 1e-10

    def test_orthogonal_column_only_centred(self, rng):
        cov = make_covariates(80, seed=3)
        col = rng.standard_normal(80)
        design = np.column_stack([np.ones(80), cov.sex, cov.age])
        col -= design @ np.linalg.lstsq(design, col, rcond=None)[0]
        col += 5.0  # reintroduce a mean; residualization should re-centre
        slopes = SlopeMatrix(values=col[:, None], subject_ids=cov.subject_ids)
        pheno = residualize(slopes, [0], cov)
        np.testing.assert_allclose(
            pheno.values[:, 0], col - col.mean(), atol=1e-10
        )

    def test_orthogonality_to_covariates(self, rng):
        cov = make_covariates(100, seed=4)
        slopes = SlopeMatrix(
            values=rng.standard_normal((100, 6)), subject_ids=cov.subject_ids
        )
        pheno = residualize(slopes, np.arange(6), cov)
        assert np.max(np.abs(pheno.values.mean(axis=0))) < 1e-10
        assert np.max(np.abs(cov.age @ pheno.values)) < 1e-8
        assert np.max(np.abs(cov.sex @ pheno.values)) < 1e-8

    def test_rank_deficiency_error(self, rng):
        cov = make_covariates(30, age=np.full(30, 70.0), sex=np.zeros(30, dtype=int))
        slopes = SlopeMatrix(
            values=rng.standard_normal((30, 2)), subject_ids=cov.subject_ids
        )
        with pytest.raises(DataError, match="rank deficient"):
            residualize(slopes, [0], cov)


class TestValidateSignature:
    def test_separated_clusters(self, rng):
        n, q = 200, 20
        labels = np.repeat([0, 1], n // 2)
        x = rng.standard_normal((n, q))
        x[labels == 1, 0] += 10.0
        report = validate_signature(x, labels, folds=10, seed=0)
        assert report.accuracy >= 0.99
        assert report.sensitivity >= 0.95
        assert report.specificity >= 0.95

    def test_permuted_labels_near_chance(self, rng):
        n, q = 300, 10
        x = rng.standard_normal((n, q))
        labels = np.random.default_rng(5).permutation(np.repeat([0, 1], n // 2))
        report = validate_signature(x, labels, folds=10, seed=0)
        assert abs(report.accuracy - 0.5) < 0.12

    def test_deterministic_given_seed(self, rng):
        x = rng.standard_normal((60, 5))
        labels = np.repeat([0, 1], 30)
        r1 = validate_signature(x, labels, folds=5, seed=42)
        r2 = validate_signature(x, labels, folds=5, seed=42)
        assert r1.fold_rows == r2.fold_rows
        assert r1.accuracy == r2.accuracy

    def test_degenerate_dimension_floored(self, rng):
        x = rng.standard_normal((60, 3))
        x[:, 2] = 7.0  # constant in train and test
        labels = np.repeat([0, 1], 30)
        report = validate_signature(x, labels, folds=5, seed=0)
        assert np.isfinite(report.accuracy)

    def test_class_smaller_than_folds(self, rng):
        x = rng.standard_normal((12, 2))
        labels = np.array([1] * 3 + [0] * 9)
        with pytest.raises(DataError, match="fewer members than folds"):
            validate_signature(x, labels, folds=5, seed=0)

    def test_report_tsv(self, tmp_path, rng):
        x = rng.standard_normal((40, 3))
        labels = np.repeat([0, 1], 20)
        report = validate_signature(x, labels, folds=4, seed=0)
        report.write_tsv(tmp_path / "val.tsv")
        text = (tmp_path / "val.tsv").read_text()
        assert text.startswith("#fold")
        assert "summary" in text
