"""Metric tests against independent oracles.

pcc/rmse are checked against direct textbook-formula recomputation, AUC
against a fine Riemann sum of the linear interpolant, and the p-values
against Monte-Carlo simulation/permutation estimates.
"""

import math

import numpy as np
import pytest

from hagxai.errors import DataError, UndefinedResultError
from hagxai.metrics import (
    ConditionLabel,
    Curve,
    PerturbationConfig,
    auc,
    deletion_curve,
    insertion_curve,
    pcc,
    pearson_with_p,
    rmse,
    stratified_eval,
    welch_t_test,
)


def pcc_oracle(u1, u2):
    """Covariance over the product of standard deviations, straight numpy."""
    a = np.asarray(u1, dtype=np.float64).ravel()
    b = np.asarray(u2, dtype=np.float64).ravel()
    cov = np.mean((a - a.mean()) * (b - b.mean()))
    return cov / (a.std() * b.std())


def rmse_oracle(u1, u2):
    d = np.asarray(u1, dtype=np.float64) - np.asarray(u2, dtype=np.float64)
    return math.sqrt(float(np.sum(d * d))) / d.size


class TestPcc:
    def test_self_correlation(self):
        rng = np.random.default_rng(1)
        u = rng.normal(size=(6, 6))
        assert pcc(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        u = rng.normal(size=(5, 7))
        assert pcc(u, 3.5 * u + 2.0) == pytest.approx(1.0, abs=1e-9)
        assert pcc(u, -2.0 * u + 1.0) == pytest.approx(-1.0, abs=1e-9)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.normal(size=(8, 8))
            b = rng.normal(size=(8, 8))
            assert pcc(a, b) == pytest.approx(pcc_oracle(a, b), abs=1e-10)

    def test_constant_map_raises(self):
        with pytest.raises(UndefinedResultError) as exc_info:
            pcc(np.ones((3, 3)), np.arange(9.0).reshape(3, 3))
        assert exc_info.value.flag == "constant-map"


class TestRmse:
    def test_zero_on_equal(self):
        u = np.random.default_rng(4).normal(size=(4, 4))
        assert rmse(u, u) == 0.0

    def test_hand_case(self):
        a = np.zeros((2, 2))
        b = np.ones((2, 2))
        assert rmse(a, b) == pytest.approx(0.5, abs=1e-12)

    def test_symmetry_and_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = rng.normal(size=(8, 8))
            b = rng.normal(size=(8, 8))
            assert rmse(a, b) == pytest.approx(rmse(b, a), abs=0)
            assert rmse(a, b) == pytest.approx(rmse_oracle(a, b), abs=1e-10)


class TestAuc:
    def test_flat_curve(self):
        c = Curve(samples=[(i / 10, 0.7) for i in range(11)], direction="deletion")
        assert auc(c) == pytest.approx(0.7, abs=1e-12)

    def test_linear_ramp(self):
        c = Curve(samples=[(i / 100, i / 100) for i in range(101)], direction="insertion")
        assert auc(c) == pytest.approx(0.5, abs=1e-12)

    def test_matches_riemann_oracle(self):
        rng = np.random.default_rng(6)
        fr = np.linspace(0, 1, 101)
        sc = rng.uniform(size=101)
        c = Curve(samples=list(zip(fr, sc)), direction="deletion")
        fine = np.linspace(0, 1, 2_000_001)
        mids = (fine[:-1] + fine[1:]) / 2
        riemann = float(np.mean(np.interp(mids, fr, sc)))
        assert auc(c) == pytest.approx(riemann, abs=1e-6)

    def test_partial_span_normalized(self):
        c = Curve(samples=[(0.0, 1.0), (0.25, 1.0), (0.5, 1.0)], direction="deletion")
        assert auc(c) == pytest.approx(1.0, abs=1e-12)


def mask_sum_scorer(mask):
    """Analytic scorer: mean intensity of the image restricted to the mask."""

    def score(images):
        return [float(np.sum(im[mask].astype(np.float64)) / 255.0) for im in images]

    return score


class TestPerturbationCurves:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.h = self.w = 10
        self.image = np.zeros((self.h, self.w, 3), dtype=np.uint8)
        self.mask = np.zeros((self.h, self.w), dtype=bool)
        self.mask[2:6, 3:8] = True
        self.image[self.mask] = 255
        self.saliency = self.mask.astype(np.float32) + 0.001 * rng.random((self.h, self.w)).astype(np.float32)

    def test_zero_steps_single_sample(self):
        cfg = PerturbationConfig(steps=0, step_area_fraction=0.01, fill_mode="black", seed=0)
        scorer = mask_sum_scorer(self.mask)
        d = deletion_curve(self.image, self.saliency, scorer, cfg)
        i = insertion_curve(self.image, self.saliency, scorer, cfg)
        assert len(d.samples) == 1 and len(i.samples) == 1
        assert d.samples[0][1] > 0 and i.samples[0][1] == 0.0

    def test_monotone_with_mask_scorer(self):
        cfg = PerturbationConfig(steps=20, step_area_fraction=0.05, fill_mode="black", seed=1)
        scorer = mask_sum_scorer(self.mask)
        d = deletion_curve(self.image, self.saliency, scorer, cfg)
        i = insertion_curve(self.image, self.saliency, scorer, cfg)
        assert d.error is None and i.error is None
        assert np.all(np.diff(d.scores) <= 1e-12)
        assert np.all(np.diff(i.scores) >= -1e-12)
        # mask pixels outrank everything else, so deletion strictly drops
        # until the mask is exhausted
        n_mask = int(self.mask.sum())
        exhausted_after = math.ceil(n_mask / (self.h * self.w * 0.05))
        assert np.all(np.diff(d.scores[: exhausted_after + 1]) < 0)

    def test_exhausts_area_limit_exactly(self):
        cfg = PerturbationConfig(steps=100, step_area_fraction=0.01, fill_mode="black", seed=2)
        seen = []

        def counting_scorer(images):
            for im in images:
                seen.append(int(np.count_nonzero(np.all(im == 0, axis=2))))
            return [0.0] * len(images)

        img = np.full((self.h, self.w, 3), 255, dtype=np.uint8)
        deletion_curve(img, self.saliency, counting_scorer, cfg)
        assert seen[-1] == self.h * self.w

    def test_bbox_union_mode_never_touches_outside(self):
        cfg = PerturbationConfig(
            steps=10, step_area_fraction=0.1, area_limit_mode="bbox_union", fill_mode="random_color", seed=3
        )
        bboxes = [(3.0, 2.0, 8.0, 6.0)]
        union = np.zeros((self.h, self.w), dtype=bool)
        union[2:6, 3:8] = True
        captured = []
        scorer = lambda images: [captured.append(im) or 0.0 for im in images]
        deletion_curve(self.image, self.saliency, scorer, cfg, bboxes=bboxes)
        for im in captured:
            np.testing.assert_array_equal(im[~union], self.image[~union])
        # and the union itself is fully replaced by the last step
        assert captured[-1].size > 0

    def test_bbox_union_requires_boxes(self):
        cfg = PerturbationConfig(steps=2, step_area_fraction=0.5, area_limit_mode="bbox_union")
        with pytest.raises(DataError):
            deletion_curve(self.image, self.saliency, lambda ims: [0.0] * len(ims), cfg)

    def test_same_ranking_for_both_directions(self):
        cfg = PerturbationConfig(steps=4, step_area_fraction=0.25, fill_mode="black", seed=4)
        del_black, ins_revealed = [], []
        deletion_curve(self.image, self.saliency, lambda ims: [del_black.append(np.all(im == 0, axis=2)) or 0.0 for im in ims], cfg)
        img = np.full((self.h, self.w, 3), 255, dtype=np.uint8)
        insertion_curve(img, self.saliency, lambda ims: [ins_revealed.append(np.any(im > 0, axis=2)) or 0.0 for im in ims], cfg)
        # pixels blacked out by deletion step k == pixels revealed by insertion step k
        for dmask, imask in zip(del_black[1:], ins_revealed[1:]):
            np.testing.assert_array_equal(dmask & self.mask, imask & self.mask)

    def test_seed_determinism(self):
        cfg = PerturbationConfig(steps=10, step_area_fraction=0.1, fill_mode="random_color", seed=42)
        runs = []
        for _ in range(2):
            captured = []
            deletion_curve(self.image, self.saliency, lambda ims: [captured.append(im.copy()) or 0.0 for im in ims], cfg)
            runs.append(captured)
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)

    def test_scorer_failure_preserved(self):
        cfg = PerturbationConfig(steps=2, step_area_fraction=0.5, fill_mode="black")

        def broken(images):
            raise RuntimeError("scorer offline")

        c = deletion_curve(self.image, self.saliency, broken, cfg)
        assert c.error is not None and "scorer offline" in c.error
        assert c.samples == []

    def test_deletion_plus_insertion_auc_constant(self):
        # with the additive mask scorer, d-AUC + i-AUC equals the full-mask
        # score for any saliency ranking; brute force on 8x8 instances
        rng = np.random.default_rng(8)
        mask = np.zeros((8, 8), dtype=bool)
        mask[1:5, 2:7] = True
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        img[mask] = 255
        scorer = mask_sum_scorer(mask)
        total = scorer([img])[0]
        cfg = PerturbationConfig(steps=16, step_area_fraction=1 / 16, fill_mode="black", seed=0)
        for _ in range(5):
            sal = rng.random((8, 8)).astype(np.float32)
            d = auc(deletion_curve(img, sal, scorer, cfg))
            i = auc(insertion_curve(img, sal, scorer, cfg))
            assert d + i == pytest.approx(total, rel=1e-9)


class TestPearsonWithP:
    def test_perfect_correlation(self):
        x = np.arange(10.0)
        r, p = pearson_with_p(x, x)
        assert r == pytest.approx(1.0) and p == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_after_centering(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        r, p = pearson_with_p(x, y)
        assert r == pytest.approx(0.0, abs=1e-12)
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_p_matches_simulation_oracle(self):
        # Monte-Carlo null: distribution of |r| for independent normals
        rng = np.random.default_rng(9)
        n = 30
        x = rng.normal(size=n)
        y = x * 0.4 + rng.normal(size=n)
        r_obs, p_obs = pearson_with_p(x, y)
        null_rs = []
        for _ in range(20000):
            perm = rng.permutation(y)
            null_rs.append(pcc_oracle(x.reshape(1, -1), perm.reshape(1, -1)))
        p_mc = float(np.mean(np.abs(null_rs) >= abs(r_obs)))
        assert p_obs == pytest.approx(p_mc, abs=0.02)

    def test_detection_scale_plausibility(self):
        # small-r significance at a few-hundred sample size, checked
        # against a null-simulation oracle rather than any reported n
        rng = np.random.default_rng(10)
        n = 487
        r_target = 0.09
        t = r_target * math.sqrt((n - 2) / (1 - r_target**2))
        from scipy import stats as sps

        p = 2 * sps.t.sf(t, df=n - 2)
        hits = 0
        trials = 20000
        for _ in range(trials):
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            hits += abs(pcc_oracle(x.reshape(1, -1), y.reshape(1, -1))) >= r_target
        assert p == pytest.approx(hits / trials, abs=0.02)


class TestWelch:
    def test_identical_groups(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        t, p = welch_t_test(a, a.copy())
        assert t == 0.0 and p == pytest.approx(1.0)

    def test_far_separated(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0, 1, size=50)
        b = rng.normal(50, 1, size=50)
        _, p = welch_t_test(a, b)
        assert p < 1e-6

    def test_p_matches_permutation_oracle(self):
        rng = np.random.default_rng(12)
        a = rng.normal(0.0, 1.0, size=25)
        b = rng.normal(0.6, 1.5, size=18)
        t_obs, p_obs = welch_t_test(a, b)
        pooled = np.concatenate([a, b])
        count = 0
        trials = 20000
        for _ in range(trials):
            perm = rng.permutation(pooled)
            ta, _ = welch_t_test(perm[: len(a)], perm[len(a) :])
            count += abs(ta) >= abs(t_obs)
        assert p_obs == pytest.approx(count / trials, abs=0.02)

    def test_zero_variance_both_raises(self):
        with pytest.raises(UndefinedResultError):
            welch_t_test([1.0, 1.0], [2.0, 2.0])


class TestStratifiedEval:
    def test_single_condition_equals_overall_mean(self):
        rows = [
            {"image_id": "a", "method": "gc", "pcc": 0.2},
            {"image_id": "b", "method": "gc", "pcc": 0.6},
        ]
        labels = [ConditionLabel("a", True, False), ConditionLabel("b", True, False)]
        table = stratified_eval(rows, labels)
        assert table.cells[(True, False)]["gc"]["pcc"] == pytest.approx(0.4)
        assert table.marginals["occlusion"]["gc"]["pcc"][0] == pytest.approx(0.4)

    def test_split_conditions_keep_individual_values(self):
        rows = [
            {"image_id": "a", "method": "gc", "pcc": 0.2},
            {"image_id": "b", "method": "gc", "pcc": 0.8},
        ]
        labels = [ConditionLabel("a", True, True), ConditionLabel("b", False, False)]
        table = stratified_eval(rows, labels)
        assert table.cells[(True, True)]["gc"]["pcc"] == pytest.approx(0.2)
        assert table.cells[(False, False)]["gc"]["pcc"] == pytest.approx(0.8)
        assert table.marginals["degradation"]["gc"]["pcc"] == (pytest.approx(0.2), pytest.approx(0.8))

    def test_synthetic_matches_recomputation(self):
        rng = np.random.default_rng(13)
        rows, labels = [], []
        for i in range(40):
            image_id = f"img{i}"
            occ, deg = bool(rng.integers(2)), bool(rng.integers(2))
            labels.append(ConditionLabel(image_id, occ, deg))
            for method in ("gc", "hag"):
                rows.append({"image_id": image_id, "method": method, "pcc": float(rng.random()), "i_auc": float(rng.random())})
        table = stratified_eval(rows, labels)
        lab = {l.image_id: l for l in labels}
        for method in ("gc", "hag"):
            manual = np.mean([r["pcc"] for r in rows if r["method"] == method and lab[r["image_id"]].occlusion])
            assert table.marginals["occlusion"][method]["pcc"][0] == pytest.approx(float(manual))

    def test_missing_label_lists_ids(self):
        rows = [{"image_id": "ghost", "method": "gc", "pcc": 0.5}]
        with pytest.raises(DataError, match="ghost"):
            stratified_eval(rows, [])
