"""Kernel regression solve, prediction, eigenfeatures, eigenvalue sweeps."""

import numpy as np
import pytest

from jntk import (
    AssumptionViolation,
    feature_sum,
    eigenfeatures,
    fibonacci_sphere,
    fit,
    make_activation,
    min_eig_sweep,
    nngp_base,
    predict,
    solve,
    stack_targets,
)
from jntk.kernels import jntk_gram
from jntk.regression import fit_function_only, perturb_inputs

from conftest import unit_vectors


class TestStackTargets:
    def test_layout(self):
        out = stack_targets(np.array([0.5, -1.0]), 3)
        np.testing.assert_array_equal(out, [0.5, 0, 0, 0, -1.0, 0, 0, 0])


class TestSolve:
    def test_single_point_interpolation(self, gelu_act):
        rng = np.random.default_rng(0)
        pts = unit_vectors(rng, 1, 3)
        reg = fit(gelu_act, pts, np.array([0.8]), 2, 0.01)
        pred = predict(reg, pts[0])
        np.testing.assert_allclose(pred, [0.8, 0, 0, 0], atol=1e-8)

    def test_training_interpolation(self, gelu_act):
        ds = fibonacci_sphere(6, 3)
        reg = fit(gelu_act, ds.inputs, ds.targets, 2, 0.01)
        stacked = stack_targets(ds.targets, 3)
        preds = np.concatenate([predict(reg, x) for x in ds.inputs])
        assert np.linalg.norm(preds - stacked) <= 1e-6 * np.linalg.norm(stacked)

    def test_identity_closed_form_coefficients(self, identity_act):
        # A linear model satisfies f(x) = <grad f, x> exactly, so every
        # identity JNTK block annihilates (1, -x) and the Gram is singular;
        # the solver's floored pseudo-inverse must match the min-norm
        # solution of the independently built closed-form Gram.
        pts = np.array([[1.0, 0.0], [0.0, 1.0]])
        targets = np.array([1.0, -1.0])
        reg = fit(identity_act, pts, targets, 1, 1.0, override=True)
        assert reg.report.method == "pinv"
        w = 3
        closed = np.empty((2 * w, 2 * w))
        for i in range(2):
            for j in range(2):
                closed[i * w : (i + 1) * w, j * w : (j + 1) * w] = 2.0 * nngp_base(pts[i], pts[j])
        want = np.linalg.pinv(closed, rcond=1e-10) @ stack_targets(targets, 2)
        np.testing.assert_allclose(reg.coef, want, atol=1e-10)

    def test_assumption_violation_raised(self, square_raw):
        rng = np.random.default_rng(1)
        pts = unit_vectors(rng, 6, 3)
        gram = jntk_gram(square_raw, pts, 1)
        with pytest.raises(AssumptionViolation):
            solve(gram, stack_targets(rng.choice([-1.0, 1.0], 6), 3))

    def test_override_uses_pseudo_inverse(self, square_raw):
        rng = np.random.default_rng(2)
        pts = unit_vectors(rng, 6, 3)
        gram = jntk_gram(square_raw, pts, 1)
        coef, report = solve(gram, stack_targets(rng.choice([-1.0, 1.0], 6), 3), override=True)
        assert np.all(np.isfinite(coef))
        assert report.min_eig <= 1e-8


class TestPredict:
    def test_identity_prediction_is_odd(self, identity_act):
        rng = np.random.default_rng(3)
        pts = unit_vectors(rng, 4, 3)
        targets = np.array([1.0, -1.0, 1.0, -1.0])
        reg = fit(identity_act, pts, targets, 1, 1.0, override=True)
        xstar = unit_vectors(rng, 1, 3)[0]
        plus = predict(reg, xstar)[0]
        minus = predict(reg, -xstar)[0]
        assert minus == pytest.approx(-plus, abs=1e-10)

    def test_function_component_is_lambda_invariant(self, gelu_act):
        # Lambda acts as a similarity transform and the stacked targets have
        # zeros in every Jacobian slot, so the learnt function does not
        # depend on the regularisation weight at all.
        ds = fibonacci_sphere(6, 3)
        xstar = fibonacci_sphere(11, 3).inputs[5]
        f_ref = predict(fit(gelu_act, ds.inputs, ds.targets, 2, 1.0), xstar)[0]
        for lam in (0.1, 0.01):
            f = predict(fit(gelu_act, ds.inputs, ds.targets, 2, lam), xstar)[0]
            assert f == pytest.approx(f_ref, abs=1e-8)

    def test_jacobian_block_scales_with_sqrt_lambda(self, gelu_act):
        ds = fibonacci_sphere(5, 3)
        xstar = fibonacci_sphere(11, 3).inputs[3]
        jac_1 = predict(fit(gelu_act, ds.inputs, ds.targets, 2, 1.0), xstar)[1:]
        jac_q = predict(fit(gelu_act, ds.inputs, ds.targets, 2, 0.25), xstar)[1:]
        np.testing.assert_allclose(jac_q, 0.5 * jac_1, atol=1e-8)

    def test_jacobian_block_matches_finite_differences(self, gelu_act):
        # consistency of the joint (f, grad f) prediction: the Jacobian rows
        # are sqrt(lam) times the ambient gradient of the function row
        ds = fibonacci_sphere(5, 3)
        lam = 0.25
        reg = fit(gelu_act, ds.inputs, ds.targets, 2, lam)
        xstar = fibonacci_sphere(11, 3).inputs[7]
        pred = predict(reg, xstar)
        h = 1e-4
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            fd = (
                predict(reg, xstar + e, allow_off_sphere=True)[0]
                - predict(reg, xstar - e, allow_off_sphere=True)[0]
            ) / (2 * h)
            assert abs(np.sqrt(lam) * fd - pred[1 + a]) <= 1e-3

    def test_non_unit_point_rejected(self, gelu_act):
        ds = fibonacci_sphere(4, 3)
        reg = fit(gelu_act, ds.inputs, ds.targets, 1, 0.5)
        with pytest.raises(Exception):
            predict(reg, np.array([1.0, 1.0, 0.0]))


class TestEigenfeatures:
    def test_completeness(self, gelu_act):
        ds = fibonacci_sphere(6, 3)
        reg = fit(gelu_act, ds.inputs, ds.targets, 2, 0.1)
        probes = fibonacci_sphere(16, 3).inputs[6:16]
        report = eigenfeatures(reg, probes, np.ones(10), perturb_steps=(0.01, 0.1))
        assert not report.skipped
        for x in probes:
            total = feature_sum(reg, report, x)
            assert total == pytest.approx(predict(reg, x)[0], abs=1e-8)

    def test_eigenvalues_descending_and_sign_fixed(self, gelu_act):
        ds = fibonacci_sphere(5, 3)
        reg = fit(gelu_act, ds.inputs, ds.targets, 1, 0.5)
        report = eigenfeatures(reg, ds.inputs, ds.targets)
        assert np.all(np.diff(report.eigenvalues) <= 1e-12)
        gram = report.eigenvectors.T @ report.eigenvectors
        np.testing.assert_allclose(gram, np.eye(gram.shape[0]), atol=1e-8)
        for i in range(report.eigenvectors.shape[1]):
            col = report.eigenvectors[:, i]
            assert col[np.argmax(np.abs(col))] > 0

    def test_rank_deficient_features_skipped(self, square_raw):
        rng = np.random.default_rng(4)
        pts = unit_vectors(rng, 6, 3)
        targets = rng.choice([-1.0, 1.0], 6)
        reg = fit(square_raw, pts, targets, 1, 1.0, override=True)
        report = eigenfeatures(reg, pts, targets)
        assert len(report.skipped) > 0
        assert report.accuracy.shape[0] == int(report.retained.sum())


class TestPerturbation:
    def _margin_toy(self, gelu_act):
        ang = np.array([np.pi / 6, 5 * np.pi / 6])
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return fit_function_only(gelu_act, pts, np.array([1.0, -1.0]), 1)

    def test_zero_step_is_identity(self, gelu_act):
        reg0 = self._margin_toy(gelu_act)
        rng = np.random.default_rng(5)
        probes = unit_vectors(rng, 4, 2)
        moved = perturb_inputs(reg0, probes, np.ones(4), 0.0)
        np.testing.assert_array_equal(moved, probes)

    def test_outputs_stay_on_sphere(self, gelu_act):
        reg0 = self._margin_toy(gelu_act)
        rng = np.random.default_rng(6)
        probes = unit_vectors(rng, 6, 2)
        moved = perturb_inputs(reg0, probes, np.ones(6), 0.1)
        np.testing.assert_allclose(np.linalg.norm(moved, axis=1), 1.0, atol=1e-12)

    def test_margin_toy_flip_thresholds(self, gelu_act):
        # probes 0.05 rad from the decision boundary: the 0.1-step ascent
        # crosses it, the 0.01 step does not
        reg0 = self._margin_toy(gelu_act)
        margin = 0.05
        ang = np.array([np.pi / 2 - margin, np.pi / 2 + margin])
        probes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        labels = np.array([1.0, -1.0])
        before = np.array([reg0.value(p) for p in probes])
        assert np.all(np.sign(before) == labels)
        small = perturb_inputs(reg0, probes, labels, 0.01)
        vals_small = np.array([reg0.value(p) for p in small])
        assert np.all(np.sign(vals_small) == np.sign(before))
        large = perturb_inputs(reg0, probes, labels, 0.1)
        vals_large = np.array([reg0.value(p) for p in large])
        assert np.any(np.sign(vals_large) != np.sign(before))


class TestMinEigSweep:
    def test_square_counterexample(self, square_raw):
        rng = np.random.default_rng(7)
        pts = unit_vectors(rng, 6, 3)
        rep = min_eig_sweep(square_raw, pts, [1])
        assert rep.jntk_min[0] <= 1e-8
        assert rep.ntk_min[0] > 0
        assert not rep.assumption_ok[0]

    @pytest.mark.parametrize("kind", ["gelu", "erf"])
    def test_interlacing(self, kind):
        act = make_activation(kind)
        ds = fibonacci_sphere(5, 3)
        rep = min_eig_sweep(act, ds.inputs, [1, 2, 3])
        for j, n in zip(rep.jntk_min, rep.ntk_min):
            assert j <= n + 1e-10

    def test_identity_scales_linearly_in_depth(self, identity_act):
        # the full identity JNTK Gram is structurally singular on the sphere
        # (each block annihilates (1, -x)); the (depth + 1) scaling shows up
        # in the function-only Gram, which is positive for N <= d0
        ds = fibonacci_sphere(3, 3)
        rep = min_eig_sweep(identity_act, ds.inputs, [1, 2, 3])
        for val in rep.jntk_min:
            assert abs(val) <= 1e-10
        base = rep.ntk_min[0] / 2.0
        assert base > 0
        for depth, val in zip(rep.depths, rep.ntk_min):
            assert val == pytest.approx((depth + 1) * base, rel=1e-8)

    def test_parallel_pairs_reported(self, gelu_act):
        pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        rep = min_eig_sweep(gelu_act, pts, [1])
        assert (0, 1) in rep.parallel_pairs
