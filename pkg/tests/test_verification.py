"""Gradient-check harness tests (the oracle machinery itself)."""

import numpy as np

from ferhead.verification import (
    LOSS_MODES,
    build_instance,
    check_instance,
    fd_component_grads,
    group_errors,
    run_suite,
)


class TestInstanceConstruction:
    def test_deterministic(self):
        a = build_instance(3)
        b = build_instance(3)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.params.decomp, b.params.decomp)
        assert np.array_equal(a.labels, b.labels)

    def test_default_desk_scale_dimensions(self):
        inst = build_instance(0)
        assert inst.params.decomp.shape == (3, 16, 8)
        assert inst.params.gate.shape == (3, 8, 8)
        assert inst.params.classifier.shape == (8, 4)
        assert inst.inputs.shape == (5, 16)

    def test_parameters_small_magnitude(self):
        inst = build_instance(1)
        for _, arr in inst.params.items():
            assert np.abs(arr).max() <= 0.1


class TestGradientAgreement:
    def test_all_modes_within_tolerance(self):
        inst = build_instance(0)
        results = check_instance(inst)
        assert set(results) == set(LOSS_MODES)
        for mode, errors in results.items():
            for group, err in errors.items():
                assert err < 1e-4, f"{mode}/{group}: {err}"

    def test_each_isolated_term_and_joint(self):
        """Spot-check three more seeds across every loss mode."""
        for seed in (5, 11, 17):
            inst = build_instance(seed)
            results = check_instance(inst)
            worst = max(e for errs in results.values() for e in errs.values())
            assert worst < 1e-4

    def test_injected_sign_bug_is_caught_and_named(self):
        inst = build_instance(0)
        results = check_instance(inst, inject_sign_bug="gate")
        assert results["joint"]["gate"] > 1e-2
        assert results["joint"]["decomp"] < 1e-4

    def test_run_suite_reports_failure(self):
        worst, _, passed = run_suite(range(1), inject_sign_bug="message")
        assert not passed
        assert worst["message"] > 1e-2

    def test_run_suite_passes_clean(self):
        worst, worst_mode, passed = run_suite(range(2))
        assert passed
        assert set(worst) == {"decomp", "gate", "message", "classifier"}
        assert all(m.split()[0] in LOSS_MODES for m in worst_mode.values())


class TestErrorMetric:
    def test_zero_gradients_count_as_zero_error(self):
        inst = build_instance(0)
        analytic = inst.params.zeros_like()
        err = group_errors(analytic, np.zeros(analytic.to_vector().size))
        assert all(v == 0.0 for v in err.values())

    def test_fd_components_shape(self):
        inst = build_instance(
            0, input_dim=4, latent_dim=3, n_latents=2, n_classes=2, batch=2
        )
        grads = fd_component_grads(inst, h=1e-5)
        n_params = inst.params.to_vector().size
        assert grads.shape == (4, n_params)
        # classifier coordinates influence only the classification loss
        cls_block = slice(n_params - 3 * 2, n_params)
        assert np.abs(grads[1:, cls_block]).max() == 0.0
