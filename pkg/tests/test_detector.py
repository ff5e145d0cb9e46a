import numpy as np
import pytest

from gfdmlink.detector import (DetectionOperators, build_detection_operators,
                               detect_frame, detect_symbol, qpsk_demap,
                               qpsk_map)
from gfdmlink.errors import InputError
from gfdmlink.estimator import EstimationResult, estimate_frame, plan_pilots
from gfdmlink.harness import (compute_ber, draw_frame_data, genie_result,
                              mse_channel_iq)
from gfdmlink.impairments import mixing_operators, synthesize_received, draw_impairments
from gfdmlink.waveform import build_assignment

from conftest import make_noise_free_frame, make_plan, small_config


class TestBuildOperators:
    def test_zero_image_scalars_zero_f(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        res = genie_result(frame.truth, plan)
        zeroed = EstimationResult(phi_hat=res.phi_hat, h0_hat=res.h0_hat,
                                  a_hat=res.a_hat, b_hat=np.zeros_like(res.b_hat),
                                  hI_hat=res.hI_hat, hQ_hat=np.zeros_like(res.hQ_hat))
        ops = build_detection_operators(zeroed, plan)
        assert np.all(ops.F == 0)

    def test_single_user_column_count(self):
        config = small_config(U=1, K_D=6)
        plan = build_assignment(config, [[(1, 2, 3, 5, 6, 7)] * 2])
        _, layout, frame = make_noise_free_frame(config, seed=2, plan=plan)
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        assert ops.D.shape[1] == plan.n_per_user

    def test_genie_operators_equal_truth_mixing(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        col = 0
        for u, imp in enumerate(frame.truth.impairments):
            g_i, g_q = mixing_operators(imp.h, imp.phi, plan, u)
            n_u = plan.n_per_user
            np.testing.assert_allclose(ops.D[:, col:col + n_u], imp.alpha * g_i, atol=1e-10)
            np.testing.assert_allclose(ops.F[:, col:col + n_u], imp.beta * g_q, atol=1e-10)
            col += n_u

    def test_total_columns(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        assert ops.D.shape[1] == config.M * config.K_D


class TestDetectSymbol:
    def test_noise_free_genie_exact(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        d_hat = detect_symbol(frame.y[3], ops)
        truth = frame.truth.data[3].reshape(-1)
        np.testing.assert_allclose(d_hat, truth, atol=1e-8)

    def test_zero_image_reduces_to_plain_zero_forcing(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        res = genie_result(frame.truth, plan)
        # force beta = 0 estimates: no image branch in the operator
        zeroed = EstimationResult(phi_hat=res.phi_hat, h0_hat=res.h0_hat,
                                  a_hat=res.a_hat, b_hat=np.zeros_like(res.b_hat),
                                  hI_hat=res.hI_hat, hQ_hat=np.zeros_like(res.hQ_hat))
        ops = build_detection_operators(zeroed, plan)
        y = frame.y[2]
        combined = detect_symbol(y, ops)
        plain, *_ = np.linalg.lstsq(ops.D, y, rcond=None)
        np.testing.assert_allclose(combined, plain, atol=1e-9)

    def test_conjugate_mirror_property(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        y = frame.y[5]
        pinv, _ = ops._stacked_pinv
        sol = pinv @ np.concatenate([y, np.conj(y)])
        n = ops.D.shape[1]
        np.testing.assert_allclose(sol[n:], np.conj(sol[:n]), atol=1e-8)

    def test_diversity_combining_not_worse_than_source_branch(self):
        # estimated (imperfect) operators: combining should not lose to d_I alone
        config = small_config()
        plan, layout, frame = make_noise_free_frame(config, seed=21)
        result = estimate_frame(frame, plan, layout)
        ops = build_detection_operators(result, plan)
        pinv, _ = ops._stacked_pinv
        n = ops.D.shape[1]
        truth = frame.truth.data.reshape(config.N_s, -1)
        stacked = np.hstack([frame.y, np.conj(frame.y)])
        sol = stacked @ pinv.T
        d_i = sol[:, :n]
        combined = 0.5 * (d_i + np.conj(sol[:, n:]))
        err_comb = np.linalg.norm(combined[1:] - truth[1:])
        err_branch = np.linalg.norm(d_i[1:] - truth[1:])
        assert err_comb <= err_branch * (1.0 + 1e-9)

    def test_permutation_consistency(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        swapped_sets = (plan.sets[1], plan.sets[0])
        plan2 = build_assignment(config, swapped_sets)
        res = genie_result(frame.truth, plan)
        truth2 = frame.truth.__class__(impairments=frame.truth.impairments[::-1],
                                       data=frame.truth.data[:, ::-1, :],
                                       sigma2=frame.truth.sigma2)
        res2 = genie_result(truth2, plan2)
        ops = build_detection_operators(res, plan)
        ops2 = build_detection_operators(res2, plan2)
        y = frame.y[4]
        d1 = detect_symbol(y, ops)
        d2 = detect_symbol(y, ops2)
        n_u = plan.n_per_user
        np.testing.assert_allclose(d2[:n_u], d1[n_u:], atol=1e-8)
        np.testing.assert_allclose(d2[n_u:], d1[:n_u], atol=1e-8)

    def test_shape_mismatch(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        with pytest.raises(InputError):
            detect_symbol(frame.y[0][:-1], ops)

    def test_perfect_csi_zero_ber(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        assert compute_ber(detect_frame(frame, ops), frame.truth.data) == 0.0

    def test_detect_frame_matches_per_symbol(self, small_noise_free):
        config, plan, layout, frame = small_noise_free
        ops = build_detection_operators(genie_result(frame.truth, plan), plan)
        batch = detect_frame(frame, ops)
        for i in (0, 1, 7):
            np.testing.assert_allclose(batch[i], detect_symbol(frame.y[i], ops), atol=1e-12)


class TestQpsk:
    def test_gray_table(self):
        syms = qpsk_map(np.array([0, 0, 0, 1, 1, 0, 1, 1]))
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
        np.testing.assert_allclose(syms, expected, atol=1e-15)

    def test_roundtrip(self):
        rng = np.random.default_rng(6)
        bits = rng.integers(0, 2, size=400)
        np.testing.assert_array_equal(qpsk_demap(qpsk_map(bits)), bits)

    def test_noise_margin(self):
        rng = np.random.default_rng(7)
        bits = rng.integers(0, 2, size=64)
        syms = qpsk_map(bits)
        noise = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        noise = 0.09 * noise / np.abs(noise)
        np.testing.assert_array_equal(qpsk_demap(syms + noise), bits)

    def test_odd_bit_count_rejected(self):
        with pytest.raises(InputError):
            qpsk_map(np.array([0, 1, 0]))
