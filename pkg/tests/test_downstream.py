import numpy as np
import pytest

from fdalab.errors import ConfigError, DomainError
from fdalab.downstream import (
    AnomalyTemplate,
    anomaly_template,
    approximate_covariance,
    detection_eval,
    recon_quality,
    whitening_error,
)
from fdalab.stats import HermitianCovariance


def complex_gaussian(rng, count, dim):
    return (rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))) / np.sqrt(2)


def sample_with_covariance(rng, count, r):
    vals, vecs = np.linalg.eigh(r)
    root = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T
    return complex_gaussian(rng, count, r.shape[0]) @ root.T


class TestAnomalyTemplate:
    def test_point_sits_nearest_candidate_center(self, grid):
        template = anomaly_template(grid, "point")
        assert template.support == (9,)
        assert np.allclose(grid.anomaly_positions()[9], [-0.125, 1.025])
        assert template.amplitude == 1000.0 + 0.0j

    def test_dual_point_adds_nearest_neighbor(self, grid):
        template = anomaly_template(grid, "dual-point")
        assert template.support == (9, 5)
        # the z-neighbor tie resolves to the lower linear index (shallower row)
        assert np.allclose(grid.anomaly_positions()[5], [-0.125, 0.875])

    def test_vector_layout(self, grid):
        v = anomaly_template(grid, "dual-point", amplitude=2.0 + 1.0j).vector(20)
        assert v[9] == 2.0 + 1.0j and v[5] == 2.0 + 1.0j
        assert np.count_nonzero(v) == 2

    def test_unknown_kind_rejected(self, grid):
        with pytest.raises(ConfigError):
            anomaly_template(grid, "ring")


class TestReconQuality:
    def test_perfect_reconstruction(self, grid):
        x = AnomalyTemplate("point", (9,)).vector(20)
        q = recon_quality(x, x, grid)
        assert (q.eps_loc, q.nmse, q.false_alarms) == (0.0, 0.0, 0)
        assert q.max_spurious == 0.0 and q.gamma_tp == np.inf

    def test_single_offsupport_spike(self, grid):
        x_true = AnomalyTemplate("point", (9,), amplitude=1000.0).vector(20)
        x_hat = x_true.copy()
        x_hat[3] = 600.0
        q = recon_quality(x_hat, x_true, grid)
        assert q.false_alarms == 1
        assert q.gamma_tp == pytest.approx(1 / 0.6, rel=1e-12)
        assert q.max_spurious == pytest.approx(600.0)

    def test_tied_peaks_resolve_to_lowest_index(self, grid):
        x_true = AnomalyTemplate("point", (9,), amplitude=1.0).vector(20)
        x_hat = np.zeros(20, dtype=complex)
        x_hat[4] = 1.0
        x_hat[11] = 1.0  # exact tie; argmax must take index 4
        q = recon_quality(x_hat, x_true, grid)
        pos = grid.anomaly_positions()
        assert q.eps_loc == pytest.approx(np.linalg.norm(pos[4] - pos[9]))

    def test_phase_invariance_of_magnitude_metrics(self, grid, rng):
        x_true = AnomalyTemplate("point", (9,), amplitude=1000.0).vector(20)
        x_hat = rng.standard_normal(20) + 1j * rng.standard_normal(20) + x_true
        phase = np.exp(1j * 1.234)
        q1 = recon_quality(x_hat, x_true, grid)
        q2 = recon_quality(phase * x_hat, phase * x_true, grid)
        assert q1.eps_loc == q2.eps_loc
        assert q1.max_spurious == pytest.approx(q2.max_spurious, rel=1e-12)
        assert q1.gamma_tp == pytest.approx(q2.gamma_tp, rel=1e-12)
        assert q1.false_alarms == q2.false_alarms

    def test_explicit_support_with_dense_baseline(self, grid, rng):
        baseline = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        q = recon_quality(baseline, baseline, grid, support=(9,))
        assert q.nmse == 0.0
        assert q.eps_loc == 0.0

    def test_zero_template_rejected(self, grid):
        with pytest.raises(DomainError):
            recon_quality(np.ones(20, dtype=complex), np.zeros(20, dtype=complex), grid)


class TestApproximateCovariance:
    def test_full_is_identity_map(self, rng):
        a = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
        r = HermitianCovariance(a @ a.conj().T, block_size=4)
        assert np.array_equal(approximate_covariance(r, "full").entries, r.entries)

    def test_masks_are_idempotent_and_trace_preserving(self, rng):
        a = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
        r = HermitianCovariance(a @ a.conj().T, block_size=4)
        for kind in ("block-diagonal", "diagonal"):
            once = approximate_covariance(r, kind)
            twice = approximate_covariance(once, kind)
            assert np.array_equal(once.entries, twice.entries)
            assert once.trace() == pytest.approx(r.trace(), rel=1e-12)
            assert once.eigvals.min() >= 0.0  # PSD after clamp

    def test_diagonal_of_diagonal_unchanged(self):
        r = HermitianCovariance(np.diag([3.0, 2.0, 1.0]), block_size=1)
        assert np.array_equal(approximate_covariance(r, "diagonal").entries, r.entries)

    def test_unknown_kind_rejected(self, rng):
        with pytest.raises(ConfigError):
            approximate_covariance(HermitianCovariance(np.eye(4)), "sparse")


class TestWhiteningError:
    def test_matched_model_calibration(self, rng):
        # complex-Wishart oracle: E ||Rw - I||_F / ||I||_F ~ sqrt(dim / L);
        # 0.224 at L = 20*dim, so < 0.3 with margin, and decreasing in L
        dim = 20
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        r = HermitianCovariance(a @ a.conj().T / dim)
        at_20dim = whitening_error(r, sample_with_covariance(rng, 20 * dim, r.entries))
        at_200dim = whitening_error(r, sample_with_covariance(rng, 200 * dim, r.entries))
        assert at_20dim < 0.3
        assert at_200dim < at_20dim
        assert at_200dim < 0.12

    def test_identity_case(self, rng):
        dim = 16
        r = HermitianCovariance(np.eye(dim))
        err = whitening_error(r, complex_gaussian(rng, 50 * dim, dim))
        assert err < 0.2

    def test_unitary_invariance(self, rng):
        dim = 8
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        r = a @ a.conj().T / dim
        samples = sample_with_covariance(rng, 400, r)
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
        direct = whitening_error(HermitianCovariance(r), samples)
        rotated = whitening_error(
            HermitianCovariance(q @ r @ q.conj().T), samples @ q.T
        )
        assert rotated == pytest.approx(direct, rel=1e-9)


class TestDetectionEval:
    def test_null_case(self, rng):
        dim = 10
        r = HermitianCovariance(np.eye(dim))
        bg = complex_gaussian(rng, 2000, dim)
        target = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        result = detection_eval(r, target, bg, bg)
        assert result.p_d_at_fa05 == pytest.approx(0.05, abs=2 / np.sqrt(2000))
        assert abs(result.z_margin) < 0.1

    def test_separable_targets(self, rng):
        dim = 6
        r = HermitianCovariance(np.eye(dim))
        bg = complex_gaussian(rng, 500, dim)
        target = 100.0 * np.ones(dim, dtype=complex)
        result = detection_eval(r, target, bg, bg + target)
        assert result.p_d_at_fa05 == 1.0
        assert result.z_margin > 100.0

    def test_requires_enough_background(self, rng):
        r = HermitianCovariance(np.eye(4))
        bg = complex_gaussian(rng, 50, 4)
        with pytest.raises(DomainError):
            detection_eval(r, np.ones(4, dtype=complex), bg, bg)

    def test_constant_scores_rejected(self, rng):
        r = HermitianCovariance(np.eye(4))
        bg = np.zeros((200, 4), dtype=complex)
        with pytest.raises(DomainError):
            detection_eval(r, np.ones(4, dtype=complex), bg, bg)
