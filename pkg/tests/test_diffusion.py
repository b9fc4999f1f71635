"""
Tests for schedules, analytic predictors, the complete generation process and the
trajectory container.
"""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from src.diffusion import (denoise_step, draw_initial_noise, full_generate, load_trajectory_set,
                           record_trajectory_set, save_trajectory_set)
from src.errors import (BlobDimensionError, BlobSizeError, ConfigError, ContainerReadError,
                        DimensionMismatchError, InvalidDistributionError, ManifestError,
                        NotPositiveDefiniteError)
from src.predictors import (GmmPredictor, ZeroPredictor, gaussian_predictor, gmm_predictor,
                            predictor_from_descriptor)
from src.schedule import make_linear_schedule, schedule_from_descriptor


def small_gmm(schedule, d=4, seed=0):
    """Two well separated components in d dimensions."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((2, d))
    means *= 3.0 / np.linalg.norm(means, axis=1, keepdims=True)
    return gmm_predictor([0.4, 0.6], list(means), [0.5 * np.eye(d), 0.8 * np.eye(d)], schedule)


def forward_sample(x0, alpha_bar, rng):
    """x_t = sqrt(alpha_bar) x_0 + sqrt(1 - alpha_bar) eps for every row of x0."""
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * rng.standard_normal(x0.shape)


def posterior_noise(x0, x, alpha_bar):
    """
    Self-normalised importance estimate of E[eps | x_t = x] over prior samples x0,
    with its per-coordinate standard error.
    """
    noise = (x - np.sqrt(alpha_bar) * x0) / np.sqrt(1.0 - alpha_bar)
    log_weights = -0.5 * np.sum(noise ** 2, axis=1)
    weights = np.exp(log_weights - log_weights.max())
    weights /= weights.sum()
    mean = weights @ noise
    return mean, np.sqrt(weights ** 2 @ (noise - mean) ** 2)


class TestNoiseSchedule:
    """Linear beta schedules."""

    def test_linear_schedule(self):
        schedule = make_linear_schedule(1000, 1e-4, 0.02)
        assert schedule.T == 1000, "T counts steps"
        assert schedule.alpha_bar[0] == 1.0, "alpha_bar closes at one"
        assert np.all(np.diff(schedule.alpha_bar) < 0), "alpha_bar strictly decreases"
        assert schedule.alpha_bar[1] == pytest.approx(1.0 - 1e-4), "first factor is 1 - beta_start"
        assert schedule.is_deterministic, "eta = 0 gives sigma = 0"
        assert schedule.alpha_bar[1000] == pytest.approx(4.035830e-05, rel=1e-6), "frozen alpha_bar_T"

    def test_stochastic_schedule(self):
        schedule = make_linear_schedule(100, eta=1.0)
        assert not schedule.is_deterministic, "eta > 0 gives positive sigma"
        assert schedule.sigma[0] == 0.0 and np.all(schedule.sigma[2:] > 0.0), "sigma layout"
        assert schedule.sigma[1] == 0.0, "the last hop onto alpha_bar = 1 carries no noise"
        assert np.all(schedule.sigma[1:] ** 2 <= 1.0 - schedule.alpha_bar[:-1] + 1e-15), \
            "noise never exceeds the variance budget"

    @pytest.mark.parametrize("kwargs", [{"T": 0}, {"beta_start": 0.0}, {"beta_start": 0.1, "beta_end": 0.01},
                                        {"beta_end": 1.0}, {"eta": 1.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            make_linear_schedule(**kwargs)

    def test_descriptor(self):
        schedule = make_linear_schedule(50, 2e-4, 0.03, eta=0.25)
        rebuilt = schedule_from_descriptor(schedule.descriptor())
        assert np.array_equal(rebuilt.alpha_bar, schedule.alpha_bar), "alpha_bar survives"
        assert np.array_equal(rebuilt.sigma, schedule.sigma), "sigma survives"
        with pytest.raises(ConfigError):
            schedule_from_descriptor({"kind": "cosine", "T": 10})

    def test_read_only(self):
        schedule = make_linear_schedule(10)
        with pytest.raises(ValueError):
            schedule.alpha_bar[3] = 0.5


class TestPredictors:
    """Closed-form noise predictors."""

    @pytest.fixture
    def schedule(self):
        # Provide the default 1000-step schedule.
        return make_linear_schedule()

    def test_gaussian_matches_monte_carlo(self, schedule):
        mu = np.array([1.0, -0.5])
        sigma = np.array([[1.0, 0.3], [0.3, 0.5]])
        predictor = gaussian_predictor(mu, sigma, schedule)
        rng = np.random.default_rng(42)
        x0 = rng.multivariate_normal(mu, sigma, size=100_000)
        for t in (200, 400, 600, 800, 1000):
            x = forward_sample(x0[:1], schedule.alpha_bar[t], rng)[0]
            mean, error = posterior_noise(x0, x, schedule.alpha_bar[t])
            assert np.all(np.abs(predictor.predict(x, t) - mean) <= 3.0 * error), \
                f"predictor disagrees with the Monte-Carlo oracle at t={t}"

    def test_gmm_matches_monte_carlo(self, schedule):
        predictor = small_gmm(schedule, d=3)
        params = predictor.descriptor()["parameters"]
        rng = np.random.default_rng(8)
        labels = rng.choice(2, size=100_000, p=params["weights"])
        x0 = np.empty((100_000, 3))
        for k, (m, c) in enumerate(zip(params["means"], params["covariances"])):
            chosen = labels == k
            x0[chosen] = rng.multivariate_normal(m, c, size=int(chosen.sum()))
        for t in (200, 400, 600, 800, 1000):
            x = forward_sample(x0[t:t + 1], schedule.alpha_bar[t], rng)[0]
            mean, error = posterior_noise(x0, x, schedule.alpha_bar[t])
            assert np.all(np.abs(predictor.predict(x, t) - mean) <= 3.0 * error), \
                f"mixture prediction disagrees with the Monte-Carlo oracle at t={t}"

    def test_gmm_matches_bayes_rule(self, schedule):
        predictor = small_gmm(schedule, d=3)
        params = predictor.descriptor()["parameters"]
        rng = np.random.default_rng(5)
        for t in (1, 100, 400, 700, 1000):
            a = schedule.alpha_bar[t]
            x = rng.standard_normal(3) * 2.0
            densities, noises = [], []
            for w, m, c in zip(params["weights"], params["means"], params["covariances"]):
                cov_t = a * np.asarray(c) + (1.0 - a) * np.eye(3)
                densities.append(w * multivariate_normal(np.sqrt(a) * np.asarray(m), cov_t).pdf(x))
                noises.append(np.sqrt(1.0 - a) * np.linalg.solve(cov_t, x - np.sqrt(a) * np.asarray(m)))
            gamma = np.array(densities) / np.sum(densities)
            expected = gamma @ np.array(noises)
            assert np.allclose(predictor.predict(x, t), expected, atol=1e-9), \
                f"mixture prediction disagrees with Bayes' rule at t={t}"
            assert predictor.responsibilities(x, t) == pytest.approx(gamma, abs=1e-9), \
                "responsibilities match Bayes' rule"

    def test_single_component_is_gaussian(self, schedule):
        mu, sigma = np.array([0.5, 1.0, -1.0]), np.diag([0.5, 1.0, 2.0])
        single = gmm_predictor([1.0], [mu], [sigma], schedule)
        gaussian = gaussian_predictor(mu, sigma, schedule)
        x = np.array([0.1, -0.4, 2.0])
        assert np.allclose(single.predict(x, 300), gaussian.predict(x, 300), atol=1e-14), \
            "one-component mixture equals the Gaussian predictor"
        assert single.responsibilities(x, 300)[0] == 1.0, "single responsibility is exactly one"

    def test_batched_prediction(self, schedule):
        predictor = small_gmm(schedule)
        batch = np.random.default_rng(1).standard_normal((5, 4))
        rows = np.array([predictor.predict(x, 250) for x in batch])
        assert np.allclose(predictor.predict(batch, 250), rows, atol=1e-14), "batch equals loop"

    def test_far_from_data_is_finite(self, schedule):
        predictor = small_gmm(schedule)
        assert np.all(np.isfinite(predictor.predict(np.full(4, 1e3), 1))), \
            "log-sum-exp keeps responsibilities finite"

    def test_invalid_parameters(self, schedule):
        with pytest.raises(InvalidDistributionError):
            gmm_predictor([0.5, 0.6], [np.zeros(2), np.ones(2)], [np.eye(2)] * 2, schedule)
        with pytest.raises(NotPositiveDefiniteError):
            gaussian_predictor(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]], schedule)
        with pytest.raises(DimensionMismatchError):
            gaussian_predictor(np.zeros(3), np.eye(2), schedule)
        with pytest.raises(DimensionMismatchError):
            small_gmm(schedule).predict(np.zeros(3), 10)
        with pytest.raises(ConfigError):
            small_gmm(schedule).predict(np.zeros(4), 1001)

    def test_descriptor_round_trip(self, schedule):
        predictor = small_gmm(schedule)
        rebuilt = predictor_from_descriptor(predictor.descriptor(), schedule)
        assert isinstance(rebuilt, GmmPredictor), "kind survives"
        x = np.linspace(-1.0, 1.0, 4)
        assert np.array_equal(rebuilt.predict(x, 77), predictor.predict(x, 77)), "same outputs"
        zero = predictor_from_descriptor({"kind": "zero", "parameters": {"dimension": 3}}, schedule)
        assert zero.dimension == 3, "zero predictor keeps its dimension"
        with pytest.raises(ConfigError):
            predictor_from_descriptor({"kind": "unet"}, schedule)


class TestGeneration:
    """Complete generation process and trajectory recording."""

    @pytest.fixture
    def schedule(self):
        # Provide a short schedule so recordings stay fast.
        return make_linear_schedule(50)

    def test_zero_predictor_rescales(self, schedule):
        x_T = draw_initial_noise(3, 5)
        trajectory = full_generate(schedule, ZeroPredictor(schedule, 5), x_T, seed=3)
        assert trajectory.states.shape == (51, 5) and trajectory.outputs.shape == (50, 5), "shapes"
        assert np.allclose(trajectory.state(0), x_T / np.sqrt(schedule.alpha_bar[50]), rtol=1e-12), \
            "with zero noise every step only rescales x_T"
        assert np.array_equal(trajectory.state(50), x_T), "x_T is stored first"

    def test_denoise_step_identity(self, schedule):
        x, e = np.array([1.0, -2.0]), np.array([0.3, 0.1])
        assert np.allclose(denoise_step(x, e, 0.5, 0.5), x, atol=1e-14), "same level is the identity"
        noisy = denoise_step(x, e, 0.5, 0.6, sigma=0.1, noise=np.ones(2))
        clean = denoise_step(x, e, 0.5, 0.6)
        assert not np.allclose(noisy, clean), "noise term changes the result when sigma > 0"

    def test_record_is_deterministic(self, schedule):
        predictor = small_gmm(schedule)
        first = record_trajectory_set(schedule, predictor, 4, base_seed=10)
        again = record_trajectory_set(schedule, predictor, 4, base_seed=10)
        threaded = record_trajectory_set(schedule, predictor, 4, base_seed=10, threads=3)
        assert first.identical_to(again), "recording is reproducible"
        assert first.identical_to(threaded), "thread count never changes results"
        assert first.K == 4 and first.T == 50 and first.d == 4, "set dimensions"
        for k in range(4):
            assert np.array_equal(first[k].states[0], draw_initial_noise(10 + k, 4)), \
                "trajectory k starts from seed base_seed + k"
            assert first[k].seed == 10 + k, "seed provenance"

    def test_stochastic_recording(self):
        schedule = make_linear_schedule(50, eta=0.5)
        predictor = small_gmm(schedule)
        first = record_trajectory_set(schedule, predictor, 2, base_seed=1)
        again = record_trajectory_set(schedule, predictor, 2, base_seed=1)
        deterministic = record_trajectory_set(make_linear_schedule(50), small_gmm(schedule), 2, 1)
        assert first.identical_to(again), "seeded noise is reproducible"
        assert not first.is_deterministic, "eta is recorded"
        assert not np.allclose(first.states[:, -1], deterministic.states[:, -1]), \
            "the random term changes the outcome"

    def test_rejects_bad_input(self, schedule):
        with pytest.raises(DimensionMismatchError):
            full_generate(schedule, small_gmm(schedule), np.zeros(3))
        with pytest.raises(DimensionMismatchError):
            record_trajectory_set(schedule, small_gmm(schedule), 0)


class TestContainer:
    """On-disk trajectory container."""

    @pytest.fixture
    def recorded(self):
        # Provide a small recorded set.
        schedule = make_linear_schedule(20)
        return record_trajectory_set(schedule, small_gmm(schedule, d=3), 3, base_seed=5)

    def test_round_trip(self, recorded, tmp_path):
        save_trajectory_set(recorded, tmp_path / "a")
        loaded = load_trajectory_set(tmp_path / "a")
        assert loaded.identical_to(recorded), "load returns the saved set"
        save_trajectory_set(loaded, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), \
                f"{name} must be byte-identical after save-load-save"

    def test_layout(self, recorded, tmp_path):
        save_trajectory_set(recorded, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert "manifest.json" in names, "manifest written"
        assert (tmp_path / "traj_2_states.f64").stat().st_size == 21 * 3 * 8, "T+1 states per blob"
        assert (tmp_path / "traj_2_outputs.f64").stat().st_size == 20 * 3 * 8, "T outputs per blob"

    def test_truncated_blob(self, recorded, tmp_path):
        save_trajectory_set(recorded, tmp_path)
        blob = tmp_path / "traj_1_outputs.f64"
        blob.write_bytes(blob.read_bytes()[:-3])
        with pytest.raises(BlobSizeError) as caught:
            load_trajectory_set(tmp_path)
        assert "traj_1_outputs.f64" in str(caught.value), "error names the file"

    def test_dimension_mismatch(self, recorded, tmp_path):
        save_trajectory_set(recorded, tmp_path)
        blob = tmp_path / "traj_0_states.f64"
        blob.write_bytes(np.zeros((21, 4)).astype("<f8").tobytes())
        with pytest.raises(BlobDimensionError) as caught:
            load_trajectory_set(tmp_path)
        assert "traj_0_states.f64" in str(caught.value), "error names the file"

    def test_manifest_errors(self, recorded, tmp_path):
        with pytest.raises(ContainerReadError):
            load_trajectory_set(tmp_path / "missing")
        save_trajectory_set(recorded, tmp_path)
        (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_trajectory_set(tmp_path)
        (tmp_path / "manifest.json").write_text('{"format_version": 1}', encoding="utf-8")
        with pytest.raises(ManifestError):
            load_trajectory_set(tmp_path)
