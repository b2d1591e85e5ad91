import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2s.errors import ShapeSizeError, SolverError
from s2s.regress import (
    CODE_DIM,
    FEATURE_DIM,
    KernelSpec,
    build_features,
    default_hyperparams,
    fit,
    gram,
    load_krr,
    predict,
    save_krr,
    split_features,
)


def toy(n=30, d=8, m=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = np.tanh(x @ rng.normal(size=(d, m))) + 0.1 * rng.normal(size=(n, m))
    return x, y


def standardized(x):
    mean, std = x.mean(axis=0), x.std(axis=0)
    return (x - mean) / np.where(std > 0, std, 1.0)


class TestFeatures:
    def test_placement(self):
        v = build_features(np.zeros(CODE_DIM), np.zeros(CODE_DIM), 1700, 70)
        assert v.shape == (FEATURE_DIM,)
        assert v[512] == 1700 and v[513] == 70

    def test_split_round_trip(self):
        rng = np.random.default_rng(0)
        f, s = rng.normal(size=(2, CODE_DIM))
        f2, s2, h, w = split_features(build_features(f, s, 1650.5, 61.25))
        np.testing.assert_array_equal(f2, f)
        np.testing.assert_array_equal(s2, s)
        assert (h, w) == (1650.5, 61.25)

    def test_validation(self):
        with pytest.raises(ShapeSizeError):
            build_features(np.zeros(10), np.zeros(CODE_DIM), 1700, 70)
        with pytest.raises(ValueError):
            build_features(np.zeros(CODE_DIM), np.zeros(CODE_DIM), -1, 70)
        with pytest.raises(ValueError):
            build_features(np.full(CODE_DIM, np.nan), np.zeros(CODE_DIM), 1700, 70)


class TestFit:
    def test_dual_matches_dense_solve(self):
        x, y = toy(40)
        k = KernelSpec(3)
        model = fit(x, y, k, 0.1)
        kmat = gram(k, standardized(x)) + 0.1 * np.eye(len(x))
        alpha = np.linalg.solve(kmat, y - y.mean(axis=0))
        assert np.abs(model.dual_coef - alpha).max() <= 1e-8 * np.abs(alpha).max()

    def test_degree_one_matches_explicit_ridge(self):
        x, y = toy(25, 6)
        lam = 0.3
        model = fit(x, y, KernelSpec(1, scale=1.0, offset=0.0), lam)
        xs = standardized(x)
        w = np.linalg.solve(xs.T @ xs + lam * np.eye(xs.shape[1]), xs.T @ (y - y.mean(axis=0)))
        x_new = np.random.default_rng(9).normal(size=(7, 6))
        xs_new = (x_new - x.mean(axis=0)) / x.std(axis=0)
        ref = xs_new @ w + y.mean(axis=0)
        np.testing.assert_allclose(predict(model, x_new), ref, rtol=1e-6, atol=1e-9)

    def test_linear_interpolation_oracle(self):
        xs = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        feats = np.c_[xs, np.zeros((5, 4))]  # padded with constant columns
        model = fit(feats, 2 * xs, KernelSpec(1, scale=1.0, offset=0.0), 1e-10)
        np.testing.assert_allclose(predict(model, feats)[:, 0], 2 * xs, atol=1e-6)

    def test_ridge_limit(self):
        # zero-mean targets so the centering term does not mask the shrinkage
        x, y = toy(20)
        y = y - y.mean(axis=0)
        pred = predict(fit(x, y, KernelSpec(3), 1e12), x)
        assert np.abs(pred).max() < 1e-3 * np.abs(y).max()

    def test_interpolation_limit(self):
        x, y = toy(20, 30)
        model = fit(x, y, KernelSpec(3), 1e-8)
        np.testing.assert_allclose(predict(model, x), y, rtol=1e-4, atol=1e-4 * np.abs(y).max())

    def test_duplicates_do_not_change_predictions(self):
        x, y = toy(20, 30)
        lam = 1e-8
        base = predict(fit(x, y, KernelSpec(3), lam), x)
        dup = predict(fit(np.r_[x, x[:3]], np.r_[y, y[:3]], KernelSpec(3), lam), x)
        np.testing.assert_allclose(dup, base, atol=1e-6)

    def test_zero_targets(self):
        x, _ = toy(15)
        assert np.all(predict(fit(x, np.zeros((15, 3))), x) == 0)

    def test_constant_feature_is_centered_only(self):
        x, y = toy(12, 4)
        x[:, 2] = 7.5
        model = fit(x, y)
        assert model.feat_scale[2] == 1.0
        assert np.all(model.train_x[:, 2] == 0)

    def test_gram_psd_and_symmetric(self):
        x, _ = toy(30, 10)
        k = gram(KernelSpec(3), standardized(x))
        np.testing.assert_array_equal(k, k.T)
        assert np.linalg.eigvalsh(k).min() >= -1e-8 * np.trace(k)

    def test_residual_monotone_in_lambda(self):
        x, y = toy(30)
        res = [np.sum((predict(fit(x, y, lam=lam), x) - y) ** 2) for lam in (1e-4, 1e-2, 1, 100)]
        assert all(a <= b + 1e-12 for a, b in zip(res, res[1:]))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        x, y = toy(25)
        perm = np.random.default_rng(seed).permutation(25)
        probe = np.random.default_rng(seed + 1).normal(size=(5, x.shape[1]))
        a = predict(fit(x, y), probe)
        b = predict(fit(x[perm], y[perm]), probe)
        np.testing.assert_allclose(a, b, atol=1e-9, rtol=1e-9)

    def test_errors(self):
        x, y = toy(10)
        with pytest.raises(ValueError):
            fit(x, y, lam=0)
        with pytest.raises(ShapeSizeError):
            fit(x, y[:5])
        with pytest.raises(ValueError):
            fit(np.where(np.eye(10, 8) > 0, np.nan, x), y)
        with pytest.raises(ShapeSizeError):
            predict(fit(x, y), np.zeros(3))

    def test_indefinite_gram_reported(self):
        x, y = toy(10)
        # an even degree with a negative offset is not a valid kernel
        with pytest.raises(SolverError, match="larger lambda"):
            fit(x, y, KernelSpec(2, offset=-5.0), 1e-12)

    def test_defaults(self):
        k, lam = default_hyperparams()
        assert (k.kind, k.degree, lam) == ("polynomial", 3, 0.1)

    def test_kernel_validation(self):
        with pytest.raises(ValueError):
            KernelSpec(0)
        with pytest.raises(ValueError):
            KernelSpec(3, scale=-1.0)
        with pytest.raises(ValueError):
            KernelSpec(3, kind="rbf")


class TestPersistence:
    def test_round_trip(self, tmp_path):
        x, y = toy(20)
        model = fit(x, y, KernelSpec(3, offset=2.0), 0.25, "measurements")
        save_krr(model, tmp_path / "m.bin")
        assert (tmp_path / "m.bin").read_bytes()[:8] == b"S2SKRR1\0"
        back = load_krr(tmp_path / "m.bin")
        probe = np.random.default_rng(3).normal(size=(4, x.shape[1]))
        np.testing.assert_allclose(predict(back, probe), predict(model, probe), rtol=1e-12, atol=1e-12)
        assert back.lam == 0.25 and back.target_kind == "measurements"

    def test_truncated(self, tmp_path):
        x, y = toy(20)
        save_krr(fit(x, y), tmp_path / "m.bin")
        raw = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(raw[:-8])
        with pytest.raises(SolverError):
            load_krr(tmp_path / "m.bin")
