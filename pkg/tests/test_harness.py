import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nsgp.harness as harness
from nsgp.exceptions import NumericalError, ParseError
from nsgp.harness import (GENERATORS, ExperimentConfig, NormParams, generate_dataset,
                          latent_reconstruction_error, latent_rmse, load_csv, make_dataset, mse,
                          nlpd, run_experiment, split, write_dataset)
from nsgp.model import LatentState, VariantFlags
from nsgp.predict import PredictiveMixture

QUICK = ExperimentConfig(restarts=1, max_iters=30)


def _single(means, variances, noise=0.0):
    means = np.atleast_2d(means).astype(float)
    k, m = means.shape
    covs = np.array([np.diag(np.atleast_1d(v)) for v in np.atleast_2d(variances)])
    return PredictiveMixture(x=np.zeros(m), means=means, covs=covs,
                             noise_vars=np.full((k, m), noise))


def test_normalization_ranges_and_round_trip(rng):
    x, y = rng.uniform(-3, 7, 40), rng.normal(5, 2, 40)
    ds = make_dataset("t", x, y, fraction=1.0)
    assert ds.x_norm.min() == 0 and ds.x_norm.max() == 1
    assert ds.y_norm.min() == pytest.approx(-1) and ds.y_norm.max() == pytest.approx(1)
    np.testing.assert_allclose(ds.norm.y_from_norm(ds.y_norm), y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ds.norm.x_from_norm(ds.x_norm), x, rtol=0, atol=1e-12)


def test_constant_output_guard():
    norm = NormParams.fit(np.arange(4.0), np.full(4, 2.5))
    assert norm.y_scale == 1.0
    np.testing.assert_array_equal(norm.y_to_norm(np.full(4, 2.5)), np.zeros(4))


@pytest.mark.parametrize("n, n_train", [(4, 2), (133, 67), (101, 51), (5, 3)])
def test_split_sizes_and_partition(n, n_train):
    ds = make_dataset("t", np.arange(n, dtype=float), np.sin(np.arange(n)), fraction=0.5, seed=2)
    assert len(ds.train) == n_train
    assert sorted(np.concatenate([ds.train, ds.test])) == list(range(n))
    again = split(ds, 0.5, 2)
    np.testing.assert_array_equal(again.train, ds.train)
    with pytest.raises(ValueError):
        split(ds, 1.5)


def test_generators_are_deterministic():
    a, b = generate_dataset("D_ell", seed=4), generate_dataset("D_ell", seed=4)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.train, b.train)
    assert not np.array_equal(a.y, generate_dataset("D_ell", seed=5).y)


def test_generator_sizes():
    sizes = {name: len(generate_dataset(name).x) for name in GENERATORS}
    assert sizes == {"D_sigma": 100, "D_ell": 150, "D_omega_sigma": 100, "D_omega_ell": 150,
                     "D_omega_sigma_ell": 90}
    assert len(generate_dataset("J").x) == 101
    assert len(generate_dataset("D_ell", n=30).x) == 30


def test_generator_truth_shapes():
    t = generate_dataset("D_sigma").truth
    assert np.ptp(t["ell"]) == 0 and np.ptp(t["omega"]) == 0 and np.ptp(t["sigma"]) > 0
    t = generate_dataset("D_omega_sigma_ell").truth
    for c in ("ell", "sigma", "omega"):
        assert t[c].max() / t[c].min() >= 3
    assert set(generate_dataset("J").truth) == {"f", "omega"}
    with pytest.raises(ValueError):
        generate_dataset("D_nothing")


def test_csv_round_trip_with_truth(tmp_path):
    x, y, truth = harness.generate_raw("D_omega_ell", n=12, seed=1)
    path = tmp_path / "d.csv"
    write_dataset(path, x, y, truth)
    ds = load_csv(path, fraction=1.0)
    np.testing.assert_array_equal(ds.x, x)
    np.testing.assert_array_equal(ds.y, y)
    np.testing.assert_array_equal(ds.truth["ell"], truth["ell"])
    assert load_csv(path, fraction=0.5, seed=3).test.size == 6


@pytest.mark.parametrize("text, line", [
    ("x,y\n0,1\n1,abc\n", 3),
    ("x,y\n0,1\n1\n", 3),
    ("a,b\n0,1\n", 1),
    ("x,y\n0,nan\n1,2\n", 2),
    ("", 1),
])
def test_csv_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_mse():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0
    with pytest.raises(ValueError):
        mse([0.0], [1.0, 2.0])


def test_nlpd_unit_gaussian_at_mode():
    assert nlpd([0.0, 0.0], _single([0.0, 0.0], [1.0, 1.0])) == pytest.approx(
        0.5 * np.log(2 * np.pi), abs=1e-12)
    # the noise adds to the function variance
    assert nlpd([0.0], _single([0.0], [0.5], noise=0.5)) == pytest.approx(
        0.5 * np.log(2 * np.pi), abs=1e-12)
    with pytest.raises(ValueError):
        nlpd([0.0, 1.0], _single([0.0], [1.0]))


def test_nlpd_mixture_against_monte_carlo():
    rng = np.random.default_rng(8)
    mix = _single([[0.0, 1.0], [1.5, -0.5]], [[0.3, 1.0], [0.8, 0.2]], noise=0.1)
    y = np.array([0.4, 0.2])
    # Monte Carlo over components: mean density of y under random component picks
    comp = rng.integers(2, size=400_000)
    var = np.diagonal(mix.covs, axis1=1, axis2=2)[comp] + 0.1
    dens = np.exp(-0.5 * (y - mix.means[comp]) ** 2 / var) / np.sqrt(2 * np.pi * var)
    assert nlpd(y, mix) == pytest.approx(-np.mean(np.log(dens.mean(axis=0))), abs=1e-3)


def test_run_experiment_single_cell_is_reproducible():
    ds = generate_dataset("D_sigma", n=20, seed=0)
    a = run_experiment([ds], [VariantFlags()], "map", QUICK)
    b = run_experiment([ds], [VariantFlags()], "map", QUICK)
    assert len(a.rows) == 1 and a.rows[0]["status"] == "ok"
    assert a.to_tsv() == b.to_tsv()
    assert a.to_tsv().splitlines()[0].split("\t") == list(a.COLUMNS)
    assert "runtime" in a.to_tsv(runtime=True).splitlines()[0]
    assert a.lookup("D_sigma", "gp")["mse"] >= 0
    with pytest.raises(KeyError):
        a.lookup("D_sigma", "ell")


def test_run_experiment_records_failures(monkeypatch):
    def boom(*args):
        raise NumericalError("boom")

    monkeypatch.setattr(harness, "fit_and_score", boom)
    ds = generate_dataset("D_sigma", n=10)
    report = run_experiment([ds], [VariantFlags(), VariantFlags(omega=True)], "map", QUICK)
    assert [r["status"] for r in report.rows] == ["failed: NumericalError"] * 2
    assert "nan" in report.to_tsv()


def test_unknown_inference_rejected():
    ds = generate_dataset("D_sigma", n=10)
    with pytest.raises(ValueError):
        harness.fit_and_score(ds, VariantFlags(), "vi", QUICK)


def test_latent_rmse_zero_at_truth():
    ds = generate_dataset("D_omega_sigma_ell", n=20)
    truth = ds.truth_log_latents()
    assert latent_rmse(LatentState(**truth), truth) == {"ell": 0.0, "sigma": 0.0, "omega": 0.0}
    stationary = LatentState([truth["ell"][0]], [truth["sigma"][0]], [truth["omega"][0]])
    assert latent_rmse(stationary, truth)["ell"] > 0


def test_reconstruction_requires_truth():
    ds = generate_dataset("J")
    with pytest.raises(ValueError):
        latent_reconstruction_error(ds, [10], QUICK)


def test_reconstruction_rows_per_size():
    ds = generate_dataset("D_omega_sigma_ell", n=30, fraction=0.5)
    rows = latent_reconstruction_error(ds, [10, 20], QUICK)
    assert [r["size"] for r in rows] == [10, 20]
    # nested subsamples
    assert set(rows[0]["idx"]) <= set(rows[1]["idx"])
    assert all(r["rmse_omega"] >= 0 for r in rows)
    with pytest.raises(ValueError):
        latent_reconstruction_error(ds, [1], QUICK)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30))
def test_normalization_properties(points):
    x, y = np.array(points).T
    norm = NormParams.fit(x, y)
    xn, yn = norm.x_to_norm(x), norm.y_to_norm(y)
    assert xn.min() >= -1e-12 and xn.max() <= 1 + 1e-12
    assert np.all(np.abs(yn) <= 1 + 1e-9)
    np.testing.assert_allclose(norm.y_from_norm(yn), y, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(0.05, 4.0), finite)
def test_nlpd_of_single_gaussian_matches_closed_form(means, var, shift):
    y = np.array(means) + shift / 1e3
    mix = _single(means, [var] * len(means))
    expected = np.mean(0.5 * np.log(2 * np.pi * var) + (y - np.array(means)) ** 2 / (2 * var))
    assert nlpd(y, mix) == pytest.approx(expected, rel=1e-10, abs=1e-12)
