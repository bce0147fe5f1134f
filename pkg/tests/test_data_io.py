"""Tests for data generation, CSV round trips, draw stores and config parsing."""

import json

import numpy as np
import pandas as pd
import pytest

from mcqr.data_io import (
    DEFAULT_BETA,
    ParsedConfig,
    SyntheticSpec,
    dataset_to_long,
    generate_synthetic,
    parse_config,
    parse_config_dict,
    read_draws,
    read_long_csv,
    resolved_config_dict,
    synthetic_design,
    write_draws,
    write_long_csv,
)
from mcqr.errors import ConfigError, IngestionError
from mcqr.model import build_design_matrix, choices_from_utility_matrix


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def test_synthetic_design_layout():
    design = synthetic_design()
    assert design.p == 3
    assert design.k == 7
    assert design.baseline == "alt0"
    assert design.covariates() == ("x_shared", "x_own")


def test_generate_synthetic_shapes_and_determinism():
    spec = SyntheticSpec(n=50, seed=11)
    a = generate_synthetic(spec)
    b = generate_synthetic(SyntheticSpec(n=50, seed=11))
    assert a.X.shape == (50, 3, 7)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate_synthetic(SyntheticSpec(n=50, seed=12))
    assert not np.array_equal(a.y, c.y)


def test_generate_synthetic_design_matrix_structure():
    ds = generate_synthetic(SyntheticSpec(n=10, seed=1))
    # intercept dummies
    np.testing.assert_array_equal(ds.X[:, :, :3], np.broadcast_to(np.eye(3), (10, 3, 3)))
    # shared covariate occupies one column, alternative-specific covariates a
    # diagonal block
    own = ds.X[:, :, 4:]
    off_diag = own[:, ~np.eye(3, dtype=bool)]
    np.testing.assert_array_equal(off_diag, 0.0)
    # shared covariate correlation across alternatives approx 0.5 by design
    big = generate_synthetic(SyntheticSpec(n=4000, seed=2))
    xs = big.X[:, :, 3]
    corr = np.corrcoef(xs.T)
    assert np.allclose(corr[~np.eye(3, dtype=bool)], 0.5, atol=0.06)


def test_generate_synthetic_label_distribution_matches_direct_simulation():
    # independent re-simulation of the same data-generating process with
    # plain numpy; label frequencies must agree up to Monte Carlo error
    n = 40_000
    ds = generate_synthetic(SyntheticSpec(n=n, seed=3))
    freq = np.bincount(ds.y, minlength=4) / n

    rng = np.random.default_rng(987654)  # unrelated seed on purpose
    s_chol = np.linalg.cholesky(np.asarray(SyntheticSpec(n=1).shared_cov))
    xs = rng.standard_normal((n, 3)) @ s_chol.T
    xo = rng.standard_normal((n, 3))
    beta = np.asarray(DEFAULT_BETA)
    mean = beta[:3] + beta[3] * xs + beta[4:] * xo
    w = rng.exponential(1.0, n)
    # tau = 0.5: zero skew, scale sqrt(2 / 0.25) = sqrt(8), identity
    # correlation and unit diagonal scales
    eps = np.sqrt(8.0 * w)[:, None] * rng.standard_normal((n, 3))
    labels = choices_from_utility_matrix(mean + eps)
    ref = np.bincount(labels, minlength=4) / n

    np.testing.assert_allclose(freq, ref, atol=0.012)


def test_noiseless_mode_is_deterministic_given_covariates():
    noisy = generate_synthetic(SyntheticSpec(n=30, seed=4))
    clean = generate_synthetic(SyntheticSpec(n=30, seed=4, noiseless=True))
    # covariates drawn before the noise: both modes share X at equal seeds
    np.testing.assert_array_equal(noisy.X, clean.X)
    ystar = clean.X @ np.asarray(DEFAULT_BETA)
    np.testing.assert_array_equal(clean.y, choices_from_utility_matrix(ystar))


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(n=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(n=5, beta_true=(1.0, 2.0))
    with pytest.raises(ConfigError):
        SyntheticSpec(n=5, shared_cov=((1.0, 0.9), (0.9, 1.0)))
    lopsided = ((1.0, 0.5, 0.1), (0.5, 1.0, 0.5), (0.5, 0.5, 1.0))
    with pytest.raises(ConfigError):
        SyntheticSpec(n=5, shared_cov=lopsided)
    heavy = ((2.0, 0.5, 0.5), (0.5, 1.0, 0.5), (0.5, 0.5, 1.0))
    with pytest.raises(ConfigError):
        SyntheticSpec(n=5, shared_cov=heavy)
    with pytest.raises(ConfigError):
        SyntheticSpec(n=5, tau=1.0)
    assert SyntheticSpec(n=5, seed=1).with_seed(9).seed == 9


# ---------------------------------------------------------------------------
# long-format round trips
# ---------------------------------------------------------------------------


def test_dataset_to_long_shape_and_inverse():
    design = synthetic_design()
    ds = generate_synthetic(SyntheticSpec(n=25, seed=5))
    frame = dataset_to_long(ds, design)
    # one row per (observation, non-baseline alternative), no baseline rows
    assert len(frame) == 25 * 3
    assert set(frame["alt"]) == {"alt1", "alt2", "alt3"}
    assert list(frame.columns) == ["obs_id", "alt", "choice_flag", "x_shared", "x_own"]
    rebuilt = build_design_matrix(frame, design)
    np.testing.assert_array_equal(rebuilt.X, ds.X)
    np.testing.assert_array_equal(rebuilt.y, ds.y)


def test_long_csv_round_trip_bit_exact(tmp_path):
    design = synthetic_design()
    ds = generate_synthetic(SyntheticSpec(n=40, seed=6))
    path = tmp_path / "long.csv"
    write_long_csv(dataset_to_long(ds, design), path)
    rebuilt = read_long_csv(path, design)
    np.testing.assert_array_equal(rebuilt.X, ds.X)
    np.testing.assert_array_equal(rebuilt.y, ds.y)


def test_dataset_to_long_design_mismatch():
    ds = generate_synthetic(SyntheticSpec(n=4, seed=7))
    from mcqr.model import DesignConfig

    other = DesignConfig(alternatives=("a", "b"), baseline="z")
    with pytest.raises(ConfigError, match="does not match"):
        dataset_to_long(ds, other)


def test_read_long_csv_missing_file(tmp_path):
    with pytest.raises(IngestionError, match="no such file"):
        read_long_csv(tmp_path / "absent.csv", synthetic_design())


# ---------------------------------------------------------------------------
# draw stores
# ---------------------------------------------------------------------------


def test_draw_store_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    draws = rng.normal(size=(7, 3))
    draws[0, 0] = 0.1 + 0.2          # classic non-representable decimal
    draws[1, 1] = 1e-300             # subnormal-adjacent magnitude
    draws[2, 2] = -np.pi * 1e17
    names = ("beta[1]", "phi[1,2]", "delta[1]")
    path = tmp_path / "chain.csv"
    write_draws(path, draws, names, first_iter=1001)
    got_names, got, iters = read_draws(path)
    assert got_names == names
    np.testing.assert_array_equal(got, draws)
    np.testing.assert_array_equal(iters, np.arange(1001, 1008))
    header = path.read_text().splitlines()[0]
    assert header == "iter,param,value"


def test_write_draws_shape_check(tmp_path):
    with pytest.raises(ConfigError, match="does not match"):
        write_draws(tmp_path / "x.csv", np.zeros((2, 3)), ("a", "b"))


def test_read_draws_error_cases(tmp_path):
    with pytest.raises(IngestionError, match="no such file"):
        read_draws(tmp_path / "absent.csv")

    wrong = tmp_path / "wrong.csv"
    wrong.write_text("a,b\n1,2\n")
    with pytest.raises(IngestionError, match="expected"):
        read_draws(wrong)

    ragged = tmp_path / "ragged.csv"
    ragged.write_text(
        "iter,param,value\n1,beta[1],0.5\n1,beta[2],0.25\n2,beta[1],0.75\n"
    )
    with pytest.raises(IngestionError, match="missing parameter"):
        read_draws(ragged)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_parse_config_empty_takes_defaults():
    parsed = parse_config_dict({})
    assert isinstance(parsed, ParsedConfig)
    assert parsed.design.alternatives == ("alt1", "alt2", "alt3")
    assert parsed.prior.k == 7
    assert parsed.prior.eta == 20.0
    assert parsed.prior.k_shape == 10.0
    assert parsed.prior.alpha == 0.5
    assert [q.tau for q in parsed.quantiles] == [0.5]
    assert parsed.sampler.n_draws == 25000
    assert parsed.sampler.burn_in == 5000
    assert parsed.sampler.n_chains == 3
    assert parsed.sampler.phi_update == "exact"


def test_parse_config_round_trip_is_stable():
    raw = {
        "design": {
            "alternatives": ["car", "bus", "train"],
            "baseline": "walk",
            "shared": ["cost"],
            "alternative_specific": ["time"],
        },
        "prior": {"eta": 9.0, "k_shape": 4.0, "alpha": 1.5},
        "tau": [0.25, 0.5],
        "sampler": {"n_draws": 100, "burn_in": 10, "n_chains": 2, "seed": 7},
    }
    parsed = parse_config_dict(raw)
    resolved = resolved_config_dict(parsed)
    again = resolved_config_dict(parse_config_dict(resolved))
    assert resolved == again
    assert resolved["tau"] == [0.25, 0.5]
    assert resolved["sampler"]["seed"] == 7
    assert resolved["prior"]["b0"] == [0.0] * parsed.design.k


def test_parse_config_file_and_errors(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"tau": [0.3]}))
    parsed = parse_config(path)
    assert [q.tau for q in parsed.quantiles] == [0.3]

    with pytest.raises(ConfigError, match="no such config"):
        parse_config(tmp_path / "absent.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        parse_config(bad)

    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="root must be"):
        parse_config(listy)


@pytest.mark.parametrize(
    "raw,match",
    [
        ({"tau": [1.0]}, "strictly in"),
        ({"tau": [0.5, 0.5]}, "duplicates"),
        ({"tau": []}, "not be empty"),
        ({"bogus": {}}, "unknown field"),
        ({"prior": {"bogus": 1}}, "unknown field"),
        ({"sampler": {"bogus": 1}}, "unknown field"),
        ({"prior": {"eta": 1.0}}, "must exceed"),
        ({"prior": {"b0": [1.0, 2.0]}}, "length 7"),
        ({"prior": {"B0": [[1.0, 2.0], [2.0, 1.0]]}}, "positive definite"),
        ({"prior": {"phi0": [[1.0, 0.0], [0.0, 1.0]]}}, "must be 3x3"),
        ({"prior": {"k_shape": -2.0}}, "positive"),
        ({"sampler": {"n_draws": 10, "burn_in": 10}}, "burn_in"),
        ({"design": {"alternatives": ["a", "a"], "baseline": "z"}}, "distinct"),
    ],
)
def test_parse_config_rejections(raw, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_dict(raw)
