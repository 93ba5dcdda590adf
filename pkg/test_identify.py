"""
Tests for closed-form, ridge and constrained identification.
"""
import time

import numpy as np
import pytest

from conftest import random_excitation
from thermoloss.components.dataset import RegressionMatrices, build_regression
from thermoloss.components.identify import (
    ConstraintSpec,
    EqualityConstraint,
    IdentOptions,
    LinearThermalModel,
    SignConstraint,
    check_rank,
    fit_constrained,
    fit_least_squares,
    load_constraints,
    load_model,
    relative_error,
    residual_series,
    save_model,
    select_epsilon,
    sweep_epsilon,
)
from thermoloss.components.synth import simulate_with_noise
from thermoloss.utils.errors import ConfigError, ConstraintError, DataError, IllConditionedError


def regression(Z, Uout, dt=1.0):
    Z, Uout = np.asarray(Z, dtype=float), np.asarray(Uout, dtype=float)
    m, n = Uout.shape[0], Z.shape[0] - Uout.shape[0]
    return RegressionMatrices(Z, Uout, np.arange(Z.shape[1]),
                              tuple(f"T_{i}" for i in range(m)), tuple(f"P_{j}" for j in range(n)), dt)


def model_from(A, B, dt=1.0):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    return LinearThermalModel(A, B, dt, tuple(f"T_{i}" for i in range(A.shape[0])),
                              tuple(f"P_{j}" for j in range(B.shape[1])))


def simulated_regression(model, K, seed, noise_std=0.0, hold=5):
    X = random_excitation(model.n, K, seed, hold=hold)
    dataset = simulate_with_noise(model, X, np.zeros(model.m), noise_std, seed=seed)
    return build_regression(dataset)


@pytest.fixture
def random_problem():
    rng = np.random.default_rng(11)
    W_true = rng.normal(size=(3, 5))
    Z = rng.normal(size=(5, 40))
    return W_true, regression(Z, W_true @ Z)


# fit_least_squares

def test_single_column_interpolation():
    reg = regression([[1.0], [0.0], [0.0]], [[1.0]])
    report = fit_least_squares(reg, epsilon=1e-12)
    np.testing.assert_allclose(report.model.W, [[1.0, 0.0, 0.0]], atol=1e-10)


def test_singular_gram_fails_loudly():
    reg = regression([[1.0], [0.0], [0.0]], [[1.0]])
    with pytest.raises(IllConditionedError, match="epsilon") as info:
        fit_least_squares(reg, epsilon=0.0)
    assert info.value.exit_code == 4


def test_exact_recovery_of_random_map(random_problem):
    W_true, reg = random_problem
    report = fit_least_squares(reg)
    assert np.linalg.norm(report.model.W - W_true) <= 1e-8 * np.linalg.norm(W_true)
    assert report.final_objective >= 0.0
    assert report.iterations_used == 0


def test_ridge_shrinks_exact_solution(random_problem):
    _, reg = random_problem
    norms = [np.linalg.norm(r.model.W) for r in sweep_epsilon(reg, [0.0, 1e-6, 1e-3, 1.0])]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_ridge_goes_to_zero(random_problem):
    _, reg = random_problem
    assert np.linalg.norm(fit_least_squares(reg, 1e12).model.W) < 1e-6


def test_oracle_recovery_of_converter_network(oracle_model):
    reg = simulated_regression(oracle_model, 10_000, seed=4)
    started = time.perf_counter()
    report = fit_least_squares(reg)
    elapsed = time.perf_counter() - started
    assert relative_error(report.model, oracle_model) <= 1e-8
    assert report.rank_ok
    assert elapsed < 5.0


def test_normal_equations_hold_on_noisy_data(small_model):
    reg = simulated_regression(small_model, 2000, seed=2, noise_std=0.1)
    model = fit_least_squares(reg).model
    E = residual_series(model, reg).E
    bound = 1e-8 * np.linalg.norm(reg.Uout) * np.linalg.norm(reg.Z)
    assert np.linalg.norm(E @ reg.Z.T) <= bound


def test_ridge_norm_nonincreasing_on_noisy_data(small_model):
    reg = simulated_regression(small_model, 1500, seed=5, noise_std=0.1)
    norms = [np.linalg.norm(r.model.W) for r in sweep_epsilon(reg, [0.0, 1e-6, 1e-3, 1.0, 1e3])]
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


def test_tuned_ridge_beats_plain_least_squares(small_model):
    """Two nearly collinear sources make the plain fit noise-dominated."""
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        base = random_excitation(1, 300, seed=200 + seed)[0]
        X = np.vstack([base, base + 1e-3 * rng.normal(size=base.size)])
        train = build_regression(simulate_with_noise(small_model, X, np.zeros(3), 0.1, seed=seed))
        validation = build_regression(simulate_with_noise(
            small_model, random_excitation(2, 300, seed=300 + seed), np.zeros(3), 0.1, seed=400 + seed))

        plain = fit_least_squares(train).model
        _, tuned = select_epsilon(train, validation, [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0])
        if relative_error(tuned.model, small_model) < relative_error(plain, small_model):
            wins += 1
    assert wins >= 8


def test_error_shrinks_with_more_samples(small_model):
    errors = []
    for K in (100, 1000, 10_000):
        batch = [relative_error(fit_least_squares(simulated_regression(small_model, K, seed, 0.01), 1e-6).model,
                                small_model) for seed in range(5)]
        errors.append(np.mean(batch))
    assert errors[0] > errors[1] > errors[2]


def test_select_epsilon_skips_singular_candidates():
    reg = regression([[1.0, 2.0], [0.0, 0.0], [1.0, 1.0]], [[1.0, 2.0]])
    eps, report = select_epsilon(reg, reg, [0.0, 1e-3])
    assert eps == 1e-3
    assert report.epsilon == 1e-3


# fit_constrained

def test_unconstrained_projection_matches_closed_form(small_model):
    reg = simulated_regression(small_model, 500, seed=1, noise_std=0.05)
    closed = fit_least_squares(reg).model.W
    report = fit_constrained(reg, ConstraintSpec(), IdentOptions())
    np.testing.assert_allclose(report.model.W, closed, atol=1e-9)
    assert report.converged


def test_nonnegative_input_map_is_exact(small_model):
    reg = simulated_regression(small_model, 1000, seed=3)
    assert np.all(small_model.B_bar >= 0)
    signs = {SignConstraint("B", r, c, 1) for r in range(3) for c in range(2)}
    report = fit_constrained(reg, ConstraintSpec(signs), IdentOptions())
    unconstrained = fit_least_squares(reg)

    assert report.constraint_violation == 0.0
    assert np.all(report.model.B_bar >= 0.0)
    assert abs(report.final_objective - unconstrained.final_objective) <= 1e-6
    np.testing.assert_allclose(report.model.W, small_model.W, atol=1e-6)


def test_inactive_equality_keeps_objective(small_model):
    reg = simulated_regression(small_model, 1000, seed=6)
    pinned = float(small_model.A_bar[0, 0])
    constraints = ConstraintSpec(equality_constraints={EqualityConstraint("A", 0, 0, pinned)})
    report = fit_constrained(reg, constraints)
    assert report.model.A_bar[0, 0] == pinned
    assert abs(report.final_objective - fit_least_squares(reg).final_objective) <= 1e-9


def test_active_constraint_objective_never_increases(small_model):
    reg = simulated_regression(small_model, 800, seed=7, noise_std=0.1)
    assert small_model.A_bar[0, 0] > 0.0
    constraints = ConstraintSpec({SignConstraint("A", 0, 0, -1), SignConstraint("B", 1, 0, -1)})
    report = fit_constrained(reg, constraints, IdentOptions(max_iterations=2000))

    history = np.array(report.objective_history)
    assert np.all(np.diff(history) <= 0.0)
    assert report.model.A_bar[0, 0] <= 0.0
    assert report.model.B_bar[1, 0] <= 0.0
    assert report.constraint_violation == 0.0
    assert report.final_objective >= fit_least_squares(reg).final_objective - 1e-9


def test_iteration_budget_is_reported_not_raised(small_model):
    reg = simulated_regression(small_model, 800, seed=7, noise_std=0.1)
    constraints = ConstraintSpec({SignConstraint("A", 0, 0, -1)})
    options = IdentOptions(max_iterations=1, step_tolerance=1e-30, objective_tolerance=1e-30)
    report = fit_constrained(reg, constraints, options)
    assert report.iterations_used == 1
    assert not report.converged
    assert report.model.A_bar[0, 0] <= 0.0


def test_rank_requirement_is_flagged(small_model):
    reg = simulated_regression(small_model, 500, seed=8)
    fixes = {EqualityConstraint("B", r, c, 1.0) for r in range(3) for c in range(2)}
    report = fit_constrained(reg, ConstraintSpec(equality_constraints=fixes, require_full_column_rank_B=True))
    assert report.rank_ok is False
    np.testing.assert_array_equal(report.model.B_bar, np.ones((3, 2)))


def test_conflicting_equalities_are_rejected():
    with pytest.raises(ConstraintError):
        ConstraintSpec(equality_constraints={EqualityConstraint("A", 0, 0, 0.9),
                                             EqualityConstraint("A", 0, 0, 0.8)})


def test_sign_and_equality_on_same_entry_rejected():
    with pytest.raises(ConstraintError):
        ConstraintSpec({SignConstraint("B", 0, 0, 1)}, {EqualityConstraint("B", 0, 0, 0.5)})


def test_projection_clamps_and_overwrites():
    constraints = ConstraintSpec({SignConstraint("A", 0, 0, -1), SignConstraint("B", 1, 0, 1)},
                          {EqualityConstraint("A", 1, 1, 0.25)})
    W = np.array([[0.5, 2.0, 1.0], [3.0, 4.0, -1.0]])
    np.testing.assert_array_equal(constraints.project(W), [[0.0, 2.0, 1.0], [3.0, 0.25, 0.0]])
    assert constraints.violation(W) == pytest.approx(3.75)


# check_rank / residual_series

def test_rank_of_single_column():
    report = check_rank(model_from(np.eye(2), [[1.0], [1.0]]))
    assert report.rank == 1
    assert report.full_column_rank


def test_rank_of_repeated_columns():
    report = check_rank(model_from(np.eye(2), [[1.0, 1.0], [2.0, 2.0]]))
    assert report.rank == 1
    assert not report.full_column_rank


def test_rank_of_random_tall_map():
    B = np.random.default_rng(9).normal(size=(4, 2))
    assert check_rank(model_from(np.eye(4), B)).rank == 2


def test_residuals_of_exact_fit(random_problem):
    W_true, reg = random_problem
    residuals = residual_series(LinearThermalModel.from_W(W_true, 1.0, reg.temp_channels, reg.power_channels), reg)
    np.testing.assert_allclose(residuals.norms, 0.0, atol=1e-12)


def test_residuals_of_zero_model(random_problem):
    _, reg = random_problem
    zero = LinearThermalModel.from_W(np.zeros((3, 5)), 1.0, reg.temp_channels, reg.power_channels)
    residuals = residual_series(zero, reg)
    np.testing.assert_array_equal(residuals.E, reg.Uout)
    np.testing.assert_allclose(residuals.norms, np.linalg.norm(reg.Uout, axis=0))


def test_residuals_reject_mismatched_model(random_problem):
    _, reg = random_problem
    with pytest.raises(ValueError):
        residual_series(model_from(np.eye(2), np.ones((2, 1))), reg)


def test_model_rejects_bad_shapes_and_values():
    with pytest.raises(ValueError):
        LinearThermalModel(np.eye(2), np.ones((3, 1)), 1.0, ("T_a", "T_b"), ("P_a",))
    with pytest.raises(ValueError):
        model_from([[np.nan]], [[1.0]])


# files

def test_model_file_is_bit_faithful(tmp_path, oracle_model):
    path = str(tmp_path / "model.txt")
    save_model(oracle_model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.A_bar, oracle_model.A_bar)
    np.testing.assert_array_equal(loaded.B_bar, oracle_model.B_bar)
    assert loaded.dt == oracle_model.dt
    assert loaded.temp_channels == oracle_model.temp_channels


def test_missing_model_file(tmp_path):
    with pytest.raises(DataError):
        load_model(str(tmp_path / "absent.txt"))


def test_model_file_with_wrong_entry_count(tmp_path):
    path = tmp_path / "model.txt"
    path.write_text("dt=1\ntemp_channels=T_a\npower_channels=P_a\nA_bar=0.5,0.1\nB_bar=1\n")
    with pytest.raises(ConfigError, match="A_bar"):
        load_model(str(path))


def test_constraint_file(tmp_path):
    path = tmp_path / "constraints.txt"
    path.write_text("sign.B=>=0\nsign.A[0,1]=<=0\nfix.A[1,1]=0.9\nrank.full_column_B=true\n")
    constraints = load_constraints(str(path), m=2, n=3)
    assert len(constraints.sign_constraints) == 7
    assert constraints.equality_constraints == frozenset({EqualityConstraint("A", 1, 1, 0.9)})
    assert constraints.require_full_column_rank_B


def test_constraint_file_rank_tolerance_fallback(tmp_path):
    path = tmp_path / "constraints.txt"
    path.write_text("rank.full_column_B=true\n")
    assert load_constraints(str(path), m=2, n=2, rank_tolerance=1e-3).rank_tolerance == 1e-3
    path.write_text("rank.full_column_B=true\nrank.tolerance=1e-6\n")
    assert load_constraints(str(path), m=2, n=2, rank_tolerance=1e-3).rank_tolerance == 1e-6


@pytest.mark.parametrize("line, key", [
    ("sign.C=>=0", "sign.C"),
    ("sign.B=positive", "sign.B"),
    ("fix.A[0,0]=abc", "fix.A[0,0]"),
])
def test_constraint_file_names_bad_key(tmp_path, line, key):
    path = tmp_path / "constraints.txt"
    path.write_text(line + "\n")
    with pytest.raises(ConfigError) as info:
        load_constraints(str(path), m=2, n=2)
    assert info.value.key == key


def test_constraint_outside_matrix(tmp_path):
    path = tmp_path / "constraints.txt"
    path.write_text("fix.A[5,0]=1\n")
    with pytest.raises(ConstraintError):
        load_constraints(str(path), m=2, n=2)
