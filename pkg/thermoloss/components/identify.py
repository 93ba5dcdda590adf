"""
Identification of the temperature-power dynamics u(k+1) = A_bar u(k) + B_bar x(k).

``W = [A_bar B_bar]`` is m x (m+n) and minimizes ``||Uout - W Z||_F^2 + eps ||W||_F^2``.
The closed form is solved as an augmented least-squares problem rather than
through the normal equations, so the error scales with cond(Z) instead of
cond(Z)^2. Sign and equality constraints are handled by projected gradient
descent; the full-column-rank requirement on B_bar is checked after the fit.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Sequence, Tuple

import numpy as np

from thermoloss.utils.errors import ConfigError, ConstraintError, DataError, IllConditionedError
from thermoloss.utils.keyvalue import (
    format_float,
    format_floats,
    parse_float,
    parse_float_list,
    parse_name_list,
    read_key_values,
    write_key_values,
)

logger = logging.getLogger(__name__)

# Gram matrices with a larger condition number are treated as singular
GRAM_CONDITION_LIMIT = 1e15
DEFAULT_RANK_TOLERANCE = 1e-10
MATRICES = ("A", "B")


@dataclass(frozen=True)
class LinearThermalModel:
    """Identified discrete-time pair (A_bar, B_bar) with channel metadata."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    dt: float
    temp_channels: Tuple[str, ...]
    power_channels: Tuple[str, ...]

    def __post_init__(self):
        A = np.array(self.A_bar, dtype=float, ndmin=2)
        B = np.array(self.B_bar, dtype=float, ndmin=2)
        object.__setattr__(self, "A_bar", A)
        object.__setattr__(self, "B_bar", B)
        object.__setattr__(self, "temp_channels", tuple(self.temp_channels))
        object.__setattr__(self, "power_channels", tuple(self.power_channels))

        m, n = len(self.temp_channels), len(self.power_channels)
        if A.shape != (m, m):
            raise ValueError(f"A_bar has shape {A.shape}, expected ({m}, {m})")
        if B.shape != (m, n):
            raise ValueError(f"B_bar has shape {B.shape}, expected ({m}, {n})")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("model entries must be finite")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")

    @classmethod
    def from_W(cls, W, dt, temp_channels, power_channels):
        m = len(temp_channels)
        W = np.asarray(W, dtype=float)
        return cls(W[:, :m], W[:, m:], dt, temp_channels, power_channels)

    @property
    def m(self):
        return self.A_bar.shape[0]

    @property
    def n(self):
        return self.B_bar.shape[1]

    @property
    def W(self):
        return np.hstack([self.A_bar, self.B_bar])


@dataclass(frozen=True)
class SignConstraint:
    matrix: str
    row: int
    col: int
    sign: int  # +1 for >= 0, -1 for <= 0


@dataclass(frozen=True)
class EqualityConstraint:
    matrix: str
    row: int
    col: int
    value: float


@dataclass(frozen=True)
class ConstraintSpec:
    """
    Entry-wise constraints on A_bar and B_bar, plus the rank requirement on B_bar.

    Each constraint touches a single entry, so projecting onto the feasible
    set is an exact clamp or overwrite.
    """

    sign_constraints: FrozenSet[SignConstraint] = frozenset()
    equality_constraints: FrozenSet[EqualityConstraint] = frozenset()
    require_full_column_rank_B: bool = False
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE

    def __post_init__(self):
        object.__setattr__(self, "sign_constraints", frozenset(self.sign_constraints))
        object.__setattr__(self, "equality_constraints", frozenset(self.equality_constraints))
        if self.rank_tolerance < 0:
            raise ConstraintError(f"rank_tolerance must be nonnegative, got {self.rank_tolerance}")

        fixed = {}
        for eq in self.equality_constraints:
            _check_matrix_id(eq.matrix)
            entry = (eq.matrix, eq.row, eq.col)
            if entry in fixed and fixed[entry] != eq.value:
                raise ConstraintError(
                    f"{eq.matrix}[{eq.row},{eq.col}] is fixed to both {fixed[entry]} and {eq.value}"
                )
            fixed[entry] = eq.value
        for sc in self.sign_constraints:
            _check_matrix_id(sc.matrix)
            if sc.sign not in (1, -1):
                raise ConstraintError(f"sign must be +1 or -1, got {sc.sign}")
            if (sc.matrix, sc.row, sc.col) in fixed:
                raise ConstraintError(
                    f"{sc.matrix}[{sc.row},{sc.col}] has both a sign and an equality constraint"
                )

    @property
    def is_empty(self):
        return not self.sign_constraints and not self.equality_constraints

    def bounds(self, m, n):
        """
        Entry-wise bounds on W = [A_bar B_bar].

        Returns:
            tuple: (lower, upper, fixed_mask, fixed_values), each m x (m+n)
        """
        lower = np.full((m, m + n), -np.inf)
        upper = np.full((m, m + n), np.inf)
        mask = np.zeros((m, m + n), dtype=bool)
        values = np.zeros((m, m + n))

        for sc in self.sign_constraints:
            r, c = self._locate(sc.matrix, sc.row, sc.col, m, n)
            if sc.sign > 0:
                lower[r, c] = max(lower[r, c], 0.0)
            else:
                upper[r, c] = min(upper[r, c], 0.0)
        for eq in self.equality_constraints:
            r, c = self._locate(eq.matrix, eq.row, eq.col, m, n)
            mask[r, c] = True
            values[r, c] = eq.value
        return lower, upper, mask, values

    @staticmethod
    def _locate(matrix, row, col, m, n):
        width = m if matrix == "A" else n
        if not (0 <= row < m and 0 <= col < width):
            raise ConstraintError(f"constraint on {matrix}[{row},{col}] is outside an {m}x{width} matrix")
        return row, (col if matrix == "A" else m + col)

    def project(self, W, bounds=None):
        """Exact Euclidean projection of W onto the feasible set."""
        m = W.shape[0]
        lower, upper, mask, values = bounds or self.bounds(m, W.shape[1] - m)
        P = np.minimum(np.maximum(W, lower), upper)
        P[mask] = values[mask]
        return P

    def violation(self, W):
        """Largest absolute constraint violation of W."""
        m = W.shape[0]
        lower, upper, mask, values = self.bounds(m, W.shape[1] - m)
        worst = 0.0
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(np.maximum(lower - W, 0.0))))
            worst = max(worst, float(np.max(np.maximum(W - upper, 0.0))))
        if mask.any():
            worst = max(worst, float(np.max(np.abs(W[mask] - values[mask]))))
        return worst


def _check_matrix_id(matrix):
    if matrix not in MATRICES:
        raise ConstraintError(f"constraint matrix must be 'A' or 'B', got {matrix!r}")


@dataclass(frozen=True)
class IdentOptions:
    """Ridge weight and stopping rules of the constrained solver."""

    epsilon: float = 0.0
    max_iterations: int = 5000
    step_tolerance: float = 1e-12
    objective_tolerance: float = 1e-15

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")
        if not (self.step_tolerance > 0 and self.objective_tolerance > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class RankReport:
    rank: int
    singular_values: Tuple[float, ...]
    n: int

    @property
    def full_column_rank(self):
        return self.rank == self.n


@dataclass(frozen=True)
class FitReport:
    """Outcome of an identification run."""

    model: LinearThermalModel
    final_objective: float
    iterations_used: int
    singular_values_B: Tuple[float, ...]
    constraint_violation: float = 0.0
    epsilon: float = 0.0
    converged: bool = True
    rank_ok: Optional[bool] = None
    condition_number: float = float("nan")
    objective_history: Tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class ResidualSeries:
    """One-step prediction residuals e(k) and their per-step L2 norms."""

    E: np.ndarray
    norms: np.ndarray

    @property
    def sum_of_squares(self):
        return float(np.sum(self.norms ** 2))


def _ridge_solve(Z, Uout, epsilon):
    """Minimizer of ||Uout - W Z||_F^2 + eps ||W||_F^2 via augmented least squares."""
    p = Z.shape[0]
    if epsilon > 0:
        A = np.vstack([Z.T, math.sqrt(epsilon) * np.eye(p)])
        b = np.vstack([Uout.T, np.zeros((p, Uout.shape[0]))])
    else:
        A, b = Z.T, Uout.T
    solution, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    return solution.T


def gram_condition(Z, epsilon=0.0):
    """Condition number of Z Z^T + eps I from the singular values of Z."""
    s = np.linalg.svd(Z, compute_uv=False)
    p = Z.shape[0]
    s = np.concatenate([s, np.zeros(max(0, p - s.size))])
    largest = s[0] ** 2 + epsilon
    smallest = s[-1] ** 2 + epsilon
    return math.inf if smallest == 0 else largest / smallest


def _objective(W, reg, epsilon):
    R = reg.Uout - W @ reg.Z
    return float(np.sum(R * R) + epsilon * np.sum(W * W))


def _check_regression(reg):
    if reg.Z.ndim != 2 or reg.Uout.ndim != 2 or reg.Z.shape[1] != reg.Uout.shape[1]:
        raise ValueError(f"Z {reg.Z.shape} and Uout {reg.Uout.shape} are not column-aligned")
    if reg.Z.shape[1] < 1:
        raise DataError("regression matrices have no columns")
    if reg.Z.shape[0] <= reg.Uout.shape[0]:
        raise ValueError("Z must stack temperatures and at least one power channel")


def fit_least_squares(reg, epsilon=0.0, rank_tolerance=DEFAULT_RANK_TOLERANCE):
    """
    Closed-form (optionally ridge-regularized) least-squares identification.

    Args:
        reg (RegressionMatrices): Stacked snapshot pairs
        epsilon (float): Ridge weight, 0 for plain least squares
        rank_tolerance (float): Relative floor used for the B_bar rank diagnostic

    Returns:
        FitReport: Fitted model; ``final_objective`` is the residual sum of squares

    Raises:
        IllConditionedError: The Gram matrix is singular and epsilon is 0
    """
    _check_regression(reg)
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")

    condition = gram_condition(reg.Z, epsilon)
    logger.debug(f"Gram matrix condition number: {condition:.3e} (epsilon={epsilon:g})")
    if epsilon == 0 and condition > GRAM_CONDITION_LIMIT:
        logger.error(f"Ill-conditioned identification (cond={condition:.3e})")
        raise IllConditionedError(
            f"Gram matrix of Z is numerically singular (condition {condition:.3e}); "
            f"excite every power channel or use a ridge weight epsilon > 0",
            condition_number=condition,
        )

    W = _ridge_solve(reg.Z, reg.Uout, epsilon)
    model = LinearThermalModel.from_W(W, reg.dt, reg.temp_channels, reg.power_channels)
    rank = check_rank(model, rank_tolerance)
    objective = residual_series(model, reg).sum_of_squares
    logger.info(f"Least-squares fit on {reg.columns} transitions: objective={objective:.6e}, "
                f"rank(B_bar)={rank.rank}/{model.n}")
    return FitReport(
        model=model,
        final_objective=objective,
        iterations_used=0,
        singular_values_B=rank.singular_values,
        epsilon=float(epsilon),
        rank_ok=rank.full_column_rank,
        condition_number=condition,
    )


def fit_constrained(reg, constraints=None, options=None):
    """
    Projected-gradient identification under entry-wise constraints.

    Starts from the projected closed-form solution and takes gradient steps of
    initial length 1/L (L = 2 (sigma_max(Z)^2 + eps)), halving the step until
    the objective decreases. Every iterate is projected, so the returned model
    satisfies the sign and equality constraints exactly.

    Args:
        reg (RegressionMatrices): Stacked snapshot pairs
        constraints (ConstraintSpec, optional): Constraint set
        options (IdentOptions, optional): Ridge weight and stopping rules

    Returns:
        FitReport: ``converged`` is False when max_iterations ran out
    """
    _check_regression(reg)
    constraints = constraints or ConstraintSpec()
    options = options or IdentOptions()
    m, n, eps = reg.m, reg.n, options.epsilon
    bounds = constraints.bounds(m, n)

    gram = reg.Z @ reg.Z.T + eps * np.eye(m + n)
    cross = reg.Uout @ reg.Z.T
    lipschitz = 2.0 * float(np.linalg.norm(gram, 2))
    if lipschitz == 0:
        raise DataError("regression matrix Z is identically zero")

    # f(W) = f(W*) + tr(D G D^T), D = W - W*, avoids cancellation near the optimum
    W_star = _ridge_solve(reg.Z, reg.Uout, eps)
    f_star = _objective(W_star, reg, eps)

    def objective(W):
        D = W - W_star
        return f_star + max(float(np.sum((D @ gram) * D)), 0.0)

    W = constraints.project(W_star, bounds)
    f = objective(W)
    history = [f]
    converged = False
    iterations = 0

    for iterations in range(1, options.max_iterations + 1):
        grad = 2.0 * (W @ gram - cross)
        step = 1.0 / lipschitz
        accepted = False
        for _ in range(60):
            W_new = constraints.project(W - step * grad, bounds)
            D = W_new - W
            f_new = objective(W_new)
            model_bound = f + float(np.sum(grad * D)) + float(np.sum(D * D)) / (2.0 * step)
            if f_new <= f and f_new <= model_bound + 1e-12 * max(abs(f), 1.0):
                accepted = True
                break
            step *= 0.5

        if not accepted:
            # no descent even for a vanishing step: numerically stationary
            converged = True
            break

        step_norm = float(np.linalg.norm(D))
        decrease = f - f_new
        W, f = W_new, f_new
        history.append(f)
        if iterations % 500 == 0:
            logger.debug(f"Iteration {iterations}: objective={f:.6e}, step={step_norm:.3e}")
        if step_norm <= options.step_tolerance * (1.0 + float(np.linalg.norm(W))):
            converged = True
            break
        if decrease <= options.objective_tolerance * (1.0 + abs(f)):
            converged = True
            break

    if not converged:
        logger.warning(f"Constrained fit did not converge within {options.max_iterations} iterations")

    model = LinearThermalModel.from_W(W, reg.dt, reg.temp_channels, reg.power_channels)
    rank = check_rank(model, constraints.rank_tolerance)
    rank_ok = rank.full_column_rank
    if constraints.require_full_column_rank_B and not rank_ok:
        logger.warning(f"B_bar has rank {rank.rank} < {model.n}; the power estimator is not invertible")

    violation = constraints.violation(W)
    objective_value = residual_series(model, reg).sum_of_squares
    logger.info(f"Constrained fit: {iterations} iterations, objective={objective_value:.6e}, "
                f"violation={violation:g}, converged={converged}")
    return FitReport(
        model=model,
        final_objective=objective_value,
        iterations_used=iterations,
        singular_values_B=rank.singular_values,
        constraint_violation=violation,
        epsilon=float(eps),
        converged=converged,
        rank_ok=rank_ok,
        condition_number=gram_condition(reg.Z, eps),
        objective_history=tuple(history),
    )


def check_rank(model, tol=DEFAULT_RANK_TOLERANCE):
    """
    Numerical rank of B_bar.

    The power estimator needs (B_bar^T B_bar) invertible, i.e. full column
    rank n. A rank of n+m, as sometimes written for this condition, cannot be
    reached by an m x n matrix, so the report is made against n.

    Args:
        model (LinearThermalModel): Model to inspect
        tol (float): Singular values below ``tol * sigma_max`` count as zero

    Returns:
        RankReport: Rank and singular values of B_bar
    """
    s = np.linalg.svd(model.B_bar, compute_uv=False)
    largest = float(s[0]) if s.size else 0.0
    rank = int(np.sum(s >= tol * largest)) if largest > 0 else 0
    return RankReport(rank=rank, singular_values=tuple(float(v) for v in s), n=model.n)


def residual_series(model, reg):
    """
    One-step residuals e = Uout - W Z with their per-step L2 norms.

    Raises:
        ValueError: If the model and the regression matrices disagree in size
    """
    if reg.Uout.shape[0] != model.m or reg.Z.shape[0] != model.m + model.n:
        raise ValueError(
            f"model is {model.m}x{model.m + model.n} but regression has Z {reg.Z.shape}, Uout {reg.Uout.shape}"
        )
    E = reg.Uout - model.W @ reg.Z
    return ResidualSeries(E=E, norms=np.linalg.norm(E, axis=0))


def relative_error(model, reference):
    """Relative Frobenius error of [A_bar B_bar] against a reference model."""
    if model.W.shape != reference.W.shape:
        raise ValueError(f"model shapes differ: {model.W.shape} vs {reference.W.shape}")
    return float(np.linalg.norm(model.W - reference.W) / np.linalg.norm(reference.W))


def sweep_epsilon(reg, epsilons: Sequence[float]):
    """Closed-form fits along a ridge path, one report per epsilon."""
    return [fit_least_squares(reg, eps) for eps in epsilons]


def select_epsilon(train, validation, epsilons: Sequence[float]):
    """
    Pick the ridge weight with the smallest one-step validation residual.

    Weights whose fit is ill-conditioned are skipped.

    Returns:
        tuple[float, FitReport]: Chosen epsilon and its fit
    """
    best = None
    for eps in epsilons:
        try:
            report = fit_least_squares(train, eps)
        except IllConditionedError:
            logger.debug(f"Skipping epsilon={eps:g}: ill-conditioned")
            continue
        score = residual_series(report.model, validation).sum_of_squares
        logger.debug(f"epsilon={eps:g}: validation residual {score:.6e}")
        if best is None or score < best[0]:
            best = (score, eps, report)
    if best is None:
        raise IllConditionedError("every candidate epsilon gave an ill-conditioned fit")
    logger.info(f"Selected epsilon={best[1]:g} (validation residual {best[0]:.6e})")
    return best[1], best[2]


def save_model(model, path):
    """Write a model as a key-value document with 17 significant digits."""
    write_key_values(path, {
        "dt": format_float(model.dt),
        "temp_channels": ",".join(model.temp_channels),
        "power_channels": ",".join(model.power_channels),
        "A_bar": format_floats(model.A_bar),
        "B_bar": format_floats(model.B_bar),
    }, header="u(k+1) = A_bar u(k) + B_bar x(k); matrices row-major")
    logger.info(f"Saved model ({model.m} temperatures, {model.n} powers) to {path}")


def load_model(path):
    """
    Read a model written by ``save_model``.

    Raises:
        DataError: The file does not exist
        ConfigError: A field is missing or malformed
    """
    values = read_key_values(path, error_cls=DataError)
    temp_channels = parse_name_list(values, "temp_channels")
    power_channels = parse_name_list(values, "power_channels")
    m, n = len(temp_channels), len(power_channels)
    A = parse_float_list(values, "A_bar", expected=m * m).reshape(m, m)
    B = parse_float_list(values, "B_bar", expected=m * n).reshape(m, n)
    try:
        return LinearThermalModel(A, B, parse_float(values, "dt"), temp_channels, power_channels)
    except ValueError as exc:
        raise ConfigError(f"invalid model in {path}: {exc}") from None


_ENTRY_KEY = re.compile(r"^(sign|fix)\.([AB])(?:\[(\d+),(\d+)\])?$")
_SIGNS = {">=0": 1, "nonneg": 1, "<=0": -1, "nonpos": -1}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def load_constraints(path, m, n, rank_tolerance=DEFAULT_RANK_TOLERANCE):
    """
    Read a constraint file.

    Recognised keys::

        sign.B=>=0            every entry of B_bar nonnegative
        sign.A[0,1]=<=0       one entry of A_bar nonpositive
        fix.A[0,0]=0.9        one entry pinned to a value
        rank.full_column_B=true
        rank.tolerance=1e-10

    Args:
        path (str): Constraint file
        m (int): Number of temperature channels
        n (int): Number of power channels
        rank_tolerance (float): Used when the file sets no rank.tolerance

    Returns:
        ConstraintSpec: Parsed constraints

    Raises:
        ConfigError: Unknown key or bad value (the key is named)
    """
    values = read_key_values(path)
    signs, fixes = set(), set()
    require_rank, tolerance = False, rank_tolerance

    for key, raw in values.items():
        raw = raw.strip()
        if key == "rank.full_column_B":
            if raw.lower() not in _TRUE | _FALSE:
                raise ConfigError(f"key '{key}' expects true/false, got {raw!r}", key=key)
            require_rank = raw.lower() in _TRUE
            continue
        if key == "rank.tolerance":
            tolerance = parse_float(values, key)
            continue

        match = _ENTRY_KEY.match(key)
        if not match:
            raise ConfigError(f"unknown constraint key '{key}'", key=key)
        kind, matrix, row, col = match.groups()
        width = m if matrix == "A" else n
        entries = [(int(row), int(col))] if row is not None else \
            [(r, c) for r in range(m) for c in range(width)]

        if kind == "sign":
            if raw not in _SIGNS:
                raise ConfigError(f"key '{key}' expects >=0 or <=0, got {raw!r}", key=key)
            signs.update(SignConstraint(matrix, r, c, _SIGNS[raw]) for r, c in entries)
        else:
            value = parse_float(values, key)
            fixes.update(EqualityConstraint(matrix, r, c, value) for r, c in entries)

    constraints = ConstraintSpec(frozenset(signs), frozenset(fixes), require_rank, tolerance)
    constraints.bounds(m, n)  # reject out-of-range entries now
    logger.info(f"Loaded {len(signs)} sign and {len(fixes)} equality constraints from {path}")
    return constraints
