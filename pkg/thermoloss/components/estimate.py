"""
Open-loop evaluation of an identified model.

Two directions are covered: temperatures simulated from measured powers, and
power losses recovered from measured temperatures with the left inverse of
B_bar. The power estimate lags the temperature input by one sample.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from thermoloss.components.dataset import trailing_mean, window_samples
from thermoloss.components.identify import DEFAULT_RANK_TOLERANCE, check_rank
from thermoloss.utils.errors import DataError, EstimatorNotInvertibleError, SimulationOverflowError
from thermoloss.utils.keyvalue import format_float, format_floats, write_key_values

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimationReport:
    """Estimated sequence, its reference and the RMSE statistics across channels."""

    estimated: np.ndarray
    reference: Optional[np.ndarray]
    per_channel_rmse: np.ndarray
    mu_rmse: float
    sigma_rmse: float
    band_upper: float
    delay_steps: int = 0
    channels: Tuple[str, ...] = ()

    @property
    def errors(self):
        return None if self.reference is None else self.estimated - self.reference

    @property
    def band_coverage(self):
        """Share of channels whose RMSE lies at or below mu + 2 sigma."""
        return float(np.mean(self.per_channel_rmse <= self.band_upper))


@dataclass(frozen=True)
class EstimatorGain:
    """Pre-computed left inverse G = (B^T B)^-1 B^T and the transition A_bar."""

    G: np.ndarray
    A_bar: np.ndarray
    power_channels: Tuple[str, ...] = ()

    @property
    def n(self):
        return self.G.shape[0]

    @property
    def m(self):
        return self.G.shape[1]


@dataclass(frozen=True)
class RollingRmse:
    """Trailing-window RMSE per channel with its mean and mu + 2 sigma band over time."""

    time: np.ndarray
    per_channel: np.ndarray
    mu: np.ndarray
    band: np.ndarray


@dataclass(frozen=True)
class OpenLoopEvaluation:
    """Both open-loop evaluations over a test split, overall and per segment."""

    temperature: EstimationReport
    power: EstimationReport
    per_segment: Dict[str, Tuple[EstimationReport, EstimationReport]] = field(default_factory=dict)
    time_temperature: np.ndarray = field(default=None, repr=False)
    time_power: np.ndarray = field(default=None, repr=False)


def simulate_temperature(model, X, u0):
    """
    Run u(k+1) = A_bar u(k) + B_bar x(k) from u(0) = u0.

    Args:
        model (LinearThermalModel): Temperature-power dynamics
        X (numpy.ndarray): Power sequence, n x K
        u0 (numpy.ndarray): Initial temperatures, length m

    Returns:
        numpy.ndarray: Temperature sequence, m x K

    Raises:
        ValueError: If the shapes disagree with the model
        SimulationOverflowError: If the trajectory leaves the finite range
    """
    X = np.asarray(X, dtype=float)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != model.n:
        raise ValueError(f"X must be {model.n} x K, got shape {X.shape}")
    if u0.shape[0] != model.m:
        raise ValueError(f"u0 must have {model.m} entries, got {u0.shape[0]}")
    K = X.shape[1]
    if K < 1:
        raise ValueError("X must hold at least one sample")

    A, B = model.A_bar, model.B_bar
    drive = B @ X
    U = np.empty((model.m, K))
    U[:, 0] = u0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K - 1):
            U[:, k + 1] = A @ U[:, k] + drive[:, k]

    finite = np.all(np.isfinite(U), axis=0)
    if not finite.all():
        step = int(np.argmin(finite))
        logger.error(f"Temperature simulation overflowed at step {step}")
        raise SimulationOverflowError(f"simulated temperature is not finite at step {step} "
                                      f"(unstable model?)", step=step)
    return U


def build_estimator(model, tol=DEFAULT_RANK_TOLERANCE):
    """
    Pre-compute the power estimator gain.

    Raises:
        EstimatorNotInvertibleError: If B_bar lacks full column rank
    """
    rank = check_rank(model, tol)
    if not rank.full_column_rank:
        logger.error(f"B_bar rank {rank.rank} < {model.n}; no left inverse")
        raise EstimatorNotInvertibleError(
            f"B_bar has rank {rank.rank}, below its {model.n} columns; enforce the full-column-rank "
            f"constraint during identification or add temperature measurement points"
        )
    G = np.linalg.pinv(model.B_bar)
    logger.debug(f"Estimator gain built, ||G B - I|| = {np.linalg.norm(G @ model.B_bar - np.eye(model.n)):.2e}")
    return EstimatorGain(G=G, A_bar=model.A_bar.copy(), power_channels=model.power_channels)


def estimate_power(gain, U):
    """
    Power losses from temperatures: x(k-1) = G (u(k) - A_bar u(k-1)).

    Column j of the result estimates the power applied at input sample j, so a
    K-sample temperature record yields K-1 estimates.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != gain.m:
        raise ValueError(f"U must be {gain.m} x K, got shape {U.shape}")
    if U.shape[1] < 2:
        raise ValueError("power estimation needs at least 2 temperature samples")
    return gain.G @ (U[:, 1:] - gain.A_bar @ U[:, :-1])


def rmse_stats(estimated, reference, channels=(), delay_steps=0):
    """
    Per-channel RMSE and its spread across channels.

    mu is the mean of the per-channel RMSEs, sigma their sample standard
    deviation (0 for a single channel), and the band is mu + 2 sigma.

    Raises:
        ValueError: If the shapes differ
    """
    estimated = np.atleast_2d(np.asarray(estimated, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if estimated.shape != reference.shape:
        raise ValueError(f"estimated {estimated.shape} and reference {reference.shape} differ in shape")
    if estimated.shape[1] == 0:
        raise ValueError("cannot compute RMSE over zero samples")

    per_channel = np.sqrt(np.mean((estimated - reference) ** 2, axis=1))
    mu = float(np.mean(per_channel))
    sigma = float(np.std(per_channel, ddof=1)) if per_channel.size > 1 else 0.0
    return EstimationReport(
        estimated=estimated,
        reference=reference,
        per_channel_rmse=per_channel,
        mu_rmse=mu,
        sigma_rmse=sigma,
        band_upper=mu + 2.0 * sigma,
        delay_steps=delay_steps,
        channels=tuple(channels),
    )


def rolling_rmse(estimated, reference, window_seconds, dt):
    """
    Trailing-window RMSE per channel, then mu and mu + 2 sigma at every step.

    Returns:
        RollingRmse: Plot-ready series
    """
    estimated = np.atleast_2d(np.asarray(estimated, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if estimated.shape != reference.shape:
        raise ValueError(f"estimated {estimated.shape} and reference {reference.shape} differ in shape")
    window = window_samples(window_seconds, dt)

    per_channel = np.sqrt(np.maximum(trailing_mean((estimated - reference) ** 2, window), 0.0))
    mu = per_channel.mean(axis=0)
    sigma = per_channel.std(axis=0, ddof=1) if per_channel.shape[0] > 1 else np.zeros_like(mu)
    time = np.arange(estimated.shape[1]) * dt
    return RollingRmse(time=time, per_channel=per_channel, mu=mu, band=mu + 2.0 * sigma)


def compensate_delay(estimated, reference, steps):
    """
    Align an estimate that lags its reference by ``steps`` samples.

    Drops the first ``steps`` estimated columns and the last ``steps``
    reference columns.
    """
    if steps < 0:
        raise ValueError(f"delay must be nonnegative, got {steps}")
    if steps == 0:
        return estimated, reference
    if steps >= estimated.shape[1]:
        raise ValueError(f"delay of {steps} samples consumes the whole {estimated.shape[1]}-sample record")
    return estimated[:, steps:], reference[:, :-steps]


def evaluate_open_loop(model, test, gain=None, compensate_steps=0, reference=None):
    """
    Simulate temperatures from powers and estimate powers from temperatures.

    Each segment of ``test`` is evaluated on its own, starting from its first
    temperature sample, and the overall statistics use the concatenation.
    Estimated powers are scored against ``reference.X`` when an unfiltered
    copy of the split is given, otherwise against ``test.X``.

    Args:
        model (LinearThermalModel): Identified dynamics
        test (TimeSeriesDataset): Evaluation split
        gain (EstimatorGain, optional): Pre-computed estimator
        compensate_steps (int): Filter delay removed from the power estimate
        reference (TimeSeriesDataset, optional): Same split before smoothing

    Returns:
        OpenLoopEvaluation: Temperature and power reports

    Raises:
        DataError: The dataset channels differ from the model's
    """
    if test.power_channels != model.power_channels or test.temp_channels != model.temp_channels:
        logger.error(f"Model channels {model.temp_channels + model.power_channels} do not match the data")
        raise DataError(f"dataset channels {test.temp_channels + test.power_channels} do not match "
                        f"the model channels {model.temp_channels + model.power_channels}")
    reference = test if reference is None else reference
    if reference.X.shape != test.X.shape or reference.effective_segments() != test.effective_segments():
        raise ValueError("reference must have the layout of the test split")
    gain = gain or build_estimator(model)

    temp_est, temp_ref, power_est, power_ref = [], [], [], []
    t_temp, t_power = [], []
    per_segment = {}
    for seg in test.effective_segments():
        X = test.X[:, seg.start:seg.end]
        U = test.U[:, seg.start:seg.end]
        u_hat = simulate_temperature(model, X, U[:, 0])
        x_raw = reference.X[:, seg.start:seg.end]
        x_hat, x_ref = compensate_delay(estimate_power(gain, U), x_raw[:, :-1], compensate_steps)

        per_segment[seg.label] = (
            rmse_stats(u_hat, U, model.temp_channels),
            rmse_stats(x_hat, x_ref, model.power_channels, delay_steps=1),
        )
        temp_est.append(u_hat)
        temp_ref.append(U)
        power_est.append(x_hat)
        power_ref.append(x_ref)
        t_temp.append(np.arange(seg.start, seg.end) * test.dt)
        t_power.append(np.arange(seg.start, seg.start + x_ref.shape[1]) * test.dt)

    temperature = rmse_stats(np.hstack(temp_est), np.hstack(temp_ref), model.temp_channels)
    power = rmse_stats(np.hstack(power_est), np.hstack(power_ref), model.power_channels, delay_steps=1)
    logger.info(f"Temperature simulation: mu_RMSE={temperature.mu_rmse:.4g} K, band={temperature.band_upper:.4g} K")
    logger.info(f"Power estimation: mu_RMSE={power.mu_rmse:.4g} W, band={power.band_upper:.4g} W")
    return OpenLoopEvaluation(
        temperature=temperature,
        power=power,
        per_segment=per_segment,
        time_temperature=np.concatenate(t_temp),
        time_power=np.concatenate(t_power),
    )


def save_report(report, path, time):
    """
    Write estimates as CSV: time, then per channel the estimate, the reference and the error.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    names = report.channels or tuple(f"ch{i}" for i in range(report.estimated.shape[0]))
    columns = {"time": np.asarray(time, dtype=float)}
    for i, name in enumerate(names):
        columns[f"est_{name}"] = report.estimated[i]
    if report.reference is not None:
        for i, name in enumerate(names):
            columns[f"ref_{name}"] = report.reference[i]
        for i, name in enumerate(names):
            columns[f"err_{name}"] = report.errors[i]
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {report.estimated.shape[1]} estimated samples to {path}")


def summary_items(report, prefix=""):
    """Key-value summary of a report (mu, sigma, band, per-channel RMSE)."""
    return {
        f"{prefix}mu_rmse": format_float(report.mu_rmse),
        f"{prefix}sigma_rmse": format_float(report.sigma_rmse),
        f"{prefix}band_upper": format_float(report.band_upper),
        f"{prefix}delay_steps": str(report.delay_steps),
        f"{prefix}channels": ",".join(report.channels),
        f"{prefix}per_channel_rmse": format_floats(report.per_channel_rmse),
    }


def save_summary(path, **reports):
    """Write the summaries of several reports, keyed ``<name>.<field>``."""
    items = {}
    for name, report in reports.items():
        items.update(summary_items(report, prefix=f"{name}."))
    write_key_values(path, items, header="RMSE summary (band = mu_rmse + 2 sigma_rmse)")
    logger.info(f"Wrote summary to {path}")
