"""
Pipeline commands behind the command line: synth, identify, estimate, report.

Each command takes a PipelineConfig, reads and writes files under the
configured paths, and raises ThermolossError subclasses on failure.
"""
import logging
import math
import os

import numpy as np
import pandas as pd

from thermoloss.components.dataset import (
    baseline_ambient,
    build_regression,
    filter_delay_steps,
    load_csv,
    moving_average,
    resample_hold,
    save_dataset,
    split_per_segment,
)
from thermoloss.components.estimate import (
    evaluate_open_loop,
    rolling_rmse,
    save_report,
    save_summary,
)
from thermoloss.components.identify import (
    IdentOptions,
    fit_constrained,
    fit_least_squares,
    load_constraints,
    load_model,
    relative_error,
    save_model,
)
from thermoloss.components.synth import (
    default_network,
    default_schedule,
    discretize,
    generate_excitation,
    load_network,
    save_network,
    simulate_with_noise,
)
from thermoloss.utils.errors import DataError
from thermoloss.utils.keyvalue import format_float, format_floats, write_key_values

logger = logging.getLogger(__name__)


def _out(config, name):
    os.makedirs(config.paths.out, exist_ok=True)
    return os.path.join(config.paths.out, name)


def load_dataset(config):
    """Read the configured dataset, with its segments when the file exists."""
    segments_path = config.paths.segments_path
    if not os.path.isfile(segments_path):
        logger.info(f"No segment file at {segments_path}; using the whole series")
        segments_path = None
    return load_csv(config.paths.data_path, segments_path=segments_path)


def preprocess(config, dataset, smooth=True):
    """Ambient baselining, zero-order-hold oversampling and the optional trailing average."""
    pre = config.preprocessing
    dataset = baseline_ambient(dataset, pre.ambient)
    dataset = resample_hold(dataset, pre.oversample_factor)
    if smooth:
        dataset = moving_average(dataset, pre.window_seconds)
    logger.info(f"Preprocessed dataset: K={dataset.K}, dt={dataset.dt:g} s")
    return dataset


def prepare_splits(config, smooth=True):
    """Load, preprocess and split the dataset into (train, test)."""
    dataset = preprocess(config, load_dataset(config), smooth)
    return split_per_segment(dataset, config.preprocessing.train_fraction)


def cmd_synth(config):
    """
    Generate a calibration-style dataset from the oracle network.

    Writes the dataset and segment CSVs, the exactly discretized ground-truth
    model and the network definition.

    Returns:
        dict: Paths of the written files
    """
    syn = config.synth
    network = load_network(config.paths.network) if config.paths.network else default_network()
    model = discretize(network, syn.dt)
    schedule = default_schedule(network.n, syn.step_seconds, syn.rest_seconds, syn.cycles)
    excitation = generate_excitation(schedule, syn.dt)
    dataset = simulate_with_noise(model, excitation.X, np.zeros(network.m), syn.noise_std,
                                  seed=syn.seed, segments=excitation.segments)

    paths = {
        "data": config.paths.data_path,
        "segments": config.paths.segments_path,
        "truth": config.paths.truth_path,
        "network": _out(config, "network.txt"),
    }
    save_dataset(dataset, paths["data"], paths["segments"])
    save_model(model, paths["truth"])
    save_network(network, paths["network"])
    logger.info(f"Synthesized {dataset.K} samples over {len(dataset.segments)} calibration steps "
                f"(seed={syn.seed}, noise={syn.noise_std:g} K)")
    return paths


def cmd_identify(config):
    """
    Identify (A_bar, B_bar) on the train split and save the model.

    Uses the closed form unless a constraint file is configured. When a
    ground-truth model with the same sample period is available, its relative
    recovery error is added to the fit report.

    Returns:
        FitReport: The fit
    """
    ident = config.identification
    train, _ = prepare_splits(config)
    reg = build_regression(train)

    if config.paths.constraints:
        constraints = load_constraints(config.paths.constraints, reg.m, reg.n, ident.rank_tolerance)
        options = IdentOptions(ident.epsilon, ident.max_iterations, ident.step_tolerance,
                               ident.objective_tolerance)
        report = fit_constrained(reg, constraints, options)
    else:
        report = fit_least_squares(reg, ident.epsilon, ident.rank_tolerance)

    save_model(report.model, config.paths.model_path)

    items = {
        "method": "constrained" if config.paths.constraints else "least_squares",
        "epsilon": format_float(report.epsilon),
        "transitions": str(reg.columns),
        "final_objective": format_float(report.final_objective),
        "iterations_used": str(report.iterations_used),
        "converged": str(report.converged).lower(),
        "constraint_violation": format_float(report.constraint_violation),
        "condition_number": format_float(report.condition_number),
        "singular_values_B": format_floats(report.singular_values_B),
        "full_column_rank_B": str(report.rank_ok).lower(),
    }
    error = _recovery_error(config, report.model)
    if error is not None:
        items["relative_error"] = format_float(error)
    write_key_values(_out(config, "fit_report.txt"), items, header="Identification report")
    return report


def _recovery_error(config, model):
    path = config.paths.truth_path
    if not os.path.isfile(path):
        return None
    truth = load_model(path)
    if not math.isclose(truth.dt, model.dt, rel_tol=1e-9) or truth.W.shape != model.W.shape:
        logger.info(f"Ground truth at dt={truth.dt:g} s is not comparable with the model at dt={model.dt:g} s")
        return None
    error = relative_error(model, truth)
    logger.info(f"Relative recovery error against {path}: {error:.3e}")
    return error


def _evaluate(config):
    model_path = config.paths.model_path
    if not os.path.isfile(model_path):
        logger.error(f"Model file not found: {model_path}")
        raise DataError(f"model file not found: {model_path}; run 'identify' first")
    model = load_model(model_path)
    # powers are scored unsmoothed; only the estimator input goes through the filter
    raw = preprocess(config, load_dataset(config), smooth=False)
    fraction = config.preprocessing.train_fraction
    _, test = split_per_segment(moving_average(raw, config.preprocessing.window_seconds), fraction)
    _, reference = split_per_segment(raw, fraction)
    if not math.isclose(test.dt, model.dt, rel_tol=1e-9):
        raise DataError(f"model sample period {model.dt:g} s differs from the data's {test.dt:g} s")

    steps = 0
    if config.evaluation.compensate_delay:
        steps = filter_delay_steps(config.preprocessing.window_seconds, test.dt)
        logger.info(f"Compensating a filter delay of {steps} samples")
    return test, evaluate_open_loop(model, test, compensate_steps=steps, reference=reference)


def cmd_estimate(config):
    """
    Run both open-loop evaluations on the test split.

    Writes per-sample estimates for temperatures and powers and a summary
    with mu_RMSE, sigma_RMSE and the mu + 2 sigma band, overall and per
    calibration step.

    Returns:
        OpenLoopEvaluation: The evaluation
    """
    _, evaluation = _evaluate(config)
    save_report(evaluation.temperature, _out(config, "temperature_estimates.csv"), evaluation.time_temperature)
    save_report(evaluation.power, _out(config, "power_estimates.csv"), evaluation.time_power)

    reports = {"temperature": evaluation.temperature, "power": evaluation.power}
    for label, (temperature, power) in evaluation.per_segment.items():
        reports[f"temperature.{label}"] = temperature
        reports[f"power.{label}"] = power
    save_summary(_out(config, "summary.txt"), **reports)
    return evaluation


def cmd_report(config):
    """
    Emit plot-ready CSVs: trajectories and rolling RMSE with its band.

    The rolling statistics are computed inside each calibration step of the
    test split.

    Returns:
        dict: Paths of the written files
    """
    test, evaluation = _evaluate(config)
    window = config.evaluation.rolling_window_seconds
    paths = {
        "temperature_trajectories": _out(config, "report_temperature_trajectories.csv"),
        "power_trajectories": _out(config, "report_power_trajectories.csv"),
        "temperature_rolling": _out(config, "report_temperature_rolling_rmse.csv"),
        "power_rolling": _out(config, "report_power_rolling_rmse.csv"),
    }
    save_report(evaluation.temperature, paths["temperature_trajectories"], evaluation.time_temperature)
    save_report(evaluation.power, paths["power_trajectories"], evaluation.time_power)

    segments = {seg.label: seg for seg in test.effective_segments()}
    for kind, index in (("temperature", 0), ("power", 1)):
        frames = []
        for label, reports in evaluation.per_segment.items():
            report = reports[index]
            rolling = rolling_rmse(report.estimated, report.reference, window, test.dt)
            frame = pd.DataFrame({
                "segment": label,
                "time": (segments[label].start * test.dt) + rolling.time,
                "mu_rmse": rolling.mu,
                "band_upper": rolling.band,
            })
            for name, series in zip(report.channels, rolling.per_channel):
                frame[f"rmse_{name}"] = series
            frames.append(frame)
        pd.concat(frames, ignore_index=True).to_csv(paths[f"{kind}_rolling"], index=False, float_format="%.17g")
        logger.info(f"Wrote rolling {kind} RMSE to {paths[f'{kind}_rolling']}")
    return paths
