"""
Ground-truth thermal RC networks and calibration-style excitation.

A network is C du/dt = -G u + M x: node capacitances C (J/K), a symmetric
conductance matrix G (W/K) with ambient leaks on its diagonal, and a
nonnegative injection map M from power sources to nodes. Its exact
zero-order-hold discretization lies inside the identified model class, which
makes it the oracle for identification tests.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from thermoloss.components.dataset import Segment, TimeSeriesDataset
from thermoloss.components.estimate import simulate_temperature
from thermoloss.components.identify import LinearThermalModel
from thermoloss.utils.errors import ConfigError, DiscretizationError
from thermoloss.utils.keyvalue import (
    format_float,
    format_floats,
    parse_float_list,
    parse_name_list,
    read_key_values,
    write_key_values,
)

logger = logging.getLogger(__name__)

# Nominal watts per calibration step of a small synchronous buck converter:
# 1 A through a transistor held in saturation, 25 A through the power-loop
# tracks, 300 mA of gate-driver supply current, 15 A through the inductor path.
CALIBRATION_STEPS = (
    ("transistors", 2.0),
    ("power_loop_tracks", 1.25),
    ("driver", 0.6),
    ("inductor_output_tracks", 1.1),
)


@dataclass(frozen=True)
class ThermalNetwork:
    """Continuous-time RC network used as identification oracle."""

    C: np.ndarray
    G: np.ndarray
    M: np.ndarray
    temp_channels: Tuple[str, ...] = ()
    power_channels: Tuple[str, ...] = ()

    def __post_init__(self):
        C = np.array(self.C, dtype=float, ndmin=1)
        if C.ndim == 1:
            C = np.diag(C)
        G = np.array(self.G, dtype=float, ndmin=2)
        M = np.array(self.M, dtype=float, ndmin=2)
        m, n = C.shape[0], M.shape[1]
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "temp_channels",
                           tuple(self.temp_channels) or tuple(f"T_node{i}" for i in range(m)))
        object.__setattr__(self, "power_channels",
                           tuple(self.power_channels) or tuple(f"P_src{j}" for j in range(n)))

        if C.shape != (m, m) or np.any(C - np.diag(np.diag(C))):
            raise ValueError("C must be a diagonal matrix")
        if np.any(np.diag(C) <= 0):
            raise ValueError("thermal capacitances must be positive")
        if G.shape != (m, m):
            raise ValueError(f"G has shape {G.shape}, expected ({m}, {m})")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
            raise ValueError("G must be symmetric")
        if np.any(G - np.diag(np.diag(G)) > 0):
            raise ValueError("off-diagonal conductances must be nonpositive")
        if np.any(G.sum(axis=1) < -1e-12 * max(1.0, np.abs(G).max())):
            raise ValueError("G row sums (ambient leaks) must be nonnegative")
        if M.shape[0] != m or np.any(M < 0):
            raise ValueError("M must have one nonnegative row per node")
        if len(self.temp_channels) != m or len(self.power_channels) != n:
            raise ValueError("channel names do not match the network size")
        if not self.is_hurwitz:
            logger.error("Network has a node without a path to ambient")
            raise DiscretizationError("continuous dynamics are singular or unstable: every node "
                                      "needs a conductive path to ambient")

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.M.shape[1]

    @property
    def A_c(self):
        return -np.linalg.solve(self.C, self.G)

    @property
    def is_hurwitz(self):
        return bool(np.all(np.linalg.eigvals(self.A_c).real < 0))

    @property
    def time_constants(self):
        """Time constants of the network modes, slowest first."""
        rates = -np.linalg.eigvals(self.A_c).real
        return np.sort(1.0 / rates[rates > 0])[::-1]


@dataclass(frozen=True)
class ExcitationStep:
    """
    One calibration step.

    Each active channel is driven in turn at ``amplitude`` for ``duration``
    seconds, followed by ``rest`` seconds at zero power, so every source is
    excited independently. The whole pulse train is repeated ``cycles`` times,
    which keeps excitation in the trailing part of the step as well.
    """

    label: str
    channels: Tuple[int, ...]
    amplitude: float
    duration: float
    rest: float
    cycles: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.duration <= 0 or self.rest <= 0:
            raise ValueError(f"step '{self.label}': durations must be positive")
        if int(self.cycles) != self.cycles or self.cycles < 1:
            raise ValueError(f"step '{self.label}': cycles must be a positive integer, got {self.cycles}")
        if self.amplitude < 0:
            raise ValueError(f"step '{self.label}': amplitude must be nonnegative")


@dataclass(frozen=True)
class ExcitationSchedule:
    steps: Tuple[ExcitationStep, ...]
    n_channels: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for step in self.steps:
            for channel in step.channels:
                if not 0 <= channel < self.n_channels:
                    raise ValueError(f"step '{step.label}' drives channel {channel} of {self.n_channels}")


@dataclass(frozen=True)
class Excitation:
    """Power profile with the segment of every calibration step."""

    X: np.ndarray
    segments: Tuple[Segment, ...]
    dt: float


def discretize(net, dt):
    """
    Exact zero-order-hold discretization of a thermal network.

    A_bar = exp(A_c dt) and B_bar = A_c^-1 (A_bar - I) C^-1 M, both read off
    the exponential of the augmented matrix [[A_c, C^-1 M], [0, 0]] dt
    (scipy's scaling-and-squaring expm). A_c is invertible because networks
    are checked to be Hurwitz when they are built.

    Args:
        net (ThermalNetwork): Continuous-time network
        dt (float): Sample period in seconds

    Returns:
        LinearThermalModel: Discrete model with the network's channel names
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A_c = net.A_c

    m, n = net.m, net.n
    input_map = np.linalg.solve(net.C, net.M)
    block = np.zeros((m + n, m + n))
    block[:m, :m] = A_c
    block[:m, m:] = input_map
    phi = scipy.linalg.expm(block * dt)
    model = LinearThermalModel(phi[:m, :m], phi[:m, m:], dt, net.temp_channels, net.power_channels)

    radius = float(np.max(np.abs(np.linalg.eigvals(model.A_bar))))
    logger.debug(f"Discretized {m}-node network at dt={dt:g} s, spectral radius {radius:.6f}")
    return model


def steady_state(model, x):
    """Equilibrium temperatures (I - A_bar)^-1 B_bar x under constant power x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.linalg.solve(np.eye(model.m) - model.A_bar, model.B_bar @ x)


def generate_excitation(schedule, dt):
    """
    Build the staircase power profile of a schedule.

    Returns:
        Excitation: n x K powers with one segment per step
    """
    if not schedule.steps:
        raise ValueError("schedule has no steps")
    blocks, segments, start = [], [], 0
    for step in schedule.steps:
        on = max(1, int(round(step.duration / dt)))
        off = max(1, int(round(step.rest / dt)))
        slots = max(1, len(step.channels))
        length = int(step.cycles) * slots * (on + off)
        block = np.zeros((schedule.n_channels, length))
        for cycle in range(int(step.cycles)):
            for i, channel in enumerate(step.channels):
                begin = (cycle * slots + i) * (on + off)
                block[channel, begin:begin + on] = step.amplitude
        blocks.append(block)
        segments.append(Segment(start, start + length, step.label))
        start += length

    X = np.hstack(blocks)
    logger.info(f"Excitation: {len(segments)} steps, {X.shape[1]} samples at dt={dt:g} s")
    return Excitation(X=X, segments=tuple(segments), dt=dt)


def default_schedule(n, step_seconds=300.0, rest_seconds=900.0, cycles=5):
    """
    Four sequential calibration steps covering n power sources.

    With up to four sources each step drives one of them. From five on, the
    first two are the high- and low-side transistors sharing the first step,
    and sources past the fifth are dealt round-robin over the four steps.
    Five cycles put one whole pulse train in the last fifth of every step.
    """
    if n < 1:
        raise ValueError("need at least one power source")
    groups = [[] for _ in CALIBRATION_STEPS]
    layout = [0, 1, 2, 3] if n <= 4 else [0, 0, 1, 2, 3]
    for channel in range(n):
        groups[layout[channel] if channel < len(layout) else channel % len(groups)].append(channel)
    steps = tuple(
        ExcitationStep(label, tuple(channels), amplitude, step_seconds, rest_seconds, cycles)
        for (label, amplitude), channels in zip(CALIBRATION_STEPS, groups) if channels
    )
    return ExcitationSchedule(steps=steps, n_channels=n)


def simulate_with_noise(model, X, u0, noise_std, seed=0, segments: Sequence[Segment] = ()):
    """
    Simulate temperatures and add i.i.d. Gaussian sensor noise to them.

    Args:
        model (LinearThermalModel): Dynamics to simulate
        X (numpy.ndarray): n x K powers
        u0 (numpy.ndarray): Initial temperatures
        noise_std (float): Noise standard deviation in kelvin
        seed (int): Seed of the noise generator
        segments (Sequence[Segment]): Segments attached to the dataset

    Returns:
        TimeSeriesDataset: Noisy temperatures with the exact powers
    """
    if noise_std < 0:
        raise ValueError(f"noise_std must be nonnegative, got {noise_std}")
    U = simulate_temperature(model, X, u0)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        U = U + rng.normal(0.0, noise_std, size=U.shape)
    return TimeSeriesDataset(model.power_channels, model.temp_channels, np.array(X, dtype=float), U,
                             model.dt, tuple(segments))


def default_network():
    """
    Desk-scale converter board: 7 temperature nodes, 5 power sources.

    Nodes: high- and low-side transistors, power-loop tracks, gate driver,
    inductor, board copper and heatsink. The slowest mode is a few minutes.
    """
    temp_channels = ("T_Qh", "T_Ql", "T_loop", "T_driver", "T_inductor", "T_board", "T_heatsink")
    power_channels = ("P_Qh", "P_Ql", "P_loop", "P_driver", "P_inductor")
    capacitance = np.array([2.0, 2.0, 5.0, 1.0, 8.0, 20.0, 40.0])
    couplings = {
        (0, 1): 0.15, (0, 2): 0.3, (1, 2): 0.3, (0, 3): 0.1,
        (2, 5): 0.4, (3, 5): 0.15, (4, 5): 0.25, (0, 6): 0.5,
        (1, 6): 0.5, (5, 6): 0.6,
    }
    leaks = np.array([0.02, 0.02, 0.03, 0.02, 0.05, 0.1, 0.5])
    M = np.zeros((7, 5))
    M[0, 0] = M[1, 1] = M[3, 3] = M[4, 4] = 1.0
    M[2, 2], M[5, 2] = 0.8, 0.2
    return ThermalNetwork(capacitance, conductance_matrix(7, couplings, leaks), M,
                          temp_channels, power_channels)


def conductance_matrix(m, couplings, leaks):
    """Assemble G from node-to-node conductances and per-node ambient leaks."""
    G = np.diag(np.asarray(leaks, dtype=float))
    for (i, j), g in couplings.items():
        G[i, j] -= g
        G[j, i] -= g
        G[i, i] += g
        G[j, j] += g
    return G


def random_network(m, n, seed=0, density=0.4):
    """
    Random valid network with a full-column-rank injection map.

    Every source heats its own node (sources beyond m wrap around), so B_bar
    has full column rank whenever n <= m.
    """
    rng = np.random.default_rng(seed)
    capacitance = rng.uniform(1.0, 10.0, size=m)
    couplings = {}
    for i in range(m - 1):
        # a chain keeps the graph connected
        couplings[(i, i + 1)] = rng.uniform(0.05, 0.5)
        for j in range(i + 2, m):
            if rng.random() < density:
                couplings[(i, j)] = rng.uniform(0.05, 0.5)
    leaks = rng.uniform(0.01, 0.2, size=m)
    M = np.zeros((m, n))
    for j in range(n):
        M[j % m, j] = rng.uniform(0.5, 1.5)
        M[rng.integers(m), j] += rng.uniform(0.0, 0.2)
    return ThermalNetwork(capacitance, conductance_matrix(m, couplings, leaks), M)


def save_network(net, path):
    """Write a network definition (C diagonal, G and M as sparse triplets)."""
    def triplets(matrix, upper=False):
        rows, cols = np.nonzero(np.triu(matrix) if upper else matrix)
        return ";".join(f"{r},{c},{format_float(matrix[r, c])}" for r, c in zip(rows, cols))

    write_key_values(path, {
        "m": str(net.m),
        "n": str(net.n),
        "temp_channels": ",".join(net.temp_channels),
        "power_channels": ",".join(net.power_channels),
        "C": format_floats(np.diag(net.C)),
        "G": triplets(net.G, upper=True),
        "M": triplets(net.M),
    }, header="Thermal network: C du/dt = -G u + M x (G upper triangle, triplets row,col,value)")
    logger.info(f"Saved {net.m}-node network to {path}")


def _parse_triplets(values, key, shape):
    if key not in values:
        raise ConfigError(f"missing key '{key}'", key=key)
    matrix = np.zeros(shape)
    for item in filter(None, (part.strip() for part in values[key].split(";"))):
        parts = item.split(",")
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except (IndexError, ValueError):
            raise ConfigError(f"key '{key}' has a malformed triplet {item!r}", key=key) from None
        if len(parts) != 3 or not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise ConfigError(f"key '{key}' has an out-of-range triplet {item!r}", key=key)
        matrix[r, c] = v
    return matrix


def load_network(path):
    """
    Read a network definition file.

    Raises:
        ConfigError: Missing or malformed key (named in the message)
    """
    values = read_key_values(path)
    m, n = _parse_size(values, "m"), _parse_size(values, "n")

    C = parse_float_list(values, "C", expected=m)
    if np.any(C <= 0):
        raise ConfigError("key 'C' must hold positive capacitances", key="C")
    upper = _parse_triplets(values, "G", (m, m))
    G = np.triu(upper) + np.triu(upper, 1).T
    M = _parse_triplets(values, "M", (m, n))
    if np.any(M < 0):
        raise ConfigError("key 'M' must hold nonnegative injection weights", key="M")

    names = {}
    for key, size in (("temp_channels", m), ("power_channels", n)):
        names[key] = parse_name_list(values, key) if key in values else ()
        if names[key] and len(names[key]) != size:
            raise ConfigError(f"key '{key}' lists {len(names[key])} names, expected {size}", key=key)
    try:
        return ThermalNetwork(C, G, M, names["temp_channels"], names["power_channels"])
    except (ValueError, DiscretizationError) as exc:
        # C, M and the names are checked above; what remains concerns G
        raise ConfigError(f"invalid network in {path} (key 'G'): {exc}", key="G") from None


def _parse_size(values, key):
    try:
        size = int(values[key])
    except KeyError:
        raise ConfigError(f"missing key '{key}'", key=key) from None
    except ValueError:
        raise ConfigError(f"key '{key}' must be a positive integer, got {values[key]!r}", key=key) from None
    if size < 1:
        raise ConfigError(f"key '{key}' must be a positive integer, got {size}", key=key)
    return size


def dominant_time_constant(model):
    """Slowest time constant of a discrete model, -dt / ln(spectral radius)."""
    radius = float(np.max(np.abs(np.linalg.eigvals(model.A_bar))))
    if radius >= 1.0:
        return math.inf
    return -model.dt / math.log(radius)
