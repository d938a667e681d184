"""Truth simulation for the tracking experiment.

The real world deviates from the nominal model in one place: the measurement
noise of sensor i is v^i_t = beta_i * w_{t-1} + eta^i_t, so all sensors share
the lagged process noise and are mutually correlated, while the filters'
nominal model assumes v^i_t = eta^i_t. All randomness comes from a
counter-based generator keyed by (seed, run, t, stream), so any single draw
is reproducible in isolation and runs can be simulated in any order or in
parallel without changing the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput
from .filters import StateSpaceModel
from .linalg import psd_sqrt

VALID_METHODS = ("kf1", "ckf", "ci", "mcmdrkf")

# Stream indices inside the counter-based generator.
STREAM_PROCESS = 0
_STREAM_SENSOR_BASE = 1  # sensor i uses stream 1 + i
# The initial-state stream sits after all sensor streams (computed per model).


def counter_normal(seed: int, run: int, t: int, stream: int, size: int) -> np.ndarray:
    """Standard normal draws from the (seed, run, t, stream) counter cell."""
    bitgen = np.random.Philox(counter=[t, stream, 0, 0], key=[seed, run])
    return np.random.Generator(bitgen).standard_normal(size)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for the Monte-Carlo tracking comparison.

    gamma1/gamma2/gamma3 are the (shared) band multipliers the robust filter
    runs with; gamma_grid optionally lists (gamma1, gamma2) pairs for tuning.
    """

    ts: float = 0.1
    steps: int = 300
    runs: int = 200
    seed: int = 123456789
    beta: tuple[float, ...] = (1.0, 0.5, 0.25)
    model: StateSpaceModel | None = None
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 0.0
    gamma_grid: tuple[tuple[float, float], ...] | None = None
    methods: tuple[str, ...] = VALID_METHODS
    out_dir: str = "out"

    def __post_init__(self):
        if self.ts <= 0:
            raise InvalidInput("ts must be positive")
        if self.steps < 1 or self.runs < 1:
            raise InvalidInput("steps and runs must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput("seed must fit in 64 bits")
        object.__setattr__(self, "seed", int(self.seed))
        model = self.model if self.model is not None else constant_acceleration_model(self.ts)
        object.__setattr__(self, "model", model)
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != model.p:
            raise InvalidInput(f"beta has {len(beta)} entries for {model.p} sensors")
        for i, b in enumerate(beta):
            if b != 0.0 and model.m[i] != model.r:
                raise InvalidInput(
                    f"beta[{i}] != 0 requires sensor dim {model.m[i]} == noise dim {model.r}"
                )
        object.__setattr__(self, "beta", beta)
        methods = tuple(self.methods)
        unknown = [m for m in methods if m not in VALID_METHODS]
        if unknown or not methods:
            raise InvalidInput(
                f"methods must be a non-empty subset of {VALID_METHODS}, got {methods}"
            )
        object.__setattr__(self, "methods", methods)
        if self.gamma_grid is not None:
            grid = tuple((float(a), float(b)) for a, b in self.gamma_grid)
            object.__setattr__(self, "gamma_grid", grid)

    @property
    def init_stream(self) -> int:
        return _STREAM_SENSOR_BASE + self.model.p

    def gammas(self) -> tuple[float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3)


def constant_acceleration_model(
    ts: float = 0.1,
    sensor_specs: tuple[tuple[tuple[float, float, float], float], ...] | None = None,
    q_var: float = 1.0,
    v0_scale: float = 100.0,
) -> StateSpaceModel:
    """Position/velocity/acceleration tracker with scalar sensors.

    sensor_specs lists (H row, noise variance) pairs. The default suite is
    two position sensors (variances 1 and 4) plus one velocity sensor
    (variance 1): the sensors must complement each other for the fusion
    baselines to be non-trivial. If they were all position sensors with
    ordered noise levels, every local filter covariance would dominate the
    next and trace-minimizing covariance intersection would collapse onto the
    single best sensor.
    """
    if sensor_specs is None:
        sensor_specs = (
            ((1.0, 0.0, 0.0), 1.0),
            ((1.0, 0.0, 0.0), 4.0),
            ((0.0, 1.0, 0.0), 1.0),
        )
    f = np.array([[1.0, ts, 0.5 * ts * ts], [0.0, 1.0, ts], [0.0, 0.0, 1.0]])
    g = np.array([[0.5 * ts * ts], [ts], [1.0]])
    sensors = tuple(
        (np.array([list(h)]), np.array([[rv]])) for h, rv in sensor_specs
    )
    return StateSpaceModel(
        F=f,
        G=g,
        Q=np.array([[q_var]]),
        sensors=sensors,
        x0hat=np.zeros(3),
        V0=v0_scale * np.eye(3),
    )


@dataclass(frozen=True)
class _NoiseShaping:
    """Square-root factors reused across steps of one truth simulation."""

    q_half: np.ndarray
    r_half: tuple[np.ndarray, ...]
    v0_half: np.ndarray


def _shaping(model: StateSpaceModel) -> _NoiseShaping:
    return _NoiseShaping(
        q_half=psd_sqrt(model.Q),
        r_half=tuple(psd_sqrt(r) for _, r in model.sensors),
        v0_half=psd_sqrt(model.V0),
    )


def simulate_truth(
    cfg: ExperimentConfig, run: int, _shape: _NoiseShaping | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """True states and stacked measurements for one Monte-Carlo run.

    Returns (states, measurements) with shapes (steps, n) and (steps, m),
    rows t = 1..steps. The initial state is drawn from N(x0hat, V0); the
    process noise w_t drives the state while w_{t-1} leaks into every
    sensor's measurement noise through the beta coefficients (w_0 is drawn at
    t = 0 for the first measurement).
    """
    model = cfg.model
    shape = _shape if _shape is not None else _shaping(model)
    n, r, p = model.n, model.r, model.p
    seed = cfg.seed

    x = model.x0hat + shape.v0_half @ counter_normal(seed, run, 0, cfg.init_stream, n)
    w_prev = shape.q_half @ counter_normal(seed, run, 0, STREAM_PROCESS, r)

    states = np.empty((cfg.steps, n))
    meas = np.empty((cfg.steps, sum(model.m)))
    for t in range(1, cfg.steps + 1):
        w = shape.q_half @ counter_normal(seed, run, t, STREAM_PROCESS, r)
        x = model.F @ x + model.G @ w
        states[t - 1] = x
        off = 0
        for i, (h, _) in enumerate(model.sensors):
            mi = h.shape[0]
            eta = shape.r_half[i] @ counter_normal(
                seed, run, t, _STREAM_SENSOR_BASE + i, mi
            )
            meas[t - 1, off : off + mi] = h @ x + cfg.beta[i] * w_prev + eta
            off += mi
        w_prev = w
    return states, meas


# --- JSON config round-trip (strict: unknown keys are errors) ---

_CONFIG_KEYS = {
    "ts", "steps", "runs", "seed", "beta", "model",
    "gamma1", "gamma2", "gamma3", "gamma_grid", "methods", "out_dir",
}
_MODEL_KEYS = {"f", "g", "q", "sensors", "x0_hat", "v0"}


def _model_from_dict(d: dict) -> StateSpaceModel:
    unknown = set(d) - _MODEL_KEYS
    if unknown:
        raise InvalidInput(f"unknown model keys: {sorted(unknown)}")
    missing = _MODEL_KEYS - set(d)
    if missing:
        raise InvalidInput(f"missing model keys: {sorted(missing)}")
    sensors = []
    for i, s in enumerate(d["sensors"]):
        extra = set(s) - {"h", "r"}
        if extra or set(s) != {"h", "r"}:
            raise InvalidInput(f"sensor {i} must have exactly keys 'h' and 'r'")
        sensors.append((np.asarray(s["h"], dtype=float), np.asarray(s["r"], dtype=float)))
    return StateSpaceModel(
        F=np.asarray(d["f"], dtype=float),
        G=np.asarray(d["g"], dtype=float),
        Q=np.asarray(d["q"], dtype=float),
        sensors=tuple(sensors),
        x0hat=np.asarray(d["x0_hat"], dtype=float),
        V0=np.asarray(d["v0"], dtype=float),
    )


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from a parsed JSON document; unknown keys are errors."""
    if not isinstance(d, dict):
        raise InvalidInput("config document must be a JSON object")
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(d)
    if "model" in kwargs and kwargs["model"] is not None:
        kwargs["model"] = _model_from_dict(kwargs["model"])
    if "beta" in kwargs:
        kwargs["beta"] = tuple(kwargs["beta"])
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    if "gamma_grid" in kwargs and kwargs["gamma_grid"] is not None:
        kwargs["gamma_grid"] = tuple(tuple(pair) for pair in kwargs["gamma_grid"])
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as err:
        raise InvalidInput(f"bad config value: {err}") from err


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise InvalidInput(f"config is not valid JSON: {err}") from err
    return config_from_dict(doc)


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    """Copy of the config with selected fields replaced (CLI flag overrides)."""
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return replace(cfg, **kwargs) if kwargs else cfg
