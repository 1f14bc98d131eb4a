"""Synthetic powertrain test-bench data with injectable faults.

Each simulated driving cycle starts from a random speed profile (a sum of
smoothed ramps between random target speeds, beginning and ending at
standstill). A lumped drivetrain model turns the profile into motor torque
(inertia, drag, rolling resistance plus a slowly varying load disturbance),
electrical power with an efficiency split between driving and recuperation,
battery current, a state of charge that integrates the current, a terminal
voltage that sags under load, and component temperatures that follow
first-order lags on dissipated power. The thirteen emitted channels get
independent per-channel sensor noise.

Generation is split into a template stage (profile shape and fault knobs)
and a realization stage (start conditions and every noise draw), both fed by
named substreams of one seed. A fault variant recomputes the physics from
the identical template and realization, so every anomalous cycle has a
bitwise-paired normal twin and the only differences are the fault's causal
footprint:

- wheel_radius: the reported vehicle speed is scaled by a wrong wheel
  radius; all torque-, current- and temperature-paths stay untouched.
- sport_mode: a more aggressive pedal map scales torque and everything
  downstream of it.
- no_recuperation: braking torque is clamped at zero, so current never flows
  back and the state of charge stops recovering during deceleration.
- battery_simulator: the battery is replaced by a stiff supply with a fixed
  terminal voltage and frozen state of charge.
- reduced_cooling: the cooling circuit degrades partway through the cycle,
  raising the steady-state thermal gain of motor and inverter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import lfilter

from .data import NORMAL_LABEL, Sequence
from .errors import ConfigError
from .seeding import substream

CHANNELS: tuple[str, ...] = (
    "vehicle_speed",
    "edu_torque",
    "axle_torque_left",
    "axle_torque_right",
    "edu_current",
    "edu_voltage",
    "hvb_current",
    "hvb_voltage",
    "hvb_temperature",
    "hvb_soc",
    "edu_rotor_temp",
    "edu_stator_temp",
    "inverter_temp",
)

ANOMALY_TYPES: tuple[str, ...] = (
    "wheel_radius",
    "sport_mode",
    "no_recuperation",
    "battery_simulator",
    "reduced_cooling",
)

# per-channel sensor noise standard deviations, in channel units
_SENSOR_NOISE = np.array([0.15, 1.5, 4.0, 4.0, 1.5, 0.3, 1.5, 0.3,
                          0.08, 0.05, 0.08, 0.08, 0.08])

# template/realization substream slots
_TRAIN, _VAL, _TEST_NORMAL, _ANOMALY = 0, 1, 2, 3


@dataclass(frozen=True)
class PhysicsConfig:
    """Lumped drivetrain constants; defaults give a mid-size electric car."""

    wheel_radius_m: float = 0.33
    gear_ratio: float = 9.0
    inertia_torque: float = 66.0       # Nm per m/s^2 at the motor
    drag_torque: float = 0.0145        # Nm per (m/s)^2
    rolling_torque: float = 7.8        # Nm while moving
    efficiency: float = 0.92
    nominal_voltage: float = 360.0
    aux_current: float = 2.0
    capacity_ah: float = 120.0
    ocv_slope: float = 0.8             # V per % state of charge around 70 %
    internal_resistance: float = 0.09  # ohm
    cable_resistance: float = 0.02
    rotor_gain: float = 0.03           # K per W dissipated
    rotor_tau: float = 150.0
    stator_gain: float = 0.02
    stator_tau: float = 250.0
    inverter_gain: float = 0.012
    inverter_tau: float = 60.0
    battery_gain: float = 0.006
    battery_tau: float = 400.0
    load_noise_nm: float = 8.0         # scale of the smoothed load disturbance
    torque_split_nm: float = 15.0      # scale of the left/right split imbalance


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    rate_hz: float = 2.0
    duration_s: float = 300.0
    n_train: int = 60
    n_val: int = 12
    n_test_normal: int = 40
    anomaly_plan: tuple[tuple[str, int], ...] = tuple((a, 4) for a in ANOMALY_TYPES)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    def validate(self) -> None:
        if self.rate_hz <= 0 or self.duration_s <= 0:
            raise ConfigError("rate and duration must be positive")
        if not 300 <= self.duration_s <= 1800:
            raise ConfigError("duration must be between 5 and 30 simulated minutes")
        for name in ("n_train", "n_val", "n_test_normal"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for kind, count in self.anomaly_plan:
            if kind not in ANOMALY_TYPES:
                raise ConfigError(
                    f"unknown anomaly type {kind!r}; known: {', '.join(ANOMALY_TYPES)}")
            if count < 0:
                raise ConfigError("anomaly counts must be non-negative")


@dataclass(frozen=True)
class CycleTemplate:
    speed_kmh: np.ndarray
    knobs: dict[str, float]


@dataclass(frozen=True)
class CycleRealization:
    start_soc: float
    ambient_c: float
    sensor_noise: np.ndarray
    load_noise: np.ndarray
    split_noise: np.ndarray


def draw_template(rng: np.random.Generator, config: SynthConfig) -> CycleTemplate:
    n = config.n_steps
    n_knots = max(12, int(round(config.duration_s / 20.0)))
    times = np.linspace(0, n - 1, n_knots)
    spacing = times[1] - times[0]

    # Speed knots: standstill dwell at both ends, one full-swing burst per
    # cycle, and a clamped random walk elsewhere. The burst is the steepest
    # ramp in every cycle by construction (walk steps, time jitter, and the
    # run-out are capped below its rate), so the worst-case maneuver is the
    # same across cycles and peak reconstruction error does not vary with
    # profile luck.
    speeds = np.zeros(n_knots)
    burst = int(rng.integers(2, max(3, n_knots - 4)))
    for k in range(2, n_knots - 2):
        if k == burst:
            speeds[k] = rng.uniform(16.0, 18.0)
        elif k == burst + 1:
            speeds[k] = rng.uniform(102.0, 104.0)
        elif k == burst + 2:
            speeds[k] = rng.uniform(16.0, 18.0)
        else:
            # tighter ceilings next to the burst entry and the run-out keep
            # every non-burst ramp under the burst rate
            hi = 108.0
            if k == burst - 1:
                hi = 68.0
            if k == n_knots - 4:
                hi = 80.0
            if k == n_knots - 3:
                hi = 45.0
            speeds[k] = np.clip(speeds[k - 1] + rng.uniform(-52.0, 52.0), 8.0, hi)

    jitter = rng.uniform(-0.1, 0.1, n_knots - 2) * spacing
    for k in range(1, n_knots - 1):
        if k not in (burst, burst + 1, burst + 2):
            times[k] += jitter[k - 1]
    profile = np.interp(np.arange(n), times, speeds)
    profile = gaussian_filter1d(profile, sigma=3.0 * config.rate_hz, mode="nearest")
    profile = np.clip(profile, 0.0, None)
    knobs = {
        "radius_factor": 1.0 + rng.choice([-1.0, 1.0]) * rng.uniform(0.07, 0.15),
        "sport_gain": rng.uniform(1.25, 1.4),
        "sim_voltage": rng.uniform(366.0, 372.0),
        "cooling_gain": rng.uniform(1.7, 2.1),
        "cooling_switch": rng.uniform(0.3, 0.5),
    }
    return CycleTemplate(profile, knobs)


def draw_realization(rng: np.random.Generator, config: SynthConfig) -> CycleRealization:
    n = config.n_steps
    return CycleRealization(
        start_soc=78.0 + 1.2 * rng.standard_normal(),
        ambient_c=22.0 + 1.0 * rng.standard_normal(),
        sensor_noise=rng.standard_normal((n, len(CHANNELS))),
        load_noise=gaussian_filter1d(rng.standard_normal(n), sigma=8.0, mode="nearest"),
        split_noise=gaussian_filter1d(rng.standard_normal(n), sigma=8.0, mode="nearest"),
    )


def _first_order_lag(u: np.ndarray, tau_s: float, dt: float, y0: float) -> np.ndarray:
    """y(t) relaxing toward u(t) with time constant tau, starting at y0."""
    alpha = dt / tau_s
    y, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], u, zi=[(1.0 - alpha) * y0])
    return y


def synthesize(template: CycleTemplate, realization: CycleRealization,
               config: SynthConfig, anomaly: str | None = None,
               overrides: dict[str, float] | None = None) -> np.ndarray:
    """Deterministic physics pass producing the (T, 13) channel matrix."""
    if anomaly is not None and anomaly not in ANOMALY_TYPES:
        raise ConfigError(
            f"unknown anomaly type {anomaly!r}; known: {', '.join(ANOMALY_TYPES)}")
    phys = config.physics
    dt = 1.0 / config.rate_hz
    knobs = dict(template.knobs)
    if overrides:
        knobs.update(overrides)

    v = template.speed_kmh / 3.6
    accel = np.gradient(v, dt)
    omega = v / phys.wheel_radius_m * phys.gear_ratio
    torque = (phys.inertia_torque * accel
              + phys.drag_torque * v * np.abs(v)
              + phys.rolling_torque * (v > 0.5)
              + phys.load_noise_nm * realization.load_noise)
    if anomaly == "sport_mode":
        torque = torque * knobs["sport_gain"]
    if anomaly == "no_recuperation":
        torque = np.maximum(torque, 0.0)

    p_mech = torque * omega
    p_elec = np.where(p_mech >= 0.0, p_mech / phys.efficiency, p_mech * phys.efficiency)
    i_edu = p_elec / phys.nominal_voltage
    i_hvb = i_edu + phys.aux_current

    if anomaly == "battery_simulator":
        soc = np.full(config.n_steps, realization.start_soc)
        v_hvb = np.full(config.n_steps, knobs["sim_voltage"])
    else:
        drained_pct = np.cumsum(i_hvb) * dt / (3600.0 * phys.capacity_ah) * 100.0
        soc = realization.start_soc - drained_pct
        ocv = phys.nominal_voltage + phys.ocv_slope * (soc - 70.0)
        v_hvb = ocv - i_hvb * phys.internal_resistance
    v_edu = v_hvb - i_edu * phys.cable_resistance

    p_loss_edu = np.abs(p_elec - p_mech)
    p_loss_batt = i_hvb * i_hvb * phys.internal_resistance
    cooling = np.ones(config.n_steps)
    if anomaly == "reduced_cooling":
        switch = int(knobs["cooling_switch"] * config.n_steps)
        cooling[switch:] = knobs["cooling_gain"]
    ambient = realization.ambient_c
    rotor = _first_order_lag(ambient + phys.rotor_gain * cooling * p_loss_edu,
                             phys.rotor_tau, dt, ambient)
    stator = _first_order_lag(ambient + phys.stator_gain * cooling * p_loss_edu,
                              phys.stator_tau, dt, ambient)
    inverter = _first_order_lag(ambient + phys.inverter_gain * cooling * p_loss_edu,
                                phys.inverter_tau, dt, ambient)
    t_batt = _first_order_lag(ambient + phys.battery_gain * p_loss_batt,
                              phys.battery_tau, dt, ambient)

    speed_out = template.speed_kmh
    if anomaly == "wheel_radius":
        speed_out = speed_out * knobs["radius_factor"]
    half_axle = torque * phys.gear_ratio / 2.0
    split = phys.torque_split_nm * realization.split_noise

    clean = np.column_stack([
        speed_out, torque, half_axle + split, half_axle - split,
        i_edu, v_edu, i_hvb, v_hvb, t_batt, soc, rotor, stator, inverter,
    ])
    return clean + realization.sensor_noise * _SENSOR_NOISE


def _cycle(config: SynthConfig, slot: int, index: int, seq_id: str, label: str,
           anomaly: str | None = None, overrides: dict[str, float] | None = None,
           realization_index: int = 0) -> Sequence:
    template = draw_template(substream(config.seed, "data", slot, index, 0), config)
    realization = draw_realization(
        substream(config.seed, "data", slot, index, 1, realization_index), config)
    values = synthesize(template, realization, config, anomaly, overrides)
    return Sequence(seq_id, label, config.rate_hz, CHANNELS, values)


def generate_pair(config: SynthConfig, anomaly: str, index: int,
                  overrides: dict[str, float] | None = None,
                  realization_index: int = 0) -> tuple[Sequence, Sequence]:
    """An anomalous cycle and its normal twin built from identical draws."""
    if anomaly not in ANOMALY_TYPES:
        raise ConfigError(
            f"unknown anomaly type {anomaly!r}; known: {', '.join(ANOMALY_TYPES)}")
    slot_index = ANOMALY_TYPES.index(anomaly) * 1000 + index
    twin = _cycle(config, _ANOMALY, slot_index, f"twin-{anomaly}-{index:02d}",
                  NORMAL_LABEL, realization_index=realization_index)
    anom = _cycle(config, _ANOMALY, slot_index, f"test-anomaly-{anomaly}-{index:02d}",
                  anomaly, anomaly, overrides, realization_index=realization_index)
    return anom, twin


def repeatability_std(config: SynthConfig, anomaly: str, index: int,
                      n_realizations: int = 8) -> np.ndarray:
    """Per-channel spread among re-realizations of one template: the square
    root of the across-cycle variance averaged over time."""
    slot_index = ANOMALY_TYPES.index(anomaly) * 1000 + index
    template = draw_template(substream(config.seed, "data", _ANOMALY, slot_index, 0), config)
    stack = []
    for k in range(1, n_realizations + 1):
        realization = draw_realization(
            substream(config.seed, "data", _ANOMALY, slot_index, 1, k), config)
        stack.append(synthesize(template, realization, config))
    per_step_var = np.stack(stack).var(axis=0)
    return np.sqrt(per_step_var.mean(axis=0))


def make_dataset(config: SynthConfig) -> dict[str, list[Sequence]]:
    """Train/val/test splits; the test split holds normals plus the planned
    anomalies, everything deterministic in the seed."""
    config.validate()
    train = [_cycle(config, _TRAIN, i, f"train-{i:02d}", NORMAL_LABEL)
             for i in range(config.n_train)]
    val = [_cycle(config, _VAL, i, f"val-{i:02d}", NORMAL_LABEL)
           for i in range(config.n_val)]
    test = [_cycle(config, _TEST_NORMAL, i, f"test-normal-{i:02d}", NORMAL_LABEL)
            for i in range(config.n_test_normal)]
    for kind, count in config.anomaly_plan:
        for i in range(count):
            anom, _ = generate_pair(config, kind, i)
            test.append(anom)
    return {"train": train, "val": val, "test": test}
