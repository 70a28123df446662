"""Synthetic vehicle telemetry with a drive-cycle regime machine and fault injection.

Generation is fully deterministic given (config, seed). Channels are coupled
the way a real drivetrain couples them: fuel rate follows engine load,
coolant temperature lags a load-dependent setpoint, output shaft speed tracks
vehicle speed, and the brake regime forces BrakeSwitch to 1 with the pedal
at exactly 0. Injected faults mark their rows in the frame's labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .telemetry import ChannelSchema, TelemetryFrame, default_schema

REGIME_IDLE = 0
REGIME_ACCEL = 1
REGIME_CRUISE = 2
REGIME_BRAKE = 3
REGIME_NAMES = ("idle", "accelerate", "cruise", "brake")

INJECTION_KINDS = ("spike", "drift", "stuck", "overheat")

# Per-channel white-noise scale in physical units. Injection magnitudes are
# expressed as multiples of these, so binary/integer channels get a unit
# injection scale even though they carry no noise of their own.
NOISE_STD = {
    "EngCoolantTemp": 0.9,
    "PctEngLoad": 4.0,
    "EngPctTorq": 4.0,
    "BoostPres": 1.2,
    "AccelPedalPos": 3.0,
    "IntManfTemp": 1.5,
    "VehSpeedEng": 1.2,
    "TransOilTemp": 0.6,
    "TrSelGr": 0.0,
    "TransTorqConvLockupEngaged": 0.0,
    "TrOutShaftSp": 35.0,
    "FuelRate": 0.45,
    "InstFuelEco": 0.75,
    "InjCtlPres": 500.0,
    "BrakeSwitch": 0.0,
}

EPOCH_START = 1_700_000_000.0


def injection_scale(channel: str) -> float:
    """Physical-unit step that one magnitude unit of a fault adds."""
    std = NOISE_STD[channel]
    return std if std > 0 else 1.0


@dataclass(frozen=True)
class Injection:
    """One fault: kind, target channel, row extent, size in noise-std units."""

    kind: str
    channel: str
    start: int
    duration: int
    magnitude: float = 8.0


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 4000
    seed: int = 0
    injections: tuple[Injection, ...] = ()


def _validate(config: SynthConfig, schema: ChannelSchema) -> None:
    if config.rows < 1:
        raise InvalidConfig("rows must be positive")
    for inj in config.injections:
        if inj.kind not in INJECTION_KINDS:
            raise InvalidConfig(f"unknown injection kind {inj.kind!r}")
        if inj.channel not in schema.names:
            raise InvalidConfig(f"unknown injection channel {inj.channel!r}")
        if inj.duration < 1:
            raise InvalidConfig("injection duration must be >= 1")
        if inj.start < 0 or inj.start + inj.duration > config.rows:
            raise InvalidConfig(
                f"injection rows [{inj.start}, {inj.start + inj.duration}) "
                f"fall outside 0..{config.rows}"
            )
        if inj.magnitude <= 0:
            raise InvalidConfig("injection magnitude must be positive")


@dataclass
class _DriveState:
    regime: int = REGIME_IDLE
    ticks_left: int = 0
    pedal_target: float = 0.0
    pedal: float = 0.0
    speed: float = 0.0
    decel: float = 0.0
    gear: int = 1
    g4_streak: int = 0
    prev_pedal: float = 0.0
    prev_speed: float = 0.0
    prev_meas_speed: float = 0.0
    coolant: float = 178.0
    manifold: float = 98.0
    trans_oil: float = 158.0
    boost: float = 1.0


# Pedal moves toward its target with a slew limit, so nominal dynamics stay
# smooth and the forecaster's error tail reflects sensor noise, not jumps.
_PEDAL_RISE = 0.07
_PEDAL_FALL = 0.12

# Displayed speed to shift 1->2, 2->3, 3->4.  The gearbox shifts off the
# previous row's speed reading, so gear state is always computable from
# the emitted telemetry.  Boundaries sit well below the cruise band and
# the hysteresis is wide next to the speed read noise, so steady driving
# never hovers on a shift point.
_GEAR_UP = (6.0, 13.0, 23.0)
_GEAR_HYSTERESIS = 4.0
_TOP_GEAR = len(_GEAR_UP) + 1


def _enter_regime(state: _DriveState, regime: int, rng: np.random.Generator) -> None:
    state.regime = regime
    if regime == REGIME_IDLE:
        state.ticks_left = int(rng.integers(20, 61))
        state.pedal_target = 0.0
    elif regime == REGIME_ACCEL:
        state.ticks_left = int(rng.integers(12, 31))
        state.pedal_target = float(rng.uniform(0.55, 0.9))
    elif regime == REGIME_CRUISE:
        state.ticks_left = int(rng.integers(60, 181))
        # cruise speeds stay between the top shift point and the rev ceiling
        state.pedal_target = float(rng.uniform(0.36, 0.5))
    else:
        # braking holds until the vehicle stops, so the switch release is
        # predictable from the visible speed ramp; the cap only guards
        # against a stuck loop
        state.ticks_left = 999
        state.pedal_target = 0.0
        state.decel = 0.0


_NEXT_REGIME = {
    REGIME_IDLE: REGIME_ACCEL,
    REGIME_ACCEL: REGIME_CRUISE,
    REGIME_CRUISE: REGIME_BRAKE,
    REGIME_BRAKE: REGIME_IDLE,
}


def _update_gear(state: _DriveState, meas_speed: float) -> None:
    while state.gear < _TOP_GEAR and meas_speed >= _GEAR_UP[state.gear - 1]:
        state.gear += 1
    while (state.gear > 1
           and meas_speed < _GEAR_UP[state.gear - 2] - _GEAR_HYSTERESIS):
        state.gear -= 1


def synth_trace(config: SynthConfig,
                schema: ChannelSchema | None = None,
                ) -> tuple[TelemetryFrame, np.ndarray]:
    """Generate a frame plus the per-row regime code array (for tests)."""
    schema = schema or default_schema()
    _validate(config, schema)
    rng = np.random.default_rng(config.seed)
    t = config.rows
    d = schema.num_channels
    values = np.zeros((t, d), dtype=np.float64)
    regimes = np.zeros(t, dtype=np.int64)
    col = {name: schema.index_of(name) for name in schema.names}
    noise = {name: rng.normal(0.0, NOISE_STD[name], size=t) if NOISE_STD[name] > 0
             else np.zeros(t) for name in schema.names}

    st = _DriveState()
    _enter_regime(st, REGIME_IDLE, rng)
    for i in range(t):
        if st.ticks_left <= 0:
            _enter_regime(st, _NEXT_REGIME[st.regime], rng)
        st.ticks_left -= 1
        regimes[i] = st.regime

        target = st.pedal_target
        st.pedal += float(np.clip(target - st.pedal, -_PEDAL_FALL, _PEDAL_RISE))

        if st.regime == REGIME_BRAKE:
            # the brake phase opens with the driver lifting off; the switch
            # engages one tick after the pedal reads zero while still
            # rolling, and releases one tick after standstill, so both
            # flips follow the emitted pedal and speed exactly
            braking = st.prev_pedal <= 0.0 and st.prev_speed > 0.0
            brake = 1.0 if braking else 0.0
            if braking:
                st.decel = min(st.decel + 0.8, 2.4)
                st.speed = max(0.0, st.speed - st.decel)
                if st.speed <= 0.0:
                    st.ticks_left = 0
            else:
                st.speed += 0.15 * (75.0 * st.pedal - st.speed) / 10.0
        else:
            brake = 0.0
            if st.regime == REGIME_IDLE:
                st.speed = max(0.0, st.speed - 1.0)
            elif st.regime == REGIME_ACCEL:
                st.speed += 3.5 * st.pedal * max(0.0, 1.0 - st.speed / 90.0)
            else:
                st.speed += 0.15 * (75.0 * st.pedal - st.speed) / 10.0
        pedal = st.pedal
        _update_gear(st, st.prev_meas_speed)
        # the converter locks only after top gear has been held for three
        # completed ticks, so the flip follows the visible gear history
        lockup = 1.0 if st.g4_streak >= 3 else 0.0
        st.g4_streak = st.g4_streak + 1 if st.gear >= _TOP_GEAR else 0

        # physics evolves on clean latents; sensor noise enters only at
        # the measurement step below, so channels do not inherit each
        # other's read noise
        load = 12.0 + 80.0 * pedal + 0.1 * st.speed
        load = float(np.clip(load, 4.0, 100.0))
        load_frac = load / 100.0

        st.coolant += (178.0 + 26.0 * load_frac - st.coolant) / 120.0
        st.manifold += (96.0 + 42.0 * load_frac - st.manifold) / 30.0
        st.trans_oil += (156.0 + 22.0 * st.speed / 90.0 - st.trans_oil) / 200.0
        st.boost += (1.0 + 24.0 * load_frac - st.boost) / 3.0

        fuel = max(0.15, 0.05 + 0.11 * load)
        eco = min(45.0, st.speed / max(fuel, 0.4))

        values[i, col["EngCoolantTemp"]] = st.coolant + noise["EngCoolantTemp"][i]
        values[i, col["PctEngLoad"]] = load + noise["PctEngLoad"][i]
        values[i, col["EngPctTorq"]] = max(0.0, 0.95 * load - 4.0 + noise["EngPctTorq"][i])
        values[i, col["BoostPres"]] = max(0.0, st.boost + noise["BoostPres"][i])
        # a released pedal reads a hard zero (idle contact); a pressed one
        # never reads below its floor, so zero is unambiguous
        values[i, col["AccelPedalPos"]] = (
            0.0 if pedal <= 0.0
            else float(np.clip(100.0 * pedal + noise["AccelPedalPos"][i], 0.5, 100.0))
        )
        values[i, col["IntManfTemp"]] = st.manifold + noise["IntManfTemp"][i]
        # wheel-speed pickups read a hard zero at standstill and never
        # below their floor while rolling
        standstill = st.speed <= 0.0
        meas_speed = (
            0.0 if standstill else max(0.5, st.speed + noise["VehSpeedEng"][i]))
        values[i, col["VehSpeedEng"]] = meas_speed
        values[i, col["TransOilTemp"]] = st.trans_oil + noise["TransOilTemp"][i]
        values[i, col["TrSelGr"]] = st.gear
        values[i, col["TransTorqConvLockupEngaged"]] = lockup
        values[i, col["TrOutShaftSp"]] = (
            0.0 if standstill else max(15.0, 29.7 * st.speed + noise["TrOutShaftSp"][i]))
        values[i, col["FuelRate"]] = max(0.0, fuel + noise["FuelRate"][i])
        values[i, col["InstFuelEco"]] = max(0.0, eco + noise["InstFuelEco"][i])
        values[i, col["InjCtlPres"]] = 5000.0 + 15000.0 * load_frac + noise["InjCtlPres"][i]
        values[i, col["BrakeSwitch"]] = brake

        st.prev_pedal = pedal
        st.prev_speed = st.speed
        st.prev_meas_speed = meas_speed

    labels = np.zeros(t, dtype=np.int64)
    for inj in config.injections:
        _apply_injection(values, labels, col[inj.channel], inj)

    frame = TelemetryFrame(
        schema=schema,
        timestamps=EPOCH_START + np.arange(t, dtype=np.float64),
        values=values,
        labels=labels,
    )
    return frame, regimes


def _apply_injection(values: np.ndarray, labels: np.ndarray,
                     ch: int, inj: Injection) -> None:
    lo, hi = inj.start, inj.start + inj.duration
    step = inj.magnitude * injection_scale(inj.channel)
    if inj.kind == "spike":
        values[lo:hi, ch] += step
    elif inj.kind == "drift":
        values[lo:hi, ch] += np.linspace(0.0, step, inj.duration)
    elif inj.kind == "stuck":
        values[lo:hi, ch] = values[lo, ch]
    else:  # overheat: ramp up, then hold the elevated level
        half = max(1, inj.duration // 2)
        ramp = np.minimum(np.arange(inj.duration) / half, 1.0) * step
        values[lo:hi, ch] += ramp
    labels[lo:hi] = 1


def synth_generate(config: SynthConfig,
                   schema: ChannelSchema | None = None) -> TelemetryFrame:
    """Generate a labeled telemetry frame for the given config."""
    frame, _ = synth_trace(config, schema)
    return frame
