"""Shared fixtures.

``rig`` is the expensive end-to-end fixture: a trained forecaster over a
synthetic driving trace plus fitted error models and on-disk CSV/bundle
artifacts. It is session-scoped because training takes about a minute and
several test modules (acceptance, CLI) lean on the same model.
"""

from __future__ import annotations

import json
import os
import time
from types import SimpleNamespace

import numpy as np
import pytest

from twinx import anomaly, persist, synth, telemetry
from twinx.forecaster import TcnArch, TrainConfig, init_model, train

WINDOW = 16

SPIKE_CHANNELS = ("FuelRate", "EngCoolantTemp", "BoostPres", "PctEngLoad",
                  "IntManfTemp", "InstFuelEco", "EngPctTorq")

SPIKES = tuple(
    synth.Injection(kind="spike", channel=SPIKE_CHANNELS[i % len(SPIKE_CHANNELS)],
                    start=200 + 100 * i, duration=1, magnitude=8.0)
    for i in range(21)
)
DRIFTS = (
    synth.Injection(kind="drift", channel="FuelRate", start=2450, duration=80,
                    magnitude=28.0),
    synth.Injection(kind="drift", channel="BoostPres", start=2650, duration=80,
                    magnitude=28.0),
)

TRAIN_SYNTH = synth.SynthConfig(rows=4000, seed=101)
QUERY_SYNTH = synth.SynthConfig(rows=3000, seed=202, injections=SPIKES + DRIFTS)
CLEAN_QUERY_SYNTH = synth.SynthConfig(rows=3000, seed=404)
CALIB_SYNTH = synth.SynthConfig(rows=2000, seed=505)

ARCH_HIDDEN = 24
TRAIN_CFG = TrainConfig(epochs=150, batch_size=64, learning_rate=3e-3,
                        patience=20, seed=0, val_fraction=0.2)


def _windows(frame, scaler):
    return telemetry.make_windows(telemetry.apply_scaler(frame, scaler), WINDOW)


@pytest.fixture(scope="session")
def rig(tmp_path_factory):
    t0 = time.monotonic()
    schema = telemetry.default_schema()
    train_frame = synth.synth_generate(TRAIN_SYNTH)
    scaler = telemetry.fit_scaler(train_frame)
    train_ds = _windows(train_frame, scaler)

    arch = TcnArch(input_channels=schema.num_channels,
                   hidden_channels=ARCH_HIDDEN, kernel_size=2,
                   dilations=(1, 2, 4))
    model, report = train(init_model(arch, TRAIN_CFG.seed), train_ds, TRAIN_CFG)

    # thresholds calibrated on data the optimizer never fit
    _, tail = telemetry.split_chronological(train_ds, 1.0 - TRAIN_CFG.val_fraction)
    em98 = anomaly.fit_error_model(model, tail, 0.1, 0.98)
    calib_frame = synth.synth_generate(CALIB_SYNTH)
    em99 = anomaly.fit_error_model(model, _windows(calib_frame, scaler), 0.1, 0.99)

    query_frame = synth.synth_generate(QUERY_SYNTH)
    clean_query_frame = synth.synth_generate(CLEAN_QUERY_SYNTH)

    data_dir = tmp_path_factory.mktemp("rig")
    paths = SimpleNamespace(
        train_csv=os.path.join(data_dir, "train.csv"),
        query_csv=os.path.join(data_dir, "query_spikes.csv"),
        clean_csv=os.path.join(data_dir, "query_clean.csv"),
        bundle99=os.path.join(data_dir, "model99.json"),
        bundle98=os.path.join(data_dir, "model98.json"),
        report_json=os.path.join(data_dir, "train_report.json"),
    )
    telemetry.write_csv(train_frame, paths.train_csv)
    telemetry.write_csv(query_frame, paths.query_csv)
    telemetry.write_csv(clean_query_frame, paths.clean_csv)
    persist.save_bundle(paths.bundle99, model, scaler, em99, TRAIN_CFG.seed)
    persist.save_bundle(paths.bundle98, model, scaler, em98, TRAIN_CFG.seed)
    with open(paths.report_json, "w", encoding="utf-8") as fh:
        json.dump({"train_mse": report.train_mse, "val_mse": report.val_mse,
                   "best_epoch": report.best_epoch,
                   "final_epoch": report.final_epoch,
                   "seed": report.seed, "hyper": report.hyper}, fh, indent=2)
        fh.write("\n")

    return SimpleNamespace(
        schema=schema, window=WINDOW, scaler=scaler,
        model=model, report=report, em98=em98, em99=em99,
        train_frame=train_frame, train_ds=train_ds,
        query_frame=query_frame, query_ds=_windows(query_frame, scaler),
        clean_query_frame=clean_query_frame,
        clean_query_ds=_windows(clean_query_frame, scaler),
        spikes=SPIKES, drifts=DRIFTS, paths=paths,
        build_seconds=time.monotonic() - t0,
    )
