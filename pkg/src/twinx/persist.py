"""Versioned JSON persistence for the trained bundle.

One document carries the network architecture and weights, the channel
scaler, the fitted error distribution, and the training seed. Weight arrays
are flattened in the canonical parameter order and floats survive the JSON
round trip exactly, so a reloaded bundle scores bit-identically.
"""

from __future__ import annotations

import json

import numpy as np

from ._fsio import atomic_write_text
from .anomaly import ErrorModel
from .errors import InvalidArch, ModelFormatError
from .forecaster import TcnArch, TcnModel, param_order, param_shapes
from .telemetry import ScalerParams

FORMAT_VERSION = 1


def bundle_to_dict(model: TcnModel, scaler: ScalerParams, em: ErrorModel,
                   training_seed: int) -> dict:
    order = param_order(model.arch)
    return {
        "format_version": FORMAT_VERSION,
        "arch": {
            "input_channels": model.arch.input_channels,
            "hidden_channels": model.arch.hidden_channels,
            "kernel_size": model.arch.kernel_size,
            "dilations": list(model.arch.dilations),
        },
        "scaler": {
            "channel_names": list(scaler.channel_names),
            "mins": scaler.mins.tolist(),
            "maxs": scaler.maxs.tolist(),
        },
        "weights": [
            {"name": name,
             "shape": list(model.params[name].shape),
             "data": model.params[name].ravel().tolist()}
            for name in order
        ],
        "error_model": {
            "mean": em.mean.tolist(),
            "cov": em.cov.tolist(),
            "precision": em.precision.tolist(),
            "tau": em.tau,
            "shrinkage": em.shrinkage,
            "quantile": em.quantile,
        },
        "training_seed": int(training_seed),
    }


def save_bundle(path, model: TcnModel, scaler: ScalerParams, em: ErrorModel,
                training_seed: int) -> None:
    doc = bundle_to_dict(model, scaler, em, training_seed)
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def _require(doc: dict, key: str, kind=None):
    if key not in doc:
        raise ModelFormatError(f"model file missing key {key!r}")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ModelFormatError(f"model file key {key!r} has wrong type")
    return val


def load_bundle(path) -> tuple[TcnModel, ScalerParams, ErrorModel, int]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file is not a JSON object")
    if _require(doc, "format_version", int) != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {doc['format_version']!r}")

    arch_doc = _require(doc, "arch", dict)
    try:
        arch = TcnArch(
            input_channels=int(_require(arch_doc, "input_channels", int)),
            hidden_channels=int(_require(arch_doc, "hidden_channels", int)),
            kernel_size=int(_require(arch_doc, "kernel_size", int)),
            dilations=tuple(_require(arch_doc, "dilations", list)),
        )
    except (TypeError, ValueError, InvalidArch) as exc:
        raise ModelFormatError(f"invalid architecture: {exc}") from exc

    want_order = param_order(arch)
    shapes = param_shapes(arch)
    weights_doc = _require(doc, "weights", list)
    got_names = [w.get("name") for w in weights_doc if isinstance(w, dict)]
    if got_names != want_order:
        raise ModelFormatError("weight entries do not match the expected layout")
    params: dict[str, np.ndarray] = {}
    for entry in weights_doc:
        name = entry["name"]
        shape = tuple(entry.get("shape", ()))
        if shape != shapes[name]:
            raise ModelFormatError(
                f"weight {name} has shape {shape}, expected {shapes[name]}")
        data = np.asarray(entry.get("data", []), dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ModelFormatError(f"weight {name} has wrong element count")
        if not np.all(np.isfinite(data)):
            raise ModelFormatError(f"weight {name} contains non-finite values")
        params[name] = data.reshape(shape)
    model = TcnModel(arch, params)

    sc_doc = _require(doc, "scaler", dict)
    names = _require(sc_doc, "channel_names", list)
    mins = np.asarray(_require(sc_doc, "mins", list), dtype=np.float64)
    maxs = np.asarray(_require(sc_doc, "maxs", list), dtype=np.float64)
    if len(names) != arch.input_channels:
        raise ModelFormatError("scaler channel count does not match architecture")
    try:
        scaler = ScalerParams(channel_names=tuple(names), mins=mins, maxs=maxs)
    except ValueError as exc:
        raise ModelFormatError(f"invalid scaler: {exc}") from exc

    em_doc = _require(doc, "error_model", dict)
    try:
        em = ErrorModel(
            mean=np.asarray(_require(em_doc, "mean", list), dtype=np.float64),
            cov=np.asarray(_require(em_doc, "cov", list), dtype=np.float64),
            precision=np.asarray(_require(em_doc, "precision", list), dtype=np.float64),
            tau=float(_require(em_doc, "tau", (int, float))),
            shrinkage=float(_require(em_doc, "shrinkage", (int, float))),
            quantile=float(_require(em_doc, "quantile", (int, float))),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid error model: {exc}") from exc
    if em.mean.shape != (arch.input_channels,):
        raise ModelFormatError("error model dimension does not match architecture")
    if em.cov.shape != (arch.input_channels, arch.input_channels):
        raise ModelFormatError("error model covariance has wrong shape")
    if em.precision.shape != em.cov.shape:
        raise ModelFormatError("error model precision has wrong shape")
    if em.tau <= 0:
        raise ModelFormatError("error model threshold must be positive")

    seed = _require(doc, "training_seed", int)
    return model, scaler, em, int(seed)
