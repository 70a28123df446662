"""TOML run configuration: per-module sections, strict validation.

Relative paths resolve against the config file's directory. Unknown sections
or keys are rejected so typos fail loudly before any work starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import InvalidConfig
from .forecaster import TcnArch, TrainConfig
from .render import ChartStyle
from .shapley import ExplainConfig

_SECTIONS = {
    "data": {"train_csv", "query_csv"},
    "window": {"length", "stride", "detect_stride"},
    "model": {"hidden_channels", "kernel_size", "dilations"},
    "train": {"epochs", "batch_size", "learning_rate", "beta1", "beta2",
              "eps", "patience", "seed", "val_fraction"},
    "anomaly": {"shrinkage", "quantile"},
    "explain": {"estimator", "background", "samples", "seed"},
    "style": {"width", "height", "positive_color", "negative_color",
              "gradient_low", "gradient_high", "font_family", "font_size"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class RunConfig:
    train_csv: str | None = None
    query_csv: str | None = None
    window_length: int = 64
    stride: int = 1
    detect_stride: int = 1
    hidden_channels: int = 32
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    shrinkage: float = 0.1
    quantile: float = 0.99
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    background: int = 100
    style: ChartStyle = field(default_factory=ChartStyle)
    out_dir: str = "twinx_out"

    def arch_for(self, num_channels: int) -> TcnArch:
        return TcnArch(input_channels=num_channels,
                       hidden_channels=self.hidden_channels,
                       kernel_size=self.kernel_size,
                       dilations=self.dilations)


def _expect(value, kinds, where: str):
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise InvalidConfig(f"{where} has the wrong type")
    return value


def _positive_int(value, where: str) -> int:
    v = _expect(value, int, where)
    if v < 1:
        raise InvalidConfig(f"{where} must be >= 1")
    return v


def _resolve(path: str, base_dir: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def load_config(path) -> RunConfig:
    """Parse, validate, and resolve a TOML run configuration file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"config is not valid TOML: {exc}") from exc

    for section, keys in doc.items():
        if section not in _SECTIONS:
            raise InvalidConfig(f"unknown config section [{section}]")
        if not isinstance(keys, dict):
            raise InvalidConfig(f"[{section}] must be a table")
        for key in keys:
            if key not in _SECTIONS[section]:
                raise InvalidConfig(f"unknown key {key!r} in [{section}]")

    base_dir = os.path.dirname(os.path.abspath(path))
    data = doc.get("data", {})
    window = doc.get("window", {})
    model = doc.get("model", {})
    train = doc.get("train", {})
    anomaly = doc.get("anomaly", {})
    explain = doc.get("explain", {})
    style = doc.get("style", {})
    output = doc.get("output", {})

    train_csv = query_csv = None
    if "train_csv" in data:
        train_csv = _resolve(_expect(data["train_csv"], str, "data.train_csv"), base_dir)
        if not os.path.exists(train_csv):
            raise InvalidConfig(f"data.train_csv does not exist: {train_csv}")
    if "query_csv" in data:
        query_csv = _resolve(_expect(data["query_csv"], str, "data.query_csv"), base_dir)
        if not os.path.exists(query_csv):
            raise InvalidConfig(f"data.query_csv does not exist: {query_csv}")

    dilations = model.get("dilations", [1, 2, 4])
    if (not isinstance(dilations, list) or not dilations
            or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1
                       for d in dilations)):
        raise InvalidConfig("model.dilations must be a non-empty list of positive ints")

    train_cfg = TrainConfig(
        epochs=_expect(train.get("epochs", 50), int, "train.epochs"),
        batch_size=_positive_int(train.get("batch_size", 64), "train.batch_size"),
        learning_rate=float(_expect(train.get("learning_rate", 1e-3), (int, float),
                                    "train.learning_rate")),
        beta1=float(_expect(train.get("beta1", 0.9), (int, float), "train.beta1")),
        beta2=float(_expect(train.get("beta2", 0.999), (int, float), "train.beta2")),
        eps=float(_expect(train.get("eps", 1e-8), (int, float), "train.eps")),
        patience=_expect(train.get("patience", 5), int, "train.patience"),
        seed=_expect(train.get("seed", 0), int, "train.seed"),
        val_fraction=float(_expect(train.get("val_fraction", 0.2), (int, float),
                                   "train.val_fraction")),
    )
    if train_cfg.epochs < 0:
        raise InvalidConfig("train.epochs must be >= 0")
    if not 0.0 < train_cfg.learning_rate:
        raise InvalidConfig("train.learning_rate must be positive")
    if not 0.0 < train_cfg.val_fraction < 1.0:
        raise InvalidConfig("train.val_fraction must lie in (0, 1)")

    shrinkage = float(_expect(anomaly.get("shrinkage", 0.1), (int, float),
                              "anomaly.shrinkage"))
    quantile = float(_expect(anomaly.get("quantile", 0.99), (int, float),
                             "anomaly.quantile"))
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidConfig("anomaly.shrinkage must lie in [0, 1]")
    if not 0.0 < quantile < 1.0:
        raise InvalidConfig("anomaly.quantile must lie in (0, 1)")

    estimator = _expect(explain.get("estimator", "auto"), str, "explain.estimator")
    if estimator not in ("auto", "exact", "kernel"):
        raise InvalidConfig("explain.estimator must be auto, exact, or kernel")
    explain_cfg = ExplainConfig(
        estimator=estimator,
        n_samples=_positive_int(explain.get("samples", 4096), "explain.samples"),
        seed=_expect(explain.get("seed", 0), int, "explain.seed"),
    )

    try:
        style_cfg = ChartStyle(
            width=_positive_int(style.get("width", 640), "style.width"),
            height=_positive_int(style.get("height", 480), "style.height"),
            positive_color=_expect(style.get("positive_color", "#d62728"), str,
                                   "style.positive_color"),
            negative_color=_expect(style.get("negative_color", "#1f77b4"), str,
                                   "style.negative_color"),
            gradient_low=_expect(style.get("gradient_low", "#1f77b4"), str,
                                 "style.gradient_low"),
            gradient_high=_expect(style.get("gradient_high", "#d62728"), str,
                                  "style.gradient_high"),
            font_family=_expect(style.get("font_family", "Helvetica"), str,
                                "style.font_family"),
            font_size=_positive_int(style.get("font_size", 12), "style.font_size"),
        )
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc

    out_dir = output.get("dir", "twinx_out")
    out_dir = _resolve(_expect(out_dir, str, "output.dir"), base_dir)

    return RunConfig(
        train_csv=train_csv,
        query_csv=query_csv,
        window_length=_positive_int(window.get("length", 64), "window.length"),
        stride=_positive_int(window.get("stride", 1), "window.stride"),
        detect_stride=_positive_int(window.get("detect_stride", 1),
                                    "window.detect_stride"),
        hidden_channels=_positive_int(model.get("hidden_channels", 32),
                                      "model.hidden_channels"),
        kernel_size=_positive_int(model.get("kernel_size", 3), "model.kernel_size"),
        dilations=tuple(dilations),
        train=train_cfg,
        shrinkage=shrinkage,
        quantile=quantile,
        explain=explain_cfg,
        background=_positive_int(explain.get("background", 100),
                                 "explain.background"),
        style=style_cfg,
        out_dir=out_dir,
    )
