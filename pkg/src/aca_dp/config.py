"""INI-style experiment configuration.

Sections and keys (``;`` or ``#`` start comments)::

    [data]
    source = blobs            ; blobs | csv | idx
    n = 2000                  ; blobs only
    d_in = 20
    num_classes = 2
    separation = 3.0
    noise = 1.0
    path = train.csv          ; csv only
    label_column = label
    feature_columns = all-others
    images = train-images-idx3-ubyte   ; idx only
    labels = train-labels-idx1-ubyte
    normalization = none      ; none | minmax_01 | divide_by_255
    test_fraction = 0.2

    [model]
    architecture = logistic   ; logistic | mlp
    hidden_units = 0
    init_scale = 0.01

    [train]
    learning_rate = 0.5
    steps = 300               ; or: epochs = 50
    batch = poisson           ; poisson | fixed_shuffle
    sample_rate = 1.0
    batch_size = 64

    [privacy]
    configs = 0:inf, 1.0:1.0  ; comma-separated sigma:clip pairs
    delta = 1e-5

    [collective]
    transform = feature_offset ; feature_offset | patch | grid
    index = 0                  ; feature_offset
    offset = 10.0
    rows = 2                   ; patch, top-left corner at (row0, col0)
    cols = 2
    row0 = 0
    col0 = 0
    value = 50
    step = 2                   ; grid
    magnitude = 8
    max_value = 255
    target_label = 1
    alphas = 0:0.1:0.005       ; start:stop:step (inclusive) or a comma list
    target_success = 0.9

    [run]
    seed = 0
    replicates = 1
    workers = 1
    out = results

    [bound]
    dim = 20
    lr = 0.1
    steps = 200
    alphas = 0.1, 0.5
    sigmas = 0, 0.5, 1
    clips = 1, 5
    trials = 1000
    delta_conf = 0.05
    dist0 = 1.0
    curvature = 0.1
    overshoot = 0.5
    xi =                       ; empty: 1 / (2 alpha lr)
    xi_min =                   ; empty: per-trial realized minimum of xi_c

    [mia]
    pool_size = 200
    shadows = 8
    alphas = 0, 0.05
    fpr = 0.001

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DATA_SOURCES = ("blobs", "csv", "idx")
TRANSFORMS = ("feature_offset", "patch", "grid")


@dataclass(frozen=True)
class DataConfig:
    source: str = "blobs"
    n: int = 2000
    d_in: int = 20
    num_classes: int = 2
    separation: float = 3.0
    noise: float = 1.0
    path: Path | None = None
    label_column: str = "label"
    feature_columns: str = "all-others"
    images: Path | None = None
    labels: Path | None = None
    normalization: str = "none"
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "logistic"
    hidden_units: int = 0
    init_scale: float = 0.01


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 0.5
    steps: int | None = 300
    epochs: float | None = None
    batch: str = "poisson"
    sample_rate: float = 1.0
    batch_size: int = 64


@dataclass(frozen=True)
class CollectiveConfig:
    transform: str = "feature_offset"
    index: int = 0
    offset: float = 10.0
    rows: int = 2
    cols: int = 2
    row0: int = 0
    col0: int = 0
    value: float = 50.0
    step: int = 2
    magnitude: float = 8.0
    max_value: float = 255.0
    target_label: int = 1
    alphas: tuple[float, ...] = (0.0,)
    target_success: float = 0.9


@dataclass(frozen=True)
class BoundConfig:
    dim: int = 20
    lr: float = 0.1
    steps: int = 200
    alphas: tuple[float, ...] = (0.1, 0.5)
    sigmas: tuple[float, ...] = (0.0, 0.5, 1.0)
    clips: tuple[float, ...] = (1.0, 5.0)
    trials: int = 1000
    delta_conf: float = 0.05
    dist0: float = 1.0
    curvature: float = 0.1
    overshoot: float = 0.5
    xi: float | None = None
    xi_min: float | None = None


@dataclass(frozen=True)
class MiaConfig:
    pool_size: int = 200
    shadows: int = 8
    alphas: tuple[float, ...] = (0.0, 0.05)
    fpr: float = 0.001


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    privacy: tuple[tuple[float, float], ...] = ((0.0, math.inf),)
    delta: float = 1e-5
    collective: CollectiveConfig = field(default_factory=CollectiveConfig)
    seed: int = 0
    replicates: int = 1
    workers: int = 1
    out: Path = Path("results")
    bound: BoundConfig = field(default_factory=BoundConfig)
    mia: MiaConfig = field(default_factory=MiaConfig)

    def __post_init__(self):
        validate(self)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


class ConfigError(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: ExperimentConfig) -> None:
    d, c = cfg.data, cfg.collective
    _check(d.source in DATA_SOURCES, f"data.source must be one of {DATA_SOURCES}")
    if d.source == "csv":
        _check(d.path is not None and Path(d.path).is_file(), f"data.path {d.path} does not exist")
    if d.source == "idx":
        for p in (d.images, d.labels):
            _check(p is not None and Path(p).is_file(), f"idx file {p} does not exist")
    _check(0.0 < d.test_fraction < 1.0, "data.test_fraction must lie in (0, 1)")
    _check(len(cfg.privacy) > 0, "privacy.configs must be non-empty")
    for sigma, clip in cfg.privacy:
        _check(sigma >= 0 and clip > 0, "privacy configs need sigma >= 0 and clip > 0")
        _check(not (sigma > 0 and math.isinf(clip)), "sigma > 0 requires a finite clip")
    _check(0.0 < cfg.delta < 1.0, "privacy.delta must lie in (0, 1)")
    _check(len(c.alphas) > 0, "collective.alphas must be non-empty")
    _check(all(0.0 <= a <= 1.0 for a in c.alphas), "alphas must lie in [0, 1]")
    _check(list(c.alphas) == sorted(c.alphas), "alphas must be ascending")
    _check(0.0 < c.target_success <= 1.0, "collective.target_success must lie in (0, 1]")
    _check(c.transform in TRANSFORMS, f"collective.transform must be one of {TRANSFORMS}")
    _check(cfg.replicates >= 1 and cfg.workers >= 1, "replicates and workers must be >= 1")
    t = cfg.train
    _check((t.steps is None) != (t.epochs is None), "train needs exactly one of steps or epochs")
    _check(len(cfg.mia.alphas) > 0 and cfg.mia.shadows >= 2, "mia needs alphas and >= 2 shadows")
    b = cfg.bound
    _check(b.alphas and b.sigmas and b.clips, "bound grids must be non-empty")


def parse_floats(text: str) -> tuple[float, ...]:
    """Comma list, or inclusive ``start:stop:step`` range."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if not step > 0:
            raise ConfigError("range step must be > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        # round away accumulated binary error so grid values print cleanly
        return tuple(float(np.round(start + i * step, 12)) for i in range(count))
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_privacy(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        sigma, _, clip = item.partition(":")
        if not clip:
            raise ConfigError(f"privacy config {item!r} must be sigma:clip")
        pairs.append((float(sigma), float(clip)))
    return tuple(pairs)


def _opt(sec, key, conv, default):
    if sec is None or key not in sec or sec[key].strip() == "":
        return default
    return conv(sec[key].strip())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    def sec(name):
        return cp[name] if cp.has_section(name) else None

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    s = sec("data")
    dd = DataConfig()
    data = DataConfig(
        source=_opt(s, "source", str, dd.source),
        n=_opt(s, "n", int, dd.n),
        d_in=_opt(s, "d_in", int, dd.d_in),
        num_classes=_opt(s, "num_classes", int, dd.num_classes),
        separation=_opt(s, "separation", float, dd.separation),
        noise=_opt(s, "noise", float, dd.noise),
        path=_opt(s, "path", rel, None),
        label_column=_opt(s, "label_column", str, dd.label_column),
        feature_columns=_opt(s, "feature_columns", str, dd.feature_columns),
        images=_opt(s, "images", rel, None),
        labels=_opt(s, "labels", rel, None),
        normalization=_opt(s, "normalization", str, dd.normalization),
        test_fraction=_opt(s, "test_fraction", float, dd.test_fraction),
    )
    s = sec("model")
    model = ModelConfig(
        architecture=_opt(s, "architecture", str, "logistic"),
        hidden_units=_opt(s, "hidden_units", int, 0),
        init_scale=_opt(s, "init_scale", float, 0.01),
    )
    s = sec("train")
    epochs = _opt(s, "epochs", float, None)
    train = TrainSettings(
        learning_rate=_opt(s, "learning_rate", float, 0.5),
        steps=_opt(s, "steps", int, None if epochs is not None else 300),
        epochs=epochs,
        batch=_opt(s, "batch", str, "poisson"),
        sample_rate=_opt(s, "sample_rate", float, 1.0),
        batch_size=_opt(s, "batch_size", int, 64),
    )
    s = sec("privacy")
    privacy = _opt(s, "configs", parse_privacy, ((0.0, math.inf),))
    delta = _opt(s, "delta", float, 1e-5)
    s = sec("collective")
    cd = CollectiveConfig()
    collective = CollectiveConfig(
        transform=_opt(s, "transform", str, cd.transform),
        index=_opt(s, "index", int, cd.index),
        offset=_opt(s, "offset", float, cd.offset),
        rows=_opt(s, "rows", int, cd.rows),
        cols=_opt(s, "cols", int, cd.cols),
        row0=_opt(s, "row0", int, cd.row0),
        col0=_opt(s, "col0", int, cd.col0),
        value=_opt(s, "value", float, cd.value),
        step=_opt(s, "step", int, cd.step),
        magnitude=_opt(s, "magnitude", float, cd.magnitude),
        max_value=_opt(s, "max_value", float, cd.max_value),
        target_label=_opt(s, "target_label", int, cd.target_label),
        alphas=_opt(s, "alphas", parse_floats, cd.alphas),
        target_success=_opt(s, "target_success", float, cd.target_success),
    )
    s = sec("run")
    bd = BoundConfig()
    b = sec("bound")
    bound = BoundConfig(
        dim=_opt(b, "dim", int, bd.dim),
        lr=_opt(b, "lr", float, bd.lr),
        steps=_opt(b, "steps", int, bd.steps),
        alphas=_opt(b, "alphas", parse_floats, bd.alphas),
        sigmas=_opt(b, "sigmas", parse_floats, bd.sigmas),
        clips=_opt(b, "clips", parse_floats, bd.clips),
        trials=_opt(b, "trials", int, bd.trials),
        delta_conf=_opt(b, "delta_conf", float, bd.delta_conf),
        dist0=_opt(b, "dist0", float, bd.dist0),
        curvature=_opt(b, "curvature", float, bd.curvature),
        overshoot=_opt(b, "overshoot", float, bd.overshoot),
        xi=_opt(b, "xi", float, None),
        xi_min=_opt(b, "xi_min", float, None),
    )
    m = sec("mia")
    md = MiaConfig()
    mia = MiaConfig(
        pool_size=_opt(m, "pool_size", int, md.pool_size),
        shadows=_opt(m, "shadows", int, md.shadows),
        alphas=_opt(m, "alphas", parse_floats, md.alphas),
        fpr=_opt(m, "fpr", float, md.fpr),
    )
    return ExperimentConfig(
        data=data,
        model=model,
        train=train,
        privacy=privacy,
        delta=delta,
        collective=collective,
        seed=_opt(s, "seed", int, 0),
        replicates=_opt(s, "replicates", int, 1),
        workers=_opt(s, "workers", int, 1),
        out=_opt(s, "out", rel, base / "results"),
        bound=bound,
        mia=mia,
    )
