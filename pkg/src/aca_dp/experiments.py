"""Experiment runners behind the command-line interface.

Every runner writes CSV files into an output directory. Rows are produced in
grid order by a single writer, so the files do not depend on the worker count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Iterable

import numpy as np

from . import accountant
from .bounds import (
    BoundInputs,
    QuadraticLandscape,
    compute_bound,
    per_trial_bounds,
    simulate_dynamics,
    verify_bound,
)
from .collective import (
    FeatureOffset,
    GridPerturb,
    PatchSet,
    Strategy,
    apply_signal_batch,
    build_mixture,
    critical_mass,
    measure_success,
)
from .config import ExperimentConfig
from .data import Dataset, load_csv_dataset, load_idx_images, make_gaussian_blobs, normalize_features, split
from .mia import attack, half_split, member_data, train_shadows
from .models import ModelSpec, accuracy, init_model
from .optimizer import PrivacyParams, TrainConfig, steps_for_epochs, train
from .seeding import derive_seed

SWEEP_COLUMNS = [
    "alpha", "sigma", "clip", "epsilon", "success", "clean_accuracy", "seed",
    "replicate", "collective_seed", "init_seed", "q", "steps", "status",
]
CRITICAL_MASS_COLUMNS = ["sigma", "clip", "replicate", "target_success", "alpha_star"]
BOUND_COLUMNS = [
    "alpha", "sigma", "clip", "T", "eta", "d", "delta", "B", "f1", "f2", "bound",
    "empirical_q05", "violation_rate", "allowed_rate", "dist0", "xi", "xi_min", "xi_mode",
    "contraction_ok", "saturated_fraction", "seed", "status",
]
MIA_COLUMNS = ["alpha", "epsilon", "clip", "auc", "tpr_at_0.001_fpr", "seed", "status"]
MIA_DETAIL_COLUMNS = [
    "alpha", "sigma", "clip", "replicate", "seed", "epsilon", "auc", "tpr_at_low_fpr",
    "auc_non_collective", "tpr_at_low_fpr_non_collective", "fully_covered", "status",
]


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


class CsvSink:
    """Single writer; rows are flushed as they arrive."""

    def __init__(self, path: Path, columns: list[str]):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = columns
        self._fh = path.open("w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(columns)

    def write(self, row: dict) -> None:
        self._w.writerow([fmt(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@contextmanager
def _mapper(workers: int):
    if workers <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex.map


# ---------------------------------------------------------------- data


@dataclass(frozen=True)
class PreparedData:
    full: Dataset
    train: Dataset
    test: Dataset
    normalization: str

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        tmp = self.full.with_data(X, np.zeros(X.shape[0], dtype=np.int64))
        return normalize_features(tmp, self.normalization).features

    def normalized(self, ds: Dataset) -> Dataset:
        return normalize_features(ds, self.normalization)


_DATA_CACHE: dict = {}


def load_data(cfg: ExperimentConfig) -> PreparedData:
    key = (cfg.data, cfg.seed)
    if key not in _DATA_CACHE:
        d = cfg.data
        if d.source == "blobs":
            full = make_gaussian_blobs(d.n, d.d_in, d.num_classes, d.separation, d.noise, derive_seed(cfg.seed, "data"))
        elif d.source == "csv":
            cols = d.feature_columns
            if cols != "all-others":
                cols = [c.strip() for c in cols.split(",")]
            full = load_csv_dataset(d.path, d.label_column, cols)
        else:
            full = load_idx_images(d.images, d.labels)
        tr, te = split(full, 1.0 - d.test_fraction, derive_seed(cfg.seed, "split"))
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = PreparedData(full, tr, te, d.normalization)
    return _DATA_CACHE[key]


def model_spec(cfg: ExperimentConfig, ds: Dataset) -> ModelSpec:
    return ModelSpec(cfg.model.architecture, ds.d_in, ds.num_classes, cfg.model.hidden_units)


def make_transform(cfg: ExperimentConfig, ds: Dataset):
    c = cfg.collective
    if c.transform == "feature_offset":
        return FeatureOffset(c.index, c.offset, ds.d_in)
    if ds.image_shape is None:
        raise ValueError(f"transform {c.transform!r} needs image-shaped data")
    h, w, ch = ds.image_shape
    if c.transform == "patch":
        return PatchSet(c.rows, c.cols, c.row0, c.col0, c.value, h, w, ch)
    return GridPerturb(c.step, c.magnitude, c.max_value, h, w, ch)


def make_strategy(cfg: ExperimentConfig, ds: Dataset, alpha: float) -> Strategy:
    return Strategy(make_transform(cfg, ds), cfg.collective.target_label, alpha)


def train_steps(cfg: ExperimentConfig, n: int) -> int:
    t = cfg.train
    if t.steps is not None:
        return t.steps
    return steps_for_epochs(n, t.epochs, t.batch, t.sample_rate, t.batch_size)


def fit(cfg: ExperimentConfig, spec: ModelSpec, ds: Dataset, sigma: float, clip: float, seed: int, init_seed: int):
    """Train on an already-normalized dataset. Returns (theta, q, steps)."""
    t = cfg.train
    steps = train_steps(cfg, len(ds))
    tc = TrainConfig(t.learning_rate, steps, t.batch, t.sample_rate, t.batch_size, seed)
    pp = PrivacyParams(sigma, clip, cfg.delta)
    theta0 = init_model(spec, init_seed, cfg.model.init_scale)
    theta = train(ds.features, ds.labels, spec, tc, pp, theta0).theta
    return theta, tc.sampling_rate(len(ds)), steps


def cell_epsilon(sigma: float, q: float, steps: int, delta: float) -> float:
    return accountant.epsilon(sigma, q, steps, delta)


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True)
class Cell:
    alpha: float
    sigma: float
    clip: float
    replicate: int
    seed: int
    collective_seed: int
    init_seed: int

    @classmethod
    def from_row(cls, row: dict) -> "Cell":
        return cls(
            float(row["alpha"]), float(row["sigma"]), float(row["clip"]), int(row["replicate"]),
            int(row["seed"]), int(row["collective_seed"]), int(row["init_seed"]),
        )


def sweep_cells(cfg: ExperimentConfig) -> list[Cell]:
    cells = []
    for r in range(cfg.replicates):
        # the collective and the initial model are shared across the grid of
        # one replicate, so collectives are nested in alpha
        coll_seed = derive_seed(cfg.seed, "collective", r)
        init_seed = derive_seed(cfg.seed, "init", r)
        for sigma, clip in cfg.privacy:
            for a in cfg.collective.alphas:
                cells.append(Cell(a, sigma, clip, r, derive_seed(cfg.seed, sigma, clip, a, r), coll_seed, init_seed))
    return cells


def run_cell(cfg: ExperimentConfig, cell: Cell) -> dict:
    row = {
        "alpha": cell.alpha, "sigma": cell.sigma, "clip": cell.clip, "replicate": cell.replicate,
        "seed": cell.seed, "collective_seed": cell.collective_seed, "init_seed": cell.init_seed,
        "q": None, "steps": None, "epsilon": None, "success": None, "clean_accuracy": None,
    }
    try:
        data = load_data(cfg)
        spec = model_spec(cfg, data.train)
        strategy = make_strategy(cfg, data.train, cell.alpha)
        mix, _ = build_mixture(data.train, strategy, cell.collective_seed)
        theta, q, steps = fit(cfg, spec, data.normalized(mix), cell.sigma, cell.clip, cell.seed, cell.init_seed)
        row.update(
            q=q,
            steps=steps,
            epsilon=cell_epsilon(cell.sigma, q, steps, cfg.delta),
            success=measure_success(theta, spec, data.test, strategy, data.normalize),
            clean_accuracy=accuracy(theta, spec, data.normalize(data.test.features), data.test.labels),
            status="ok",
        )
    except Exception as exc:  # recorded per cell; the sweep continues
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


@dataclass
class SweepResult:
    rows: list[dict]
    critical: list[dict]

    @property
    def all_ok(self) -> bool:
        return all(r["status"] == "ok" for r in self.rows)


def run_sweep(cfg: ExperimentConfig, out: Path | None = None, workers: int | None = None) -> SweepResult:
    out = Path(out or cfg.out)
    cells = sweep_cells(cfg)
    sink = CsvSink(out / "results.csv", SWEEP_COLUMNS)
    rows = []
    try:
        with _mapper(workers or cfg.workers) as m:
            for row in m(partial(run_cell, cfg), cells):
                sink.write(row)
                rows.append(row)
    finally:
        sink.close()
    critical = []
    for r in range(cfg.replicates):
        for sigma, clip in cfg.privacy:
            ok = [x for x in rows if (x["replicate"], x["sigma"], x["clip"]) == (r, sigma, clip) and x["status"] == "ok"]
            a_star = critical_mass([x["alpha"] for x in ok], [x["success"] for x in ok], cfg.collective.target_success)
            critical.append({
                "sigma": sigma, "clip": clip, "replicate": r,
                "target_success": cfg.collective.target_success, "alpha_star": a_star,
            })
    sink = CsvSink(out / "critical_mass.csv", CRITICAL_MASS_COLUMNS)
    for row in critical:
        sink.write(row)
    sink.close()
    return SweepResult(rows, critical)


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def replay_row(cfg: ExperimentConfig, row: dict) -> dict:
    """Recompute one sweep cell from the parameters recorded in its row."""
    return run_cell(cfg, Cell.from_row(row))


# ---------------------------------------------------------------- bound


def bound_problem(cfg: ExperimentConfig):
    """Start, target and base landscape of the bound experiment.

    theta0 = 0 and theta* = dist0 * u for a seeded unit vector u. The base
    loss is centred past the target on the same line, at (1 + overshoot) *
    dist0 * u, so the base gradient stays aligned with theta - theta*.
    """
    b = cfg.bound
    rng = np.random.default_rng(derive_seed(cfg.seed, "bound", "direction"))
    u = rng.standard_normal(b.dim)
    u /= np.linalg.norm(u)
    theta0 = np.zeros(b.dim)
    target = b.dist0 * u
    return theta0, target, QuadraticLandscape((1.0 + b.overshoot) * b.dist0 * u, b.curvature)


def bound_row(cfg: ExperimentConfig, alpha: float, sigma: float, clip: float) -> dict:
    """One bound cell. With ``[bound] xi_min`` set, that analytic value feeds
    the bound; otherwise each trial is checked against the bound at its own
    realized minimum of xi_c, and the row reports the weakest of those."""
    b = cfg.bound
    seed = derive_seed(cfg.seed, "bound", sigma, clip, alpha)
    row = {c: None for c in BOUND_COLUMNS}
    row.update(alpha=alpha, sigma=sigma, clip=clip, T=b.steps, eta=b.lr, d=b.dim,
               delta=b.delta_conf, dist0=b.dist0, seed=seed)
    try:
        xi = b.xi if b.xi is not None else 1.0 / (2.0 * alpha * b.lr)
        theta0, target, land = bound_problem(cfg)
        inp = BoundInputs(alpha, sigma, clip, b.steps, b.lr, b.dim, b.delta_conf, b.dist0,
                          xi if b.xi_min is None else b.xi_min)
        sim = simulate_dynamics(land, inp, b.trials, seed, theta0, target, xi)
        if b.xi_min is None:
            mode = "realized"
            lb = per_trial_bounds(sim, inp)
            xi_used = sim.xi_min
            shown = compute_bound(replace(inp, xi_min=max(float(xi_used.min()), np.finfo(float).tiny)))
        else:
            mode = "analytic"
            shown = compute_bound(inp)
            lb = shown.lower_bound
            xi_used = np.array([b.xi_min])
        check = verify_bound(sim.success, lb, b.delta_conf)
        eta_b = b.lr * alpha * xi_used
        contraction = bool(np.all((eta_b > 0) & (eta_b < 1)))
        row.update(
            B=shown.B, f1=shown.f1, f2=shown.f2, bound=shown.lower_bound,
            empirical_q05=sim.quantiles[0.05], violation_rate=check.violation_rate,
            allowed_rate=check.allowed_rate, xi=xi, xi_min=float(xi_used.min()), xi_mode=mode,
            contraction_ok=contraction, saturated_fraction=float(sim.saturated_steps.mean() / b.steps),
        )
        if not contraction:
            row["status"] = "flagged"
        else:
            row["status"] = "pass" if check.passed else "fail"
    except Exception as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _bound_job(cfg, key):
    return bound_row(cfg, *key)


def run_bound(cfg: ExperimentConfig, out: Path | None = None, workers: int | None = None) -> list[dict]:
    out = Path(out or cfg.out)
    b = cfg.bound
    keys = [(a, s, c) for a in b.alphas for s in b.sigmas for c in b.clips]
    sink = CsvSink(out / "bound.csv", BOUND_COLUMNS)
    rows = []
    try:
        with _mapper(workers or cfg.workers) as m:
            for row in m(partial(_bound_job, cfg), keys):
                sink.write(row)
                rows.append(row)
    finally:
        sink.close()
    return rows


def bound_rows_ok(rows: Iterable[dict]) -> bool:
    return all(r["status"] in ("pass", "flagged") for r in rows)


# ---------------------------------------------------------------- accountant


def accountant_query(sigma: float, q: float, steps: int, delta: float, rdp_csv=None) -> tuple[float, float | None]:
    if sigma == 0:
        return math.inf, None
    curve = accountant.compose(accountant.rdp_curve(q, sigma), steps)
    if rdp_csv is not None:
        curve.write_csv(rdp_csv)
    return accountant.rdp_to_eps(curve, delta)


# ---------------------------------------------------------------- membership inference


@dataclass(frozen=True)
class Trainer:
    """Picklable `train_fn` for shadow and target models."""

    cfg: ExperimentConfig
    spec: ModelSpec
    sigma: float
    clip: float
    normalization: str

    def __call__(self, ds: Dataset, seed: int) -> np.ndarray:
        ds = normalize_features(ds, self.normalization)
        return fit(self.cfg, self.spec, ds, self.sigma, self.clip, seed, derive_seed(seed, "init"))[0]


def mia_pool(cfg: ExperimentConfig, data: PreparedData) -> Dataset:
    n = cfg.mia.pool_size
    if not 2 <= n <= len(data.train):
        raise ValueError(f"mia.pool_size must lie in [2, {len(data.train)}]")
    perm = np.random.default_rng(derive_seed(cfg.seed, "pool")).permutation(len(data.train))
    return data.train.subset(np.sort(perm[:n]))


def mia_cell(cfg: ExperimentConfig, alpha: float, sigma: float, clip: float, replicate: int,
             map_fn=map, scores_path: Path | None = None) -> tuple[dict, dict]:
    seed = derive_seed(cfg.seed, sigma, clip, alpha, replicate)
    summary = {"alpha": alpha, "epsilon": None, "clip": clip, "auc": None, "tpr_at_0.001_fpr": None, "seed": seed}
    detail = {c: None for c in MIA_DETAIL_COLUMNS}
    detail.update(alpha=alpha, sigma=sigma, clip=clip, replicate=replicate, seed=seed)
    try:
        data = load_data(cfg)
        pool = mia_pool(cfg, data)
        spec = model_spec(cfg, pool)
        strategy = make_strategy(cfg, pool, alpha)
        train_fn = Trainer(cfg, spec, sigma, clip, data.normalization)
        ensemble = train_shadows(pool, cfg.mia.shadows, strategy, train_fn, derive_seed(seed, "shadows"), map_fn)
        target_mask = half_split(len(pool), derive_seed(seed, "target"))
        members, replaced = member_data(pool, target_mask, strategy, derive_seed(seed, "target"))
        theta = train_fn(members, derive_seed(seed, "target", "train"))
        res = attack(theta, spec, data.normalized(pool), target_mask, ensemble, replaced, cfg.mia.fpr)
        n_members = int(target_mask.sum())
        steps = train_steps(cfg, n_members)
        q = TrainConfig(cfg.train.learning_rate, steps, cfg.train.batch, cfg.train.sample_rate,
                        cfg.train.batch_size).sampling_rate(n_members)
        eps = cell_epsilon(sigma, q, steps, cfg.delta)
        summary.update(epsilon=eps, auc=res.auc, **{"tpr_at_0.001_fpr": res.tpr_at_low_fpr}, status="ok")
        detail.update(epsilon=eps, auc=res.auc, tpr_at_low_fpr=res.tpr_at_low_fpr,
                      auc_non_collective=res.auc_clean, tpr_at_low_fpr_non_collective=res.tpr_at_low_fpr_clean,
                      fully_covered=res.covered, status="ok")
        if scores_path is not None:
            sink = CsvSink(scores_path, ["score", "is_member", "is_collective"])
            for s, m, c in zip(res.scores, res.is_member, res.is_collective):
                sink.write({"score": float(s), "is_member": int(m), "is_collective": int(c)})
            sink.close()
    except Exception as exc:
        status = f"error: {type(exc).__name__}: {exc}"
        summary["status"] = status
        detail["status"] = status
    return summary, detail


def run_mia(cfg: ExperimentConfig, out: Path | None = None, workers: int | None = None) -> list[dict]:
    out = Path(out or cfg.out)
    summary_sink = CsvSink(out / "mia_summary.csv", MIA_COLUMNS)
    detail_sink = CsvSink(out / "mia_details.csv", MIA_DETAIL_COLUMNS)
    rows = []
    k = 0
    try:
        with _mapper(workers or cfg.workers) as m:
            for r in range(cfg.replicates):
                for sigma, clip in cfg.privacy:
                    for a in cfg.mia.alphas:
                        path = out / "mia_scores" / f"cell_{k:04d}.csv"
                        summary, detail = mia_cell(cfg, a, sigma, clip, r, m, path)
                        summary_sink.write(summary)
                        detail_sink.write(detail)
                        rows.append(summary)
                        k += 1
    finally:
        summary_sink.close()
        detail_sink.close()
    return rows


# ---------------------------------------------------------------- signal export


def _write_pnm(path: Path, img: np.ndarray) -> None:
    h, w, ch = img.shape
    magic = {1: b"P5", 3: b"P6"}.get(ch)
    if magic is None:
        raise ValueError(f"cannot write {ch}-channel images as PGM/PPM")
    pix = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with path.open("wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file written by `export_signals` as (h, w, c) uint8."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    magic, w, h, maxval, body = parts[0], int(parts[1]), int(parts[2]), int(parts[3]), parts[4]
    ch = {b"P5": 1, b"P6": 3}[magic]
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    return np.frombuffer(body[: h * w * ch], dtype=np.uint8).reshape(h, w, ch)


def export_signals(cfg: ExperimentConfig, count: int, out: Path | None = None) -> list[Path]:
    """Write `count` (original, signal) image pairs named NNNN_original.pgm and
    NNNN_signal.pgm (.ppm for colour), from the first rows of the raw dataset.
    Pixel values are rounded and clipped to [0, 255]."""
    if count < 0:
        raise ValueError("count must be >= 0")
    data = load_data(cfg)
    ds = data.full
    if ds.image_shape is None:
        raise ValueError("signal export needs an image-shaped dataset")
    transform = make_transform(cfg, ds)
    out = Path(out or cfg.out)
    count = min(count, len(ds))
    if count == 0:
        return []
    out.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ds.image_shape[2] == 1 else "ppm"
    X = ds.features[:count]
    planted = apply_signal_batch(X, transform)
    written = []
    for i in range(count):
        for tag, row in (("original", X[i]), ("signal", planted[i])):
            p = out / f"{i:04d}_{tag}.{ext}"
            _write_pnm(p, row.reshape(ds.image_shape))
            written.append(p)
    return written


# ---------------------------------------------------------------- plots


def plot_sweep(results_csv, out_svg) -> Path:
    """Mean success against alpha, one line per (sigma, clip)."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    rows = [r for r in read_csv(results_csv) if r["status"] == "ok"]
    if not rows:
        raise ValueError(f"{results_csv} holds no successful rows")
    groups: dict = {}
    for r in rows:
        groups.setdefault((float(r["sigma"]), float(r["clip"])), {}).setdefault(float(r["alpha"]), []).append(float(r["success"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (sigma, clip), by_alpha in sorted(groups.items()):
        alphas = sorted(by_alpha)
        label = "non-private" if sigma == 0 else f"sigma={sigma:g}, C={clip:g}"
        ax.plot(alphas, [np.mean(by_alpha[a]) for a in alphas], marker="o", ms=3, label=label)
    ax.set_xlabel("collective size alpha")
    ax.set_ylabel("success")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_svg = Path(out_svg)
    out_svg.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_svg, format="svg")
    plt.close(fig)
    return out_svg

