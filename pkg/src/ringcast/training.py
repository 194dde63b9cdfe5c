"""Objective, optimization loop, checkpointing, evaluation driver, the
patching-x-fourier ablation matrix, and the autoregressive-mode variant.

The loss is the plain per-element squared error averaged over both
forecast windows, unweighted by latitude (a weighted variant exists
behind a flag).  Training is deterministic
given the two seeds: the model seed fixes initialization, the train seed
fixes data order.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .data import (
    DailySeries,
    DatasetManifest,
    Sample,
    denormalize_values,
    load_series,
    normalize_values,
)
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    NumericalError,
    RolloutFailureError,
    TrainingFailureError,
)
from .geometry import latitude_weights
from .metrics import EvalReport, ForecastCase, evaluate_forecasts
from .model import Forecaster, ForecastPair, ModelConfig, load_checkpoint, save_checkpoint

ABLATION_CELLS = (  # patching x fourier, report row order
    ("grid", False),
    ("circular", False),
    ("grid", True),
    ("circular", True),
)


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.01
    epochs: int = 20
    mode: str = "direct"            # direct | autoregressive
    seed: int = 0                   # data-order seed
    checkpoint_every: int = 0       # extra periodic checkpoints every N epochs
    weighted_loss: bool = False     # latitude-weighted loss; defaults off
    clip_norm: float = 1.0
    eval_stride: int = 1

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.mode not in ("direct", "autoregressive"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")

    def to_kv_lines(self, prefix: str = "train.") -> list[str]:
        return [f"{prefix}{f.name} = {getattr(self, f.name)}" for f in fields(self)]


def loss_terms(preds: tuple[torch.Tensor, ...], targets: tuple[torch.Tensor, ...],
               weights: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over windows of the per-element mean squared error."""
    if len(preds) != len(targets):
        raise ConfigurationError(f"{len(preds)} predictions vs {len(targets)} targets")
    total = 0.0
    for p, t in zip(preds, targets):
        if p.shape != t.shape:
            raise ConfigurationError(f"prediction shape {tuple(p.shape)} != target {tuple(t.shape)}")
        sq = (p - t) ** 2
        if weights is not None:
            sq = sq * weights.reshape(1, -1, 1, 1)
        total = total + sq.mean()
    return total / len(preds)


def loss(pred: ForecastPair, target: Sample) -> float:
    """Scalar objective for one forecast pair, in the target's units."""
    p34 = torch.from_numpy(np.asarray(pred.weeks34, dtype=np.float64))
    p56 = torch.from_numpy(np.asarray(pred.weeks56, dtype=np.float64))
    t34 = torch.from_numpy(np.asarray(target.target34, dtype=np.float64))
    t56 = torch.from_numpy(np.asarray(target.target56, dtype=np.float64))
    return float(loss_terms((p34.unsqueeze(0), p56.unsqueeze(0)),
                            (t34.unsqueeze(0), t56.unsqueeze(0))))


@dataclass
class TrainResult:
    history: list[tuple[int, str, float]]
    best_epoch: int
    best_checkpoint: Path
    last_checkpoint: Path
    history_path: Path | None = None


def _history_line(epoch: int, split: str, value: float) -> str:
    return f"epoch={epoch} split={split} loss={value!r}"


def _training_arrays(series: DailySeries, manifest: DatasetManifest, split: str,
                     mode: str) -> tuple[np.ndarray, list[np.ndarray]]:
    """Normalized (inputs, targets-per-window) arrays for one split."""
    stats = manifest.stats
    if not stats:
        raise ConfigurationError("manifest carries no normalization stats; rebuild it")
    names = series.var_names
    if mode == "direct":
        inits = manifest.usable_init_dates(split)
        xs, t34s, t56s = [], [], []
        for d in inits:
            x, t34, t56 = series.sample_arrays(d)
            xs.append(x)
            t34s.append(t34)
            t56s.append(t56)
        if not xs:
            return np.empty((0,) + series.values.shape[1:], dtype=np.float32), []
        x = normalize_values(np.stack(xs), names, stats).astype(np.float32)
        y34 = normalize_values(np.stack(t34s), names, stats).astype(np.float32)
        y56 = normalize_values(np.stack(t56s), names, stats).astype(np.float32)
        return x, [y34, y56]
    # autoregressive: next-day pairs
    xs, ys = [], []
    for d in manifest.split_dates(split):
        nxt = d + datetime.timedelta(days=1)
        if nxt in series._index:
            xs.append(series.values[series.index_of(d)])
            ys.append(series.values[series.index_of(nxt)])
    if not xs:
        return np.empty((0,) + series.values.shape[1:], dtype=np.float32), []
    x = normalize_values(np.stack(xs), names, stats).astype(np.float32)
    y = normalize_values(np.stack(ys), names, stats).astype(np.float32)
    return x, [y]


def _epoch_loss(model, x, targets, batch_size, weights) -> float:
    """Mean objective over a split without gradient tracking."""
    losses = []
    with torch.no_grad():
        for lo in range(0, x.shape[0], batch_size):
            xb = torch.from_numpy(x[lo: lo + batch_size])
            tb = [torch.from_numpy(t[lo: lo + batch_size]) for t in targets]
            losses.append(float(loss_terms(model(xb), tb, weights)) * xb.shape[0])
    return sum(losses) / x.shape[0]


def train(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir, series: DailySeries | None = None) -> TrainResult:
    """Fit a model on the manifest's train split.

    Writes best.ckpt (lowest validation loss), last.ckpt, and an
    append-only loss_history.log under out_dir.
    """
    train_cfg.validate()
    model_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if series is None:
        series = load_series(manifest)
    windows = 2 if train_cfg.mode == "direct" else 1
    model = Forecaster(model_cfg, series.grid, series.var_names, output_windows=windows)
    x_train, t_train = _training_arrays(series, manifest, "train", train_cfg.mode)
    if x_train.shape[0] == 0:
        raise ConfigurationError("train split has no usable samples")
    has_val = "val" in manifest.splits
    if has_val:
        x_val, t_val = _training_arrays(series, manifest, "val", train_cfg.mode)
        has_val = x_val.shape[0] > 0

    weights = None
    if train_cfg.weighted_loss:
        weights = torch.from_numpy(latitude_weights(series.grid).astype(np.float32))

    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    order_rng = np.random.default_rng(train_cfg.seed)
    history: list[tuple[int, str, float]] = []
    history_path = out_dir / "loss_history.log"
    history_path.write_text("")
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    best_val = float("inf")
    best_epoch = 0
    save_checkpoint(best_path, model)  # epoch-0 fallback when epochs == 0

    def log(epoch, split, value):
        history.append((epoch, split, value))
        with open(history_path, "a") as f:
            f.write(_history_line(epoch, split, value) + "\n")

    step = 0
    n = x_train.shape[0]
    if train_cfg.epochs > 0:
        # pre-training baseline: the "initial value" that loss ratios
        # are measured against
        model.eval()
        log(0, "train", _epoch_loss(model, x_train, t_train, train_cfg.batch_size, weights))
        if has_val:
            log(0, "val", _epoch_loss(model, x_val, t_val, train_cfg.batch_size, weights))
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        perm = order_rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, train_cfg.batch_size):
            idx = perm[lo: lo + train_cfg.batch_size]
            xb = torch.from_numpy(x_train[idx])
            tb = [torch.from_numpy(t[idx]) for t in t_train]
            step += 1
            optimizer.zero_grad()
            try:
                batch_loss = loss_terms(model(xb), tb, weights)
            except NumericalError as e:
                raise TrainingFailureError(
                    f"training diverged at step {step} ({e})", step=step) from e
            value = float(batch_loss.detach())
            if not np.isfinite(value):
                raise TrainingFailureError(
                    f"training loss became non-finite at step {step}", step=step)
            batch_loss.backward()
            if train_cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.clip_norm)
            optimizer.step()
            epoch_losses.append(value * len(idx))
        model.eval()
        log(epoch, "train", sum(epoch_losses) / n)
        if has_val:
            val_loss = _epoch_loss(model, x_val, t_val, train_cfg.batch_size, weights)
            log(epoch, "val", val_loss)
            selector = val_loss
        else:
            selector = history[-1][2]
        if selector < best_val:
            best_val = selector
            best_epoch = epoch
            save_checkpoint(best_path, model)
        if train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"epoch{epoch:04d}.ckpt", model)
    save_checkpoint(last_path, model)
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_checkpoint=best_path, last_checkpoint=last_path,
                       history_path=history_path)


def rollout(model, initial_values, days: int) -> np.ndarray:
    """Iterate a next-day model for `days` steps; returns (days, H, W, K).

    Index i holds the model's prediction for day offset i+1 from the
    initial day, all in the model's (normalized) space.
    """
    x = torch.from_numpy(np.asarray(initial_values, dtype=np.float32)).unsqueeze(0)
    states = []
    with torch.no_grad():
        for i in range(days):
            out = model(x)
            x = out[0]
            if not torch.isfinite(x).all():
                raise RolloutFailureError(
                    f"rollout produced non-finite state at step {i + 1}", step=i + 1)
            states.append(x[0].numpy().copy())
    return np.stack(states) if states else np.empty((0,) + initial_values.shape)


def rollout_windows(model, initial_values, horizon: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """Bi-weekly means of an autoregressive rollout, mirroring the direct
    head's two windows (day offsets 14..27 and 28..41)."""
    states = rollout(model, initial_values, horizon - 1)
    return states[13:27].mean(axis=0), states[27:41].mean(axis=0)


def forecast_cases(manifest: DatasetManifest, model: Forecaster, split: str = "test",
                   stride: int = 1, series: DailySeries | None = None) -> list[ForecastCase]:
    """Model forecasts in physical units, paired with truth targets."""
    if series is None:
        series = load_series(manifest)
    stats = manifest.stats
    if not stats:
        raise ConfigurationError("manifest carries no normalization stats")
    names = series.var_names
    inits = manifest.usable_init_dates(split)[::max(1, stride)]
    if not inits:
        raise DegenerateInputError(f"split {split!r} has no usable init dates")
    cases = []
    for d in inits:
        x, t34, t56 = series.sample_arrays(d)
        xn = normalize_values(x, names, stats).astype(np.float32)
        if model.output_windows == 2:
            with torch.no_grad():
                y34, y56 = model(torch.from_numpy(xn).unsqueeze(0))
            p34 = y34[0].numpy()
            p56 = y56[0].numpy()
        else:
            p34, p56 = rollout_windows(model, xn)
        cases.append(ForecastCase(
            init_date=d,
            pred34=denormalize_values(p34.astype(np.float64), names, stats),
            pred56=denormalize_values(p56.astype(np.float64), names, stats),
            truth34=np.asarray(t34, dtype=np.float64),
            truth56=np.asarray(t56, dtype=np.float64),
        ))
    return cases


def evaluate_model(manifest: DatasetManifest, model: Forecaster, split: str = "test",
                   stride: int = 1, bands=(), regions=None, monthly: bool = False,
                   error_map_vars=(), series: DailySeries | None = None) -> EvalReport:
    cases = forecast_cases(manifest, model, split=split, stride=stride, series=series)
    report = evaluate_forecasts(
        cases, manifest.grid(), manifest.var_names, manifest.load_climatology(),
        bands=bands, regions=regions, monthly=monthly, error_map_vars=error_map_vars)
    report.metadata["split"] = split
    report.metadata["stride"] = str(stride)
    return report


# ---------------------------------------------------------------------------
# ablation matrix (patching x fourier)

@dataclass
class AblationCellResult:
    patching: str
    fourier: bool
    seed: int
    report: EvalReport


@dataclass
class AblationReport:
    cells: list[AblationCellResult] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def mean_rmse(self, patching: str, fourier: bool, seed: int | None = None) -> float:
        vals = [c.report.mean_rmse() for c in self.cells
                if c.patching == patching and c.fourier == fourier
                and (seed is None or c.seed == seed)]
        if not vals:
            raise KeyError((patching, fourier, seed))
        return float(np.mean(vals))

    def winner_by_seed(self) -> dict[int, tuple[str, bool]]:
        seeds = sorted({c.seed for c in self.cells})
        out = {}
        for s in seeds:
            out[s] = min(ABLATION_CELLS, key=lambda pf: self.mean_rmse(pf[0], pf[1], s))
        return out

    def to_table_text(self) -> str:
        variables = sorted({r.variable for c in self.cells for r in c.report.records})
        seeds = sorted({c.seed for c in self.cells})
        lines = [f"# seeds = {','.join(str(s) for s in seeds)}"]
        for key, value in sorted(self.metadata.items()):
            lines.append(f"# {key} = {value}")
        header = ["window", "patching", "fourier", "metric"] + variables + ["mean"]
        lines.append("\t".join(header))
        for window in ("weeks34", "weeks56"):
            for patching, fourier in ABLATION_CELLS:
                group = [c for c in self.cells if (c.patching, c.fourier) == (patching, fourier)]
                for metric in ("rmse", "acc"):
                    row = [window, patching, "on" if fourier else "off", metric]
                    all_vals = []
                    for var in variables:
                        vals = [getattr(c.report.lookup(window, var), metric) for c in group]
                        all_vals.extend(vals)
                        row.append(_mean_spread(vals))
                    row.append(_mean_spread(all_vals))
                    lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def _mean_spread(vals) -> str:
    mean = float(np.mean(vals))
    spread = float(np.max(vals) - np.min(vals)) if len(vals) > 1 else 0.0
    return f"{mean:.6g}±{spread:.3g}" if spread else f"{mean:.6g}"


def run_ablation_matrix(manifest: DatasetManifest, base_cfg: ModelConfig,
                        train_cfg: TrainConfig, out_dir, seeds=(0,),
                        series: DailySeries | None = None) -> AblationReport:
    """Train and evaluate {grid, circular} x {fourier off, on} under
    identical seeds and budgets.

    Each cell gets its own directory; a finished cell leaves a
    result.table file and is skipped on rerun, so interrupted matrices
    resume from completed cells.
    """
    if base_cfg.patching_mode == "grid" or base_cfg.grid_patch_deg is None:
        raise ConfigurationError("ablation base config must set grid_patch_deg "
                                 "and leave patching_mode=circular")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if series is None:
        series = load_series(manifest)
    report = AblationReport()
    report.metadata["epochs"] = str(train_cfg.epochs)
    report.metadata["model_seed_base"] = str(base_cfg.seed)
    for seed in seeds:
        for patching, fourier in ABLATION_CELLS:
            cell_name = f"{patching}_{'fourier' if fourier else 'plain'}_seed{seed}"
            cell_dir = out_dir / cell_name
            result_path = cell_dir / "result.table"
            if result_path.exists():
                cell_report = EvalReport.from_table_text(result_path.read_text())
            else:
                cfg = ModelConfig(**{**base_cfg.__dict__,
                                     "patching_mode": patching,
                                     "use_fourier": fourier,
                                     "seed": base_cfg.seed + seed})
                cell_train = TrainConfig(**{**train_cfg.__dict__, "seed": train_cfg.seed + seed})
                result = train(manifest, cfg, cell_train, cell_dir, series=series)
                model = load_checkpoint(result.best_checkpoint)
                cell_report = evaluate_model(manifest, model, split="test",
                                             stride=train_cfg.eval_stride, series=series)
                result_path.write_text(cell_report.to_table_text())
            report.cells.append(AblationCellResult(patching, fourier, seed, cell_report))
    return report
