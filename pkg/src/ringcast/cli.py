"""Command-line entry point: data-gen, train, eval, plot, ablate.

Every run resolves its configuration once (flag > config file > default),
freezes it as config.txt in the output directory, and can be rerun
bitwise-identically with --from-config.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import datetime
import functools
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .data import (
    DatasetManifest,
    default_synthetic_splits,
    import_directory,
    load_tensor,
    save_tensor,
    synth_generate,
)
from .errors import ConfigurationError, DataError, RingcastError
from .geometry import make_graticule
from .metrics import REGION_PRESETS, EvalReport
from .model import ModelConfig, load_checkpoint
from .training import TrainConfig, evaluate_model, run_ablation_matrix, train

OUTPUT_ROOT_ENV = "RINGCAST_OUTPUT_ROOT"


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RingcastError as e:
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            sys.exit(e.exit_code)
        except OSError as e:
            click.echo(f"error: OSError: {e}", err=True)
            sys.exit(3)
    return wrapper


def _read_kv_file(path) -> dict[str, str]:
    kv = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#") or "=" not in ln:
            continue
        key, value = ln.split("=", 1)
        kv[key.strip()] = value.strip()
    return kv


def _resolve(ctx, kv: dict[str, str], command: str):
    """Apply flag > config file > default precedence to every option."""
    from click.core import ParameterSource

    resolved = {}
    for name, value in ctx.params.items():
        if name == "from_config":
            continue
        source = ctx.get_parameter_source(name)
        if source == ParameterSource.COMMANDLINE or f"{command}.{name}" not in kv:
            resolved[name] = value
            continue
        raw = kv[f"{command}.{name}"]
        if raw == "none":
            resolved[name] = None
        elif isinstance(value, bool):
            resolved[name] = raw in ("True", "true", "1")
        elif isinstance(value, int) and not isinstance(value, bool):
            resolved[name] = int(raw)
        elif isinstance(value, float):
            resolved[name] = float(raw)
        elif isinstance(value, tuple):
            resolved[name] = tuple(x for x in raw.split(",") if x)
        else:
            resolved[name] = raw
    return resolved


def _freeze(out_dir: Path, command: str, resolved: dict) -> None:
    lines = [f"version = {__version__}", f"command = {command}"]
    for name in sorted(resolved):
        value = resolved[name]
        if isinstance(value, tuple):
            value = ",".join(str(x) for x in value)
        lines.append(f"{command}.{name} = {'none' if value is None else value}")
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def _out_dir(out: str | None, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if not root:
            raise ConfigurationError(
                f"--out not given and {OUTPUT_ROOT_ENV} is not set")
        path = Path(root) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(value, flag: str):
    if value is None:
        raise ConfigurationError(f"{flag} is required (flag or config file)")
    return value


def _load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path} (--manifest)")
    return DatasetManifest.read(path)


@click.group()
@click.version_option(__version__)
def cli():
    """Subseasonal forecasting with latitude-ring tokens."""


def from_config_option(fn):
    return click.option("--from-config", type=str, default=None,
                        help="Key-value config file from a previous run.")(fn)


# --------------------------------------------------------------------------
@cli.command("data-gen")
@click.option("--lat-res", type=float, default=30.0, show_default=True)
@click.option("--lon-res", type=float, default=30.0, show_default=True)
@click.option("--vars", "num_vars", type=int, default=2, show_default=True)
@click.option("--days", type=int, default=400, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--noise", type=float, default=0.02, show_default=True)
@click.option("--waves", type=int, default=2, show_default=True,
              help="Zonal waves per variable.")
@click.option("--start-date", type=str, default="2000-01-01", show_default=True)
@click.option("--out", type=str, default=None)
@from_config_option
@click.pass_context
@handle_errors
def cmd_data_gen(ctx, **_):
    """Generate a synthetic daily dataset and its manifest."""
    kv = _read_kv_file(ctx.params["from_config"]) if ctx.params["from_config"] else {}
    p = _resolve(ctx, kv, "data-gen")
    out = _out_dir(p["out"], "data-gen")
    p["out"] = str(out)
    if p["days"] < 43:
        click.echo(f"warning: {p['days']} days leave zero trainable samples "
                   "(each needs 42 follow-on days)", err=True)
    grid = make_graticule(p["lat_res"], p["lon_res"])
    states = synth_generate(grid, p["num_vars"], p["days"], seed=p["seed"],
                            noise_amp=p["noise"], num_waves=p["waves"],
                            start_date=datetime.date.fromisoformat(p["start_date"]))
    days_dir = out / "days"
    days_dir.mkdir(exist_ok=True)
    for st in states:
        save_tensor(days_dir / f"{st.valid_time.isoformat()}.rct", st.values)
    splits = default_synthetic_splits([st.valid_time for st in states])
    manifest = import_directory(out, [f"f{i}" for i in range(p["num_vars"])],
                                p["lat_res"], p["lon_res"], splits=splits)
    _freeze(out, "data-gen", p)
    click.echo(f"wrote {len(states)} days and manifest to {out}")
    click.echo(f"usable train inits: {len(manifest.usable_init_dates('train'))}")


# --------------------------------------------------------------------------
def model_options(fn):
    for deco in reversed([
        click.option("--hidden-dim", type=int, default=256, show_default=True),
        click.option("--layers", type=int, default=8, show_default=True),
        click.option("--heads", type=int, default=16, show_default=True),
        click.option("--patching", type=click.Choice(["circular", "grid"]),
                     default="circular", show_default=True),
        click.option("--grid-patch-deg", type=float, default=None),
        click.option("--fourier/--no-fourier", default=True, show_default=True),
        click.option("--head-dim-mode", type=click.Choice(["split", "full"]),
                     default="split", show_default=True),
        click.option("--scale-mode", type=click.Choice(["per_head", "hidden_dim"]),
                     default="per_head", show_default=True),
        click.option("--model-seed", type=int, default=0, show_default=True),
    ]):
        fn = deco(fn)
    return fn


def train_options(fn):
    for deco in reversed([
        click.option("--batch-size", type=int, default=16, show_default=True),
        click.option("--lr", type=float, default=0.01, show_default=True),
        click.option("--epochs", type=int, default=20, show_default=True),
        click.option("--mode", type=click.Choice(["direct", "autoregressive"]),
                     default="direct", show_default=True),
        click.option("--seed", type=int, default=0, show_default=True,
                     help="Data-order seed."),
        click.option("--checkpoint-every", type=int, default=0, show_default=True),
        click.option("--weighted-loss", is_flag=True, default=False),
    ]):
        fn = deco(fn)
    return fn


def _model_cfg(p) -> ModelConfig:
    cfg = ModelConfig(
        hidden_dim=p["hidden_dim"], num_layers=p["layers"], num_heads=p["heads"],
        patching_mode=p["patching"], grid_patch_deg=p["grid_patch_deg"],
        use_fourier=p["fourier"], head_dim_mode=p["head_dim_mode"],
        attn_scale_mode=p["scale_mode"], seed=p["model_seed"])
    cfg.validate()
    return cfg


def _train_cfg(p) -> TrainConfig:
    cfg = TrainConfig(
        batch_size=p["batch_size"], learning_rate=p["lr"], epochs=p["epochs"],
        mode=p["mode"], seed=p["seed"], checkpoint_every=p["checkpoint_every"],
        weighted_loss=p["weighted_loss"])
    cfg.validate()
    return cfg


@cli.command("train")
@click.option("--manifest", type=str, default=None)
@click.option("--out", type=str, default=None)
@model_options
@train_options
@from_config_option
@click.pass_context
@handle_errors
def cmd_train(ctx, **_):
    """Train a model on a manifest's train split."""
    kv = _read_kv_file(ctx.params["from_config"]) if ctx.params["from_config"] else {}
    p = _resolve(ctx, kv, "train")
    out = _out_dir(p["out"], "train")
    p["out"] = str(out)
    manifest = _load_manifest(_require(p["manifest"], "--manifest"))
    _freeze(out, "train", p)
    result = train(manifest, _model_cfg(p), _train_cfg(p), out)
    click.echo(f"trained {p['epochs']} epochs; best epoch {result.best_epoch}")
    click.echo(f"best checkpoint: {result.best_checkpoint}")
    click.echo(f"loss history: {result.history_path}")


# --------------------------------------------------------------------------
@cli.command("eval")
@click.option("--checkpoint", type=str, default=None)
@click.option("--manifest", type=str, default=None)
@click.option("--split", type=str, default="test", show_default=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--bands", type=str, default="", help="Comma list: low,mid,high")
@click.option("--region", "regions", type=str, multiple=True,
              help=f"Named regions: {', '.join(sorted(REGION_PRESETS))}")
@click.option("--monthly", is_flag=True, default=False)
@click.option("--error-map", "error_maps", type=str, multiple=True,
              help="Variables to emit per-point RMSE maps for.")
@click.option("--out", type=str, default=None)
@from_config_option
@click.pass_context
@handle_errors
def cmd_eval(ctx, **_):
    """Evaluate a checkpoint on a manifest split."""
    kv = _read_kv_file(ctx.params["from_config"]) if ctx.params["from_config"] else {}
    p = _resolve(ctx, kv, "eval")
    out = _out_dir(p["out"], "eval")
    p["out"] = str(out)
    manifest = _load_manifest(_require(p["manifest"], "--manifest"))
    ckpt = Path(_require(p["checkpoint"], "--checkpoint"))
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt} (--checkpoint)")
    model = load_checkpoint(ckpt, expect={
        "data.lat_res_deg": repr(manifest.lat_res_deg),
        "data.lon_res_deg": repr(manifest.lon_res_deg),
        "data.vars": ",".join(manifest.var_names),
    })
    bands = tuple(b for b in p["bands"].split(",") if b)
    regions = {}
    for name in p["regions"]:
        if name not in REGION_PRESETS:
            raise ConfigurationError(
                f"unknown region {name!r}; available: {sorted(REGION_PRESETS)}")
        regions[name] = REGION_PRESETS[name]
    _freeze(out, "eval", p)
    report = evaluate_model(manifest, model, split=p["split"], stride=p["stride"],
                            bands=bands, regions=regions, monthly=p["monthly"],
                            error_map_vars=tuple(p["error_maps"]))
    table = report.to_table_text()
    (out / "report.table").write_text(table)
    (out / "report.kv").write_text(report.to_keyvalue_text())
    for (window, var), emap in report.error_maps.items():
        save_tensor(out / f"error_map_{var}_{window}.rct", emap[..., None].astype(np.float32))
    click.echo(table, nl=False)
    click.echo(f"report written to {out / 'report.table'}")


# --------------------------------------------------------------------------
@cli.command("plot")
@click.option("--error-map", "error_maps", type=str, multiple=True,
              help="error_map_*.rct tensor files.")
@click.option("--monthly-report", type=str, default=None,
              help="report.table with month slices.")
@click.option("--report", type=str, default=None,
              help="report.table for the summary heat map.")
@click.option("--out", type=str, default=None)
@from_config_option
@click.pass_context
@handle_errors
def cmd_plot(ctx, **_):
    """Render report files into image files."""
    from . import figures

    kv = _read_kv_file(ctx.params["from_config"]) if ctx.params["from_config"] else {}
    p = _resolve(ctx, kv, "plot")
    out = _out_dir(p["out"], "plot")
    p["out"] = str(out)
    if not (p["error_maps"] or p["monthly_report"] or p["report"]):
        raise ConfigurationError(
            "nothing to plot: pass --error-map, --monthly-report, or --report")
    _freeze(out, "plot", p)
    written = []
    for path in p["error_maps"]:
        path = Path(path)
        if not path.exists():
            raise DataError(f"error-map file not found: {path} (--error-map)")
        values = load_tensor(path)
        h, w = values.shape[:2]
        grid = make_graticule(180.0 / (h - 1) if h > 1 else 180.0, 360.0 / w)
        target = out / (path.stem + ".png")
        figures.plot_error_map(values, grid, target, title=path.stem)
        written.append(target)
    if p["monthly_report"]:
        path = Path(p["monthly_report"])
        if not path.exists():
            raise DataError(f"monthly report not found: {path} (--monthly-report)")
        report = EvalReport.from_table_text(path.read_text())
        target = out / "monthly_rmse.png"
        figures.plot_monthly_rmse(report, target)
        written.append(target)
    if p["report"]:
        path = Path(p["report"])
        if not path.exists():
            raise DataError(f"report not found: {path} (--report)")
        report = EvalReport.from_table_text(path.read_text())
        if not report.records:
            raise ConfigurationError(f"report {path} has no records; nothing to plot")
        for metric in ("rmse", "acc"):
            target = out / f"summary_{metric}.png"
            figures.plot_report_heatmap(report, target, metric=metric)
            written.append(target)
    for path in written:
        click.echo(f"wrote {path}")


# --------------------------------------------------------------------------
@cli.command("ablate")
@click.option("--manifest", type=str, default=None)
@click.option("--seeds", type=int, default=3, show_default=True)
@click.option("--eval-stride", type=int, default=1, show_default=True)
@click.option("--out", type=str, default=None)
@model_options
@train_options
@from_config_option
@click.pass_context
@handle_errors
def cmd_ablate(ctx, **_):
    """Run the patching x fourier ablation matrix."""
    kv = _read_kv_file(ctx.params["from_config"]) if ctx.params["from_config"] else {}
    p = _resolve(ctx, kv, "ablate")
    out = _out_dir(p["out"], "ablate")
    p["out"] = str(out)
    manifest = _load_manifest(_require(p["manifest"], "--manifest"))
    if p["grid_patch_deg"] is None:
        raise ConfigurationError("--grid-patch-deg is required for the grid cells")
    base_cfg = _model_cfg({**p, "patching": "circular", "fourier": True})
    train_cfg = _train_cfg(p)
    train_cfg.eval_stride = p["eval_stride"]
    _freeze(out, "ablate", p)
    report = run_ablation_matrix(manifest, base_cfg, train_cfg, out,
                                 seeds=tuple(range(p["seeds"])))
    table = report.to_table_text()
    (out / "ablation.table").write_text(table)
    click.echo(table, nl=False)
    for seed, (patching, fourier) in sorted(report.winner_by_seed().items()):
        click.echo(f"seed {seed}: best mean test RMSE = {patching} "
                   f"fourier={'on' if fourier else 'off'}")


def main():
    cli(prog_name="ringcast")


if __name__ == "__main__":
    main()
