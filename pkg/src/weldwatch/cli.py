"""Command line entry points wrapping the pipelines.

Every subcommand is reproducible from its flags and seed: rerunning with
the same arguments yields bit-identical checkpoints and identical metrics.
Exit codes: 0 ok, 1 runtime failure, 2 usage error. ``--json`` switches to
machine-readable output for scripting.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import replace

import click
import numpy as np

from . import benchmark, pipeline
from .continual import ContinualConfig, continual_update
from .model_io import checkpoint_load, checkpoint_save
from .nn import TrainConfig
from .signal import ProcessParams, QualityLabel
from .simulator import SimConfig, simulate_weld
from .store import WeldStore, data_dir, read_series


def _fail(ctx: click.Context, message: str) -> None:
    if ctx.obj.get("json"):
        click.echo(json.dumps({"error": message}))
    else:
        click.echo(f"error: {message}", err=True)
    ctx.exit(1)


def runtime_errors(fn):
    """Map runtime exceptions to exit code 1 with a message."""

    @functools.wraps(fn)
    def wrapper(ctx, *args, **kwargs):
        try:
            return fn(ctx, *args, **kwargs)
        except (click.exceptions.Exit, click.ClickException):
            raise  # usage errors keep click's exit code 2
        except Exception as e:  # noqa: BLE001 - CLI boundary
            _fail(ctx, str(e))

    return wrapper


def _emit(ctx: click.Context, payload: dict, human: str) -> None:
    if ctx.obj.get("json"):
        click.echo(json.dumps(payload))
    else:
        click.echo(human)


@click.group()
@click.option("--data-dir", "data_dir_flag", default=None,
              help="Data directory (overrides WELDWATCH_DATA_DIR).")
@click.option("--json", "json_mode", is_flag=True, help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, data_dir_flag, json_mode) -> None:
    """Predictive weld-quality toolkit."""
    ctx.obj = {"data_dir": data_dir(data_dir_flag), "json": json_mode}


def _parse_sweep(spec: str) -> tuple[str, float, float]:
    try:
        name, lo, hi = spec.split(":")
        lo_f, hi_f = float(lo), float(hi)
    except ValueError:
        raise click.BadParameter(f"expected param:lo:hi, got {spec!r}")
    if name not in ProcessParams.NUMERIC_FIELDS:
        raise click.BadParameter(
            f"unknown parameter {name!r}; choose from {ProcessParams.NUMERIC_FIELDS}")
    return name, lo_f, hi_f


@main.command()
@click.option("--welds", "n_welds", default=10, show_default=True)
@click.option("--duration", default=2.0, show_default=True, help="Seconds per weld.")
@click.option("--sweep", "sweeps", multiple=True, metavar="PARAM:LO:HI",
              help="Vary a process parameter linearly across welds (repeatable).")
@click.option("--seed", default=0, show_default=True)
@click.option("--nok-fraction", default=0.5, show_default=True,
              help="Fraction of welds simulated with a heavy anomaly rate.")
@click.option("--anomaly-prob", default=0.25, show_default=True)
@click.option("--ok-anomaly-prob", default=0.08, show_default=True)
@click.option("--equipment-id", default="rig-0", show_default=True)
@click.option("--prefix", default="weld", show_default=True, help="Weld id prefix.")
@click.option("--manifest", "manifest_path", default=None,
              help="Manifest output path [default: <data-dir>/manifest.jsonl].")
@click.pass_context
@runtime_errors
def simulate(ctx, n_welds, duration, sweeps, seed, nok_fraction, anomaly_prob,
             ok_anomaly_prob, equipment_id, prefix, manifest_path) -> None:
    """Generate labeled synthetic welds and a dataset manifest."""
    store = WeldStore(ctx.obj["data_dir"])
    manifest_path = manifest_path or f"{store.root}/manifest.jsonl"
    sweep_specs = [_parse_sweep(s) for s in sweeps]
    rng = np.random.Generator(np.random.PCG64(seed))

    entries = []
    for k in range(n_welds):
        weld_id = f"{prefix}-{seed}-{k:04d}"
        frac = k / max(1, n_welds - 1)
        params = ProcessParams(equipment_id=equipment_id)
        for name, lo, hi in sweep_specs:
            params = replace(params, **{name: lo + frac * (hi - lo)})
        nok = rng.random() < nok_fraction
        cfg = SimConfig(
            params=params,
            missed_detachment_prob=anomaly_prob if nok else ok_anomaly_prob,
            rng_seed=int(rng.integers(0, 2**31)),
        )
        series, _, label = simulate_weld(cfg, duration, weld_id=weld_id)
        writer = store.open_writer(weld_id, cfg.sample_rate_hz)
        writer.append(series.current, series.voltage)
        store.close_weld(weld_id, writer, params=params, label=label)
        entries.append({
            "weld_id": weld_id,
            "sim": cfg.to_dict(),
            "label": label.value,
            "series_path": store.series_path(weld_id),
        })

    with open(manifest_path, "w") as fp:
        for e in entries:
            fp.write(json.dumps(e) + "\n")
    labels = [e["label"] for e in entries]
    _emit(ctx, {"manifest": manifest_path, "welds": len(entries),
                "nok": labels.count("NOK")},
          f"wrote {len(entries)} welds ({labels.count('NOK')} NOK) "
          f"to {store.root}\nmanifest: {manifest_path}")


def load_manifest(path: str) -> list[pipeline.WeldCycles]:
    """Read a dataset manifest and segment every listed weld."""
    welds = []
    with open(path) as fp:
        for line in fp:
            if not line.strip():
                continue
            e = json.loads(line)
            cfg = SimConfig.from_dict(e["sim"])
            series = read_series(e["series_path"]).series
            welds.append(pipeline.prepare_weld(
                series, cfg.params, QualityLabel(e["label"])))
    if not welds:
        raise ValueError(f"manifest {path!r} lists no welds")
    return welds


@main.command()
@click.option("--manifest", "manifest_path", required=True)
@click.option("--out", "out_path", required=True, help="Checkpoint output path.")
@click.option("--seed", default=0, show_default=True)
@click.option("--ae-epochs", default=10, show_default=True)
@click.option("--clf-epochs", default=30, show_default=True)
@click.option("--holdout", default=0.2, show_default=True)
@click.pass_context
@runtime_errors
def train(ctx, manifest_path, out_path, seed, ae_epochs, clf_epochs, holdout) -> None:
    """Train autoencoder then classifier; save a checkpoint."""
    welds = load_manifest(manifest_path)
    res = pipeline.train_initial_model(
        welds,
        ae_cfg=TrainConfig(epochs=ae_epochs, lr=1e-3, seed=seed),
        clf_cfg=TrainConfig(epochs=clf_epochs, lr=3e-3, seed=seed),
        holdout_fraction=holdout,
        seed=seed,
    )
    checkpoint_save(res.bundle, out_path)
    payload = {
        "checkpoint": out_path,
        "ae_loss": res.ae_history,
        "clf_loss": res.clf_history,
        "train_accuracy": res.train_accuracy,
        "holdout_accuracy": res.holdout_accuracy,
    }
    lines = [f"autoencoder loss: {' '.join(f'{v:.4g}' for v in res.ae_history)}",
             f"classifier loss:  {' '.join(f'{v:.4g}' for v in res.clf_history)}",
             f"train accuracy:   {res.train_accuracy:.3f}",
             f"holdout accuracy: {res.holdout_accuracy:.3f}",
             f"saved {out_path}"]
    _emit(ctx, payload, "\n".join(lines))


@main.command("eval")
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--manifest", "manifest_path", required=True)
@click.option("--csv", "csv_path", default=None, help="Per-weld p_ok CSV output.")
@click.pass_context
@runtime_errors
def eval_cmd(ctx, ckpt_path, manifest_path, csv_path) -> None:
    """Evaluate a checkpoint on a manifest."""
    bundle = checkpoint_load(ckpt_path)
    welds = load_manifest(manifest_path)
    res = pipeline.evaluate(bundle, welds)
    cm = res["confusion"]
    csv_lines = ["weld_id,p_ok"] + [f"{k},{v:.6f}"
                                    for k, v in sorted(res["per_weld_p_ok"].items())]
    if csv_path:
        with open(csv_path, "w") as fp:
            fp.write("\n".join(csv_lines) + "\n")
    payload = {
        "accuracy": res["accuracy"],
        "confusion": cm.tolist(),
        "per_weld_p_ok": res["per_weld_p_ok"],
        "n_sequences": res["n_sequences"],
    }
    lines = [f"accuracy: {res['accuracy']:.3f} over {res['n_sequences']} sequences",
             "confusion (rows true OK,NOK / cols pred OK,NOK):",
             f"  {cm[0, 0]:5d} {cm[0, 1]:5d}",
             f"  {cm[1, 0]:5d} {cm[1, 1]:5d}"]
    if csv_path:
        lines.append(f"per-weld p_ok written to {csv_path}")
    else:
        lines.extend(csv_lines)
    _emit(ctx, payload, "\n".join(lines))


@main.command()
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--manifest", "manifest_path", required=True,
              help="Manifest of the new regime's welds.")
@click.option("--reg", type=click.Choice(["ewc", "mas"]), default="ewc",
              show_default=True)
@click.option("--lambda", "lam", default=100.0, show_default=True)
@click.option("--epochs", default=20, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--task-id", default=None, help="[default: task-<n>]")
@click.option("--out", "out_path", default=None,
              help="[default: <ckpt>.v<new version>]")
@click.pass_context
@runtime_errors
def update(ctx, ckpt_path, manifest_path, reg, lam, epochs, lr, seed,
           task_id, out_path) -> None:
    """Continual update on new welds; writes a new checkpoint version."""
    bundle = checkpoint_load(ckpt_path)
    welds = load_manifest(manifest_path)
    ds = pipeline.build_sequences(welds, bundle.encoder(), bundle.normalizer)
    cfg = ContinualConfig(regularizer=reg, lam=lam,
                          train=TrainConfig(epochs=epochs, lr=lr, seed=seed))
    task_id = task_id or f"task-{len(bundle.snapshots)}"
    continual_update(bundle, ds.X, ds.y, [w.params for w in welds], cfg,
                     task_id=task_id)
    out_path = out_path or f"{ckpt_path}.v{bundle.version}"
    checkpoint_save(bundle, out_path)
    acc = pipeline.accuracy(bundle.classifier, ds)
    _emit(ctx, {"checkpoint": out_path, "version": bundle.version,
                "task_id": task_id, "new_task_accuracy": acc},
          f"model v{bundle.version} ({task_id}) saved to {out_path}\n"
          f"accuracy on update set: {acc:.3f}")


@main.command()
@click.option("--source", default="sim", show_default=True,
              metavar="sim|replay:<weld_id>")
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--listen", default="127.0.0.1:7878", show_default=True)
@click.option("--config", "config_path", default=None,
              help="JSON file with simulator config overrides.")
@click.option("--ui-dir", default=None, help="Serve dashboard assets from this dir.")
@click.option("--reg", type=click.Choice(["ewc", "mas"]), default="ewc",
              show_default=True)
@click.pass_context
@runtime_errors
def serve(ctx, source, ckpt_path, listen, config_path, ui_dir, reg) -> None:
    """Run the live prediction service until interrupted."""
    from .service import PredictionServer  # deferred: socket machinery

    bundle = checkpoint_load(ckpt_path)
    overrides = {}
    if config_path:
        with open(config_path) as fp:
            overrides = json.load(fp)
    sim_cfg = SimConfig.from_dict(overrides)
    host, _, port = listen.rpartition(":")
    store = WeldStore(ctx.obj["data_dir"])
    replay = None
    if source.startswith("replay:"):
        record = store.record(source.split(":", 1)[1])
        replay = read_series(record.series_path).series
    elif source != "sim":
        raise click.BadParameter(f"unknown source {source!r}")
    server = PredictionServer(
        bundle, sim_cfg, host=host or "127.0.0.1", port=int(port),
        update_cfg=ContinualConfig(regularizer=reg),
        checkpoint_dir=ctx.obj["data_dir"], ui_dir=ui_dir,
        store=store, replay=replay,
    )
    click.echo(f"serving on {host or '127.0.0.1'}:{port} (model v{bundle.version})",
               err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


@main.command("bench-forgetting")
@click.option("--reg", type=click.Choice(["ewc", "mas"]), default="ewc",
              show_default=True)
@click.option("--lambda-sweep", default="1,10,100,1000", show_default=True)
@click.option("--welds", "n_welds", default=24, show_default=True)
@click.option("--duration", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@runtime_errors
def bench_forgetting(ctx, reg, lambda_sweep, n_welds, duration, seed) -> None:
    """Two-task forgetting benchmark: naive vs regularized fine-tuning."""
    lambdas = tuple(float(v) for v in lambda_sweep.split(",") if v.strip())
    res = benchmark.run_forgetting_benchmark(
        regularizer=reg, lambdas=lambdas, n_welds=n_welds,
        duration_s=duration, seed=seed)
    payload = {
        "regularizer": reg,
        "initial_task_a_accuracy": res.initial_task_a_accuracy,
        "rows": [{"lambda": r.lam, "task_a": r.task_a_accuracy,
                  "task_b": r.task_b_accuracy} for r in res.rows],
    }
    best = res.best_regularized()
    lines = [f"{reg} | initial task-A accuracy {res.initial_task_a_accuracy:.3f}",
             f"{'lambda':>8}  {'task A':>7}  {'task B':>7}"]
    for r in res.rows:
        tag = " (naive)" if r.lam == 0 else ""
        lines.append(f"{r.lam:8g}  {r.task_a_accuracy:7.3f}  {r.task_b_accuracy:7.3f}{tag}")
    lines.append(f"best regularized: lambda={best.lam:g} "
                 f"(dA {best.task_a_accuracy - res.naive.task_a_accuracy:+.3f}, "
                 f"dB {best.task_b_accuracy - res.naive.task_b_accuracy:+.3f})")
    _emit(ctx, payload, "\n".join(lines))


if __name__ == "__main__":
    sys.exit(main())
