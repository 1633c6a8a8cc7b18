"""Command-line entry points.

``serve`` runs the annotation service; ``adapt`` is a thin HTTP client that
drives a full adaptation session against it (a local in-process instance by
default, any running server via --url).  ``train``, ``eval``, ``bench`` and
``synth`` are batch utilities on top of the library.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adaptation import AdaptationConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .core import LabeledPair
from .data import Dataset, load_dataset, make_synthetic_dataset, save_dataset
from .evaluation import (EvalReport, CheckpointEval, cmc, mean_average_precision,
                         score_all)
from .trainer import TrainerConfig, timed_train


def _load_config(path: str | None) -> AdaptationConfig:
    if path is None:
        return AdaptationConfig()
    return AdaptationConfig.from_dict(json.loads(Path(path).read_text()))


def _ground_truth_pairs(records) -> list[LabeledPair]:
    probes = Dataset.probes(records)
    gallery = Dataset.gallery(records)
    return [LabeledPair(p, g, 1 if p.person_id == g.person_id else -1)
            for p in probes for g in gallery]


@click.group()
@click.version_option(__version__)
def main():
    """Incremental re-identification training with human-in-the-loop labeling."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default="train_out")
@click.option("--deterministic", is_flag=True,
              help="Use the full-gradient reference solver.")
def train(manifest, config_path, seed, out_dir, deterministic):
    """Train a model on the fully labeled training split."""
    cfg = _load_config(config_path)
    dataset = load_dataset(manifest)
    pairs = _ground_truth_pairs(dataset.train_records())
    tcfg = TrainerConfig(alpha=cfg.alpha, beta=cfg.beta, eta=cfg.eta, rho=cfg.rho,
                         epochs=cfg.offline_epochs,
                         iters_per_epoch=cfg.offline_iters,
                         seed=cfg.seed if seed is None else seed)
    click.echo(f"training on {len(pairs)} pairs "
               f"({'deterministic' if deterministic else 'stochastic'}, "
               f"{tcfg.epochs} epochs)")
    result, elapsed = timed_train(pairs, tcfg, deterministic=deterministic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.tma", result.state, tcfg)
    history = [{"epoch": h.epoch, "objective": h.objective,
                "res_K": h.res_K, "res_P": h.res_P} for h in result.history]
    (out / "history.json").write_text(json.dumps(history, indent=2))
    first, last = result.history[0], result.history[-1]
    click.echo(f"objective {first.objective:.4f} -> {last.objective:.4f} "
               f"in {elapsed:.1f}s; checkpoint at {out / 'checkpoint.tma'}")


@main.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default="eval_out")
def eval_cmd(manifest, ckpt_path, out_dir):
    """Evaluate a checkpoint on the test split (CMC + mAP)."""
    dataset = load_dataset(manifest)
    state, _ = load_checkpoint(ckpt_path)
    test = dataset.test_records()
    sm = score_all(state, Dataset.probes(test), Dataset.gallery(test))
    cmc_res = cmc(sm)
    ap = mean_average_precision(sm)
    report = EvalReport([CheckpointEval(
        checkpoint=0, labeled_pairs=0, labeled_percent=100.0,
        cmc=[float(v) for v in cmc_res.curve], map=ap,
        excluded_probes=cmc_res.num_excluded)])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    report.write_cmc_csv(out / "cmc.csv")
    shown = [k for k in (1, 5, 10, 20) if k <= len(cmc_res.curve)]
    click.echo("  ".join(f"rank-{k}: {cmc_res.rank(k):.4f}" for k in shown))
    click.echo(f"mAP: {ap:.4f}  ({cmc_res.num_evaluated} probes, "
               f"{cmc_res.num_excluded} without gallery match)")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--data-dir", type=click.Path(), default="sessions")
@click.option("--manifest", type=click.Path(exists=True),
              help="Create a session for this dataset at startup.")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--ui-dir", type=click.Path(),
              help="Static annotation panel bundle to serve at /ui.")
def serve(host, port, data_dir, manifest, config_path, ui_dir):
    """Run the annotation service."""
    import uvicorn
    from .service import create_app

    app = create_app(data_dir, ui_dir)
    if manifest:
        overrides = _load_config(config_path).to_dict() if config_path else {}
        managed, resumed = app.state.store.create(str(manifest), overrides)
        click.echo(f"session {managed.session_id} "
                   f"({'resumed' if resumed else 'created'}) for {manifest}")
    uvicorn.run(app, host=host, port=port)


def _client(url: str | None, data_dir: str):
    if url:
        import httpx
        return httpx.Client(base_url=url, timeout=600.0)
    from starlette.testclient import TestClient
    from .service import create_app
    return TestClient(create_app(data_dir), raise_server_exceptions=False)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--url", help="Annotation service URL; defaults to in-process.")
@click.option("--out", "out_dir", type=click.Path(), default="adapt_out")
@click.option("--error-rate", type=float, default=0.0,
              help="Simulated annotator mislabeling probability.")
@click.option("--oracle-seed", type=int, default=1234)
@click.option("--poll-interval", type=float, default=0.2)
def adapt(manifest, config_path, url, out_dir, error_rate, oracle_seed, poll_interval):
    """Run a full adaptation session against the service, labeling via a
    simulated annotator that reads ground truth from the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(manifest)
    truth = {}  # (probe_id, gallery_id) -> label
    ids = {r.person_id for r in dataset.train_records()}
    for p in ids:
        for g in ids:
            truth[(p, g)] = 1 if p == g else -1
    rng = np.random.default_rng(oracle_seed)
    overrides = _load_config(config_path).to_dict() if config_path else {}
    manifest_abs = str(Path(manifest).resolve())

    with _client(url, str(out / "sessions")) as client:
        r = client.post("/sessions", json={"manifest": manifest_abs,
                                           "config": overrides})
        if r.status_code != 201:
            raise click.ClickException(f"create session failed: {r.status_code} {r.text}")
        sid = r.json()["session_id"]
        click.echo(f"session {sid}")

        def wait_ready():
            while True:
                doc = client.get(f"/sessions/{sid}/status").json()
                if doc["phase"] == "ready":
                    return doc
                time.sleep(poll_interval)

        doc = wait_ready()
        while doc["current_batch"] is not None:
            batch = doc["current_batch"]
            r = client.get(f"/sessions/{sid}/tasks", params={"batch": batch})
            if r.status_code == 409:  # update still running
                time.sleep(poll_interval)
                doc = wait_ready()
                continue
            r.raise_for_status()
            tasks = r.json()
            if not tasks:
                doc = wait_ready()
                if doc["current_batch"] == batch and doc["phase"] == "ready":
                    break  # nothing selected and no update pending
                continue
            click.echo(f"batch {batch}: labeling {len(tasks)} pairs")
            for task in tasks:
                label = truth[(task["probe_id"], task["gallery_id"])]
                if error_rate > 0 and rng.random() < error_rate:
                    label = -label
                rr = client.post(f"/sessions/{sid}/tasks/{task['task_id']}/label",
                                 json={"label": label, "source": "simulated-noisy"})
                rr.raise_for_status()
            doc = wait_ready()

        report = client.get(f"/sessions/{sid}/report").json()
        status = client.get(f"/sessions/{sid}/status").json()

    (out / "report.json").write_text(json.dumps(report, indent=2))
    (out / "status.json").write_text(json.dumps(status, indent=2))
    EvalReport([CheckpointEval(checkpoint=row["checkpoint"],
                               labeled_pairs=row["labeled_pairs"],
                               labeled_percent=row["labeled_percent"],
                               cmc=row["cmc"], map=row["map"],
                               excluded_probes=row.get("excluded_probes", 0))
                for row in report["rows"]]).write_cmc_csv(out / "cmc.csv")
    click.echo(f"{'batch':>6} {'labeled%':>9} {'rank-1':>7} {'mAP':>7}")
    for row in report["rows"]:
        click.echo(f"{row['checkpoint']:>6} {row['labeled_percent']:>8.2f}% "
                   f"{row['cmc'][0]:>7.4f} {row['map']:>7.4f}")
    click.echo(f"report written to {out / 'report.json'}")


@main.command()
@click.option("--out", "out_dir", type=click.Path(), default="bench_out")
@click.option("--seed", type=int, default=7)
@click.option("--epochs", type=int, default=200)
@click.option("--ids", type=int, default=40)
@click.option("--dim", type=int, default=30)
def bench(out_dir, seed, epochs, ids, dim):
    """Benchmark the stochastic solver against the deterministic reference."""
    dataset = make_synthetic_dataset(num_train_ids=ids, num_test_ids=ids,
                                     d=dim, seed=seed)
    train_pairs = _ground_truth_pairs(dataset.train_records())
    test = dataset.test_records()
    rows = []
    for name, deterministic in (("stochastic", False), ("deterministic", True)):
        tcfg = TrainerConfig(epochs=epochs, seed=seed)
        result, elapsed = timed_train(train_pairs, tcfg, deterministic=deterministic)
        sm = score_all(result.state, Dataset.probes(test), Dataset.gallery(test))
        rows.append({
            "solver": name,
            "seconds": elapsed,
            "objective_first": result.history[0].objective,
            "objective_last": result.history[-1].objective,
            "res_K_first": result.history[0].res_K,
            "res_K_last": result.history[-1].res_K,
            "rank1": cmc(sm).rank(1),
            "map": mean_average_precision(sm),
        })
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(
        {"ids": ids, "dim": dim, "epochs": epochs, "seed": seed, "rows": rows},
        indent=2))
    click.echo(f"{'solver':>14} {'time[s]':>8} {'obj0':>8} {'objS':>8} {'rank-1':>7}")
    for row in rows:
        click.echo(f"{row['solver']:>14} {row['seconds']:>8.2f} "
                   f"{row['objective_first']:>8.4f} {row['objective_last']:>8.4f} "
                   f"{row['rank1']:>7.4f}")
    click.echo(f"details in {out / 'bench.json'}")


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--ids", type=int, default=40, help="Identities per split.")
@click.option("--dim", type=int, default=30)
@click.option("--images", type=int, default=2, help="Images per identity per camera.")
@click.option("--seed", type=int, default=7)
@click.option("--format", "fmt", type=click.Choice(["bin", "csv"]), default="bin")
def synth(out_dir, ids, dim, images, seed, fmt):
    """Write a synthetic two-camera dataset (features + manifest)."""
    dataset = make_synthetic_dataset(num_train_ids=ids, num_test_ids=ids, d=dim,
                                     images_per_camera=images, seed=seed)
    manifest = save_dataset(dataset, out_dir, feature_format=fmt)
    click.echo(f"wrote {manifest} ({len(dataset.records)} records, d={dim})")


if __name__ == "__main__":
    sys.exit(main())
