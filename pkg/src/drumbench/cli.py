"""Command-line entry points: synth-data, build-cache, train, evaluate, serve,
export-tables. All commands take one config file plus repeated --set
section.key=value overrides."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from .config import load_config

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


def _config_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="TOML or JSON config file")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="dotted config override, repeatable")(fn)
    return fn


@click.group()
def main():
    """Symbolic-to-audio drum rendering workbench."""


@main.command("synth-data")
@_config_options
def synth_data(config_path, overrides):
    """Generate the synthetic corpus into the workspace."""
    from .synth import generate_corpus, save_corpus

    cfg = load_config(config_path, list(overrides))
    corpus = generate_corpus(cfg.corpus, cfg.codec.sample_rate)
    save_corpus(corpus, cfg.corpus_dir)
    click.echo(f"wrote {len(corpus.performances)} performances to {cfg.corpus_dir}")
    click.echo(f"corpus hash {corpus.content_hash()}")


@main.command("build-cache")
@_config_options
def build_cache_cmd(config_path, overrides):
    """Window, filter, encode, quantize, and fit the PCA target."""
    from .cache import build_cache
    from .synth import load_corpus

    cfg = load_config(config_path, list(overrides))
    corpus = load_corpus(cfg.corpus_dir)
    cache = build_cache(
        corpus, cfg.codec, cfg.pca_components, cfg.split_fractions, cfg.split_seed, cfg.cache_dir
    )
    sizes = {s: len(cache.split(s)) for s in ("train", "val", "test")}
    click.echo(f"cache written to {cfg.cache_dir}; windows per split: {sizes}")
    click.echo(f"pca explained variance: {cache.basis.explained_variance:.9f}")


@main.command("train")
@_config_options
@click.option("--model", "kind", type=click.Choice(["diffusion", "diffusion_ce", "regressor"]),
              default="diffusion")
@click.option("--epochs", type=int, default=None, help="override config epochs")
def train_cmd(config_path, overrides, kind, epochs):
    """Train one model; the best-validation checkpoint is kept."""
    from .cache import load_cache
    from .training import TrainConfig, train

    cfg = load_config(config_path, list(overrides))
    cache = load_cache(cfg.cache_dir)
    cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(
        kind=kind,
        epochs=epochs if epochs is not None else cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        lambda_ce=cfg.lambda_ce,
        schedule_steps=cfg.schedule_steps,
        seed=cfg.train_seed,
    )
    out = cfg.checkpoint_path(kind)
    payload = train(cache, tc, out_path=out, log_path=cfg.checkpoint_dir / f"{kind}_log.json")
    click.echo(f"saved {out} (best epoch {payload['best_epoch']}, val {payload['best_val_loss']:.5f})")


@main.command("evaluate")
@_config_options
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--reuse-timings", type=click.Path(exists=True), default=None,
              help="timings.json from a stored run; keeps RTF bytes reproducible")
def evaluate_cmd(config_path, overrides, out_dir, reuse_timings):
    """Aggregate metric rows, per-clip CSV, and best-vs-rest contrasts."""
    from .cache import load_cache
    from .evaluate import run_evaluation

    cfg = load_config(config_path, list(overrides))
    cache = load_cache(cfg.cache_dir)
    result = run_evaluation(
        cache,
        {k: str(cfg.checkpoint_path(k)) for k in ("diffusion", "diffusion_ce", "regressor")},
        out_dir or cfg.eval_dir,
        eval_seed=cfg.eval_seed,
        reuse_timings_from=reuse_timings,
    )
    click.echo(f"evaluated systems: {', '.join(result['systems'])}")
    click.echo(f"wrote CSVs to {result['out_dir']}")


@main.command("serve")
@_config_options
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="defaults to the diffusion checkpoint in the workspace")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
def serve_cmd(config_path, overrides, checkpoint, host, port):
    """Serve /render, /baseline-render, /config, /diagnostics/conditioning."""
    import uvicorn

    from .service import create_app

    cfg = load_config(config_path, list(overrides))
    ck = checkpoint or cfg.checkpoint_path("diffusion")
    ui = next((p for p in (Path("frontend/dist"), Path("frontend/public")) if p.is_dir()), None)
    app = create_app(ck, cache_dir=cfg.cache_dir, ui_dir=ui)
    uvicorn.run(app, host=host, port=port)


@main.command("export-tables")
@_config_options
@click.option("--eval-dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
def export_tables_cmd(config_path, overrides, eval_dir, out_path):
    """Render metrics.csv as a markdown table."""
    from .evaluate import export_tables

    cfg = load_config(config_path, list(overrides))
    text = export_tables(eval_dir or cfg.eval_dir, out_path)
    click.echo(text)


if __name__ == "__main__":
    main()
