"""Command-line entry points: headless runs, the service, rendering, and a
thin HTTP client for a running session."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .scenario import ScenarioError, load_scenario


@click.group()
def main():
    """Obstacle-aware Coriolis wind simulation over a continental map."""


def _load(config_path, **overrides):
    try:
        cfg = load_scenario(config_path)
    except ScenarioError as e:
        click.echo(str(e), err=True)
        sys.exit(2)
    updates = {k: v for k, v in overrides.items() if v is not None}
    return cfg.model_copy(update=updates) if updates else cfg


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--steps", type=int, default=None, help="Override frame count.")
@click.option("--seed", type=int, default=None, help="Override run seed.")
@click.option("--engine", type=click.Choice(["cfd", "repulse"]), default=None)
@click.option("--metrics", "metrics_path", type=click.Path(), default=None,
              help="Write the metrics CSV here.")
@click.option("--frames", "frames_dir", type=click.Path(), default=None,
              help="Directory for PNG frame exports.")
@click.option("--every", "frames_every", type=int, default=50,
              help="Export a frame every K steps (with --frames).")
@click.option("--events", "events_path", type=click.Path(), default=None,
              help="Write the JSONL event log here.")
@click.option("--summary", "summary_path", type=click.Path(), default=None,
              help="Write the run summary JSON here.")
@click.option("--snapshot-out", "snapshot_path", type=click.Path(), default=None,
              help="Write the final protocol frame message here.")
def run(config_path, steps, seed, engine, metrics_path, frames_dir, frames_every,
        events_path, summary_path, snapshot_path):
    """Run a scenario headless and write its artifacts."""
    from .runner import run_scenario

    cfg = _load(config_path, steps=steps, seed=seed, engine=engine)
    result = run_scenario(cfg, metrics_path=metrics_path, frames_dir=frames_dir,
                          frames_every=frames_every, events_path=events_path,
                          summary_path=summary_path, snapshot_path=snapshot_path)
    s = result.summary
    line = (f"engine={s['engine']} steps={s['steps']} seed={s['seed']} "
            f"hits={s['storm_hits']} exits={s['n_exits']} "
            f"mean_frame_ms={s['mean_frame_ms']:.2f} nan_resets={s['nan_resets']}")
    if s.get("southward_diversion") is not None:
        line += f" southward_diversion={s['southward_diversion']:.3f}"
    click.echo(line)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--fps", type=float, default=30.0, help="Simulation frame budget.")
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Serve this directory (the browser UI bundle) at /.")
def serve(config_path, port, host, fps, static_dir):
    """Serve the live session API (REST + WebSocket) for UI clients."""
    import uvicorn

    from .service import create_app

    cfg = _load(config_path)
    app = create_app(cfg, realtime=True, fps=fps, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--snapshot", "snapshot_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--scale", type=int, default=4)
def render(snapshot_path, out_path, scale):
    """Render a saved protocol frame message to a PNG image."""
    from .render import render_snapshot

    try:
        render_snapshot(snapshot_path, path=out_path, scale=scale)
    except (OSError, ValueError) as e:
        click.echo(f"cannot render {snapshot_path}: {e}", err=True)
        sys.exit(1)
    click.echo(out_path)


@main.group()
def client():
    """Talk to a running session over HTTP."""


@client.command("layout")
@click.option("--url", default="http://127.0.0.1:8000")
@click.option("--layout-file", required=True, type=click.Path(exists=True),
              help="Block layout document (JSON with a 'blocks' list).")
def client_layout(url, layout_file):
    import httpx

    doc = json.loads(Path(layout_file).read_text())
    doc["t"] = "layout"
    r = httpx.post(f"{url}/layout", json=doc, timeout=10.0)
    click.echo(r.text)
    sys.exit(0 if r.status_code == 200 else 1)


@client.command("mode")
@click.argument("mode", type=click.Choice(["free", "ice_age", "moving_mountains"]))
@click.option("--url", default="http://127.0.0.1:8000")
@click.option("--seed", type=int, default=0)
def client_mode(url, mode, seed):
    import httpx

    r = httpx.post(f"{url}/mode", json={"t": "mode", "mode": mode, "seed": seed},
                   timeout=10.0)
    click.echo(r.text)
    sys.exit(0 if r.status_code == 200 else 1)


@client.command("snapshot")
@click.option("--url", default="http://127.0.0.1:8000")
@click.option("--out", "out_path", type=click.Path(), default=None)
def client_snapshot(url, out_path):
    import httpx

    r = httpx.get(f"{url}/snapshot", timeout=10.0)
    if out_path:
        Path(out_path).write_text(r.text)
        click.echo(out_path)
    else:
        click.echo(r.text)
    sys.exit(0 if r.status_code == 200 else 1)


if __name__ == "__main__":
    main()
