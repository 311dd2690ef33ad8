"""Command-line entry points.

``formopt run --config cfg.json`` runs the loop to an end condition,
streaming one status line per cycle. ``--serve ADDR`` instead starts the
HTTP service (required for human-guided mode). ``formopt export`` turns
a finished run directory into plot-ready CSV files.

Exit codes: 0 clean stop, 2 config error, 3 backend failure,
130 interrupted.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ConfigError, parse_run_config
from .export import KINDS, export_plot_data
from .records import ResultStore

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INTERRUPT = 130


@click.group()
def main():
    """Active-learning Bayesian optimization for forming simulations."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--mode", type=click.Choice(["automated", "human_guided"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--serve", "serve_addr", default=None, help="HOST:PORT to serve instead")
def run(config_path, mode, seed, serve_addr):
    """Run the optimization loop from a JSON config file."""
    try:
        setup = parse_run_config(config_path)
        if mode is not None:
            setup.config.mode = mode
        if seed is not None:
            setup.config.seed = seed
        loop = setup.build_loop()
        loop._effective_ranges()  # fail fast on missing ranges
    except FileNotFoundError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ConfigError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    if serve_addr:
        import uvicorn

        from .service import create_app

        host, _, port = serve_addr.partition(":")
        app = create_app(workdir=setup.workdir)
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))
        return

    if setup.config.mode != "automated":
        click.echo("human_guided mode needs --serve ADDR", err=True)
        sys.exit(EXIT_CONFIG)

    def on_cycle(state, records):
        best = "-" if state.best_inputs is None else f"{state.best_value:.3f}"
        click.echo(
            f"cycle {state.cycle - 1}: iterations {state.iteration}, "
            f"ei_sum {state.ei_sum_history[-1]:.4f}, best {best}, "
            f"energy {state.consumed_energy_j:.0f} J"
        )

    try:
        state = loop.run(on_cycle=on_cycle)
    except KeyboardInterrupt:
        loop.interrupt()
        click.echo("interrupted", err=True)
        _write_state(setup, loop)
        sys.exit(EXIT_INTERRUPT)

    _write_state(setup, loop)
    if state.stop_reason == "backend_failure":
        click.echo("stopped: backend failure", err=True)
        sys.exit(EXIT_BACKEND)
    if state.stop_reason == "interrupted":
        sys.exit(EXIT_INTERRUPT)
    click.echo(f"stopped: {state.stop_reason}")
    sys.exit(EXIT_OK)


def _write_state(setup, loop):
    (setup.workdir / "state.json").write_text(
        json.dumps(loop.state_snapshot(), indent=2) + "\n", encoding="utf-8"
    )


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True),
              help="run directory containing results.jsonl (and state.json)")
@click.option("--kind", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def export(run_dir, kind, out_path):
    """Export one plot-data CSV from a finished run directory."""
    run_dir = Path(run_dir)
    if kind not in KINDS:
        click.echo(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}", err=True)
        sys.exit(EXIT_CONFIG)
    store = ResultStore(run_dir / "results.jsonl")
    ei_history = []
    state_path = run_dir / "state.json"
    if state_path.exists():
        ei_history = json.loads(state_path.read_text())["ei_sum_history"]
    csv = export_plot_data(kind, store.query(), ei_history)
    Path(out_path).write_text(csv, encoding="utf-8")
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
