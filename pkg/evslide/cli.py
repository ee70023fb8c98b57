"""Command-line interface for evslide."""

import copy
import logging
import re
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .config import WindowSpec, config_manager
from .core import Runner
from .errors import EvslideError

console = Console()

_UNITS = {"us": 1, "ms": 1_000, "s": 1_000_000}
_DURATION_RE = re.compile(r"\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(us|ms|s)?\s*")


class Duration(click.ParamType):
    """Durations such as ``50ms``, ``1s`` or ``2500us``; bare numbers are in us."""

    name = "duration"

    def convert(self, value, param, ctx):
        if isinstance(value, int):
            return value
        match = _DURATION_RE.fullmatch(str(value))
        if not match:
            self.fail(f"'{value}' is not a duration (use us, ms or s)", param, ctx)
        micros = float(match.group(1)) * _UNITS[match.group(2) or "us"]
        if micros <= 0:
            self.fail(f"duration must be positive, got '{value}'", param, ctx)
        return round(micros)


DURATION = Duration()
EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
OUT_DIR = click.Path(file_okay=False, path_type=Path)
REFRESH_HELP = 'Steps between full refreshes (0 = never)'


def setup_logging(verbose: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)],
        force=True,
    )


def _runner(ctx: click.Context, **overrides: Any) -> Runner:
    """Build a Runner from the global options plus command-level overrides."""
    obj = ctx.obj or {}
    merged: Dict[str, Any] = copy.deepcopy(obj.get("overrides", {}))
    for key, value in overrides.items():
        if value is None:
            continue
        node = merged
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    window = merged.get("graph", {}).pop("window", None)
    config = config_manager.load_config(obj.get("config"), merged)
    if window is not None:
        # a window flag replaces the document window instead of merging into it
        config.graph = config.graph.model_copy(update={"window": WindowSpec(**window)})
    return Runner(config, console)


@click.group(invoke_without_command=True)
@click.option('--config', 'config_path', type=EXISTING_FILE,
              help='Run document (.json, .toml, .yaml)')
@click.option('--seed', type=int, help='Seed for generators and random weights')
@click.option('--precision', type=click.Choice(['f32', 'f64']),
              help='Floating-point precision')
@click.option('--verbose', '-v', count=True,
              help='-v for progress logs, -vv for per-step detail')
@click.option('--version', is_flag=True, help='Show version and exit')
@click.pass_context
def cli(ctx, config_path, seed, precision, verbose, version):
    """⚡ evslide - incremental graph convolution over event streams

    Builds sliding-window event graphs and keeps a graph network's output
    current event by event, with batch recomputation as the reference.
    """
    if version:
        console.print(f"evslide version {__version__}")
        sys.exit(0)

    setup_logging(verbose)
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
        overrides["network"] = {"seed": seed}
    if precision is not None:
        overrides["precision"] = precision
    ctx.obj = {"config": config_path, "overrides": overrides}

    if ctx.invoked_subcommand is None:
        console.print("⚡ [bold cyan]evslide[/bold cyan]")
        console.print()
        console.print("Use [bold]evslide --help[/bold] to see available commands")
        console.print(
            "Quick start: "
            "[bold]evslide generate --uniform --rate 1e5 --dur 1s -o s.evt1[/bold]"
        )


def _graph_options(f):
    f = click.option('--radius', '-r', type=float, help='Neighborhood radius R')(f)
    f = click.option('--max-degree', type=int, help='Neighbor cap D_max')(f)
    f = click.option('--window', 'window_us', type=DURATION,
                     help='Time window (e.g. 50ms)')(f)
    f = click.option('--window-count', type=int, help='Count window (events)')(f)
    f = click.option('--causal', is_flag=True, default=None,
                     help='Only link to past events')(f)
    f = click.option('--weights', type=EXISTING_FILE,
                     help='Weights JSON document (default: seeded random weights)')(f)
    return f


def _graph_overrides(
    radius, max_degree, window_us, window_count, causal, weights
) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "graph.radius": radius,
        "graph.max_degree": max_degree,
        "graph.edge_mode": "causal" if causal else None,
        "network.weights": str(weights) if weights else None,
    }
    if window_us is not None and window_count is not None:
        raise click.UsageError("use either --window or --window-count, not both")
    if window_us is not None:
        out["graph.window"] = {"by_time_us": window_us}
    if window_count is not None:
        out["graph.window"] = {"by_count": window_count}
    return out


@cli.command()
@click.option('--uniform', 'kind', flag_value='uniform', default=True,
              help='Uniform random events')
@click.option('--edge', 'kind', flag_value='edge', help='Moving step edge')
@click.option('--bar', 'kind', flag_value='bar', help='Moving bar')
@click.option('--ramp', 'kind', flag_value='ramp', help='Global intensity ramp')
@click.option('--rate', type=float, default=1e5, show_default=True,
              help='Events per second (uniform)')
@click.option('--dur', 'duration', type=DURATION, default='1s', show_default=True,
              help='Stream duration')
@click.option('--speed', type=float, default=100.0, show_default=True,
              help='Edge or bar speed (px/s)')
@click.option('--threshold', type=float, default=0.2, show_default=True,
              help='Contrast threshold')
@click.option('--output', '-o', type=click.Path(dir_okay=False, path_type=Path),
              required=True,
              help='Output file (.csv or .evt1)')
@click.pass_context
def generate(ctx, kind, rate, duration, speed, threshold, output):
    """Generate a synthetic event stream."""
    _runner(ctx).generate(
        kind, output, duration, rate=rate, speed=speed, threshold=threshold
    )


@cli.command('build-graph')
@click.argument('stream', type=EXISTING_FILE)
@_graph_options
@click.option('--dump', type=click.Path(dir_okay=False, path_type=Path),
              help='Write a JSON graph dump')
@click.pass_context
def build_graph(ctx, stream, dump, **graph):
    """Build the event graph over the last window of STREAM."""
    _runner(ctx, **_graph_overrides(**graph)).build_graph(stream, dump)


@cli.command('run-batch')
@click.argument('stream', type=EXISTING_FILE)
@_graph_options
@click.option('--mini-batch', type=int, help='Events per step')
@click.option('--max-steps', type=int, help='Stop after this many steps')
@click.option('--out', type=OUT_DIR, help='Output directory')
@click.pass_context
def run_batch(ctx, stream, mini_batch, max_steps, out, **graph):
    """Recompute the network from scratch after every step."""
    runner = _runner(ctx, mini_batch=mini_batch, **_graph_overrides(**graph))
    runner.run_batch(stream, out, max_steps)


@cli.command('run-slide')
@click.argument('stream', type=EXISTING_FILE)
@_graph_options
@click.option('--mini-batch', type=int, help='Events per step')
@click.option('--refresh', 'refresh_interval', type=int, help=REFRESH_HELP)
@click.option('--out', type=OUT_DIR, help='Output directory')
@click.pass_context
def run_slide(ctx, stream, mini_batch, refresh_interval, out, **graph):
    """Run the incremental engine over STREAM."""
    runner = _runner(
        ctx,
        mini_batch=mini_batch,
        refresh_interval=refresh_interval,
        **_graph_overrides(**graph),
    )
    runner.run_slide(stream, out)


@cli.command()
@click.argument('stream', type=EXISTING_FILE)
@_graph_options
@click.option('--mini-batch', type=int, help='Events per step')
@click.option('--refresh', 'refresh_interval', type=int, help=REFRESH_HELP)
@click.option('--every', type=int, default=1, show_default=True,
              help='Compare every N steps')
@click.option('--queries', type=int, default=100, show_default=True,
              help='Radius-search checks per compared step')
@click.option('--out', type=OUT_DIR, help='Output directory')
@click.pass_context
def verify(ctx, stream, mini_batch, refresh_interval, every, queries, out, **graph):
    """Check slide against batch recomputation; exit code 2 on a breach."""
    runner = _runner(
        ctx,
        mini_batch=mini_batch,
        refresh_interval=refresh_interval,
        **_graph_overrides(**graph),
    )
    outcome = runner.verify(stream, every=max(every, 1), queries=queries, out=out)
    if not outcome.passed:
        console.print(
            f"[red]❌ tolerance breach, worst step {outcome.worst_step}[/red]"
        )
        if outcome.worst:
            console.print_json(data=outcome.worst)
        sys.exit(2)
    console.print("[green]✅ slide matches batch[/green]")


@cli.command()
@click.argument('stream', required=False, type=EXISTING_FILE)
@_graph_options
@click.option('--sizes', help='Comma-separated mini-batch sizes, e.g. 1,10,100')
@click.option('--windows',
              help='Comma-separated window sizes (events), e.g. 10000,20000,50000')
@click.option('--steps', type=int, help='Measured steps per configuration')
@click.option('--index-window', type=int, help='Live events in the index benchmark')
@click.option('--index-repeats', type=int, help='Slides in the index benchmark')
@click.option('--skip-index', is_flag=True, help='Skip the pixel-index benchmark')
@click.option('--out', type=OUT_DIR, help='Output directory')
@click.pass_context
def bench(
    ctx,
    stream,
    sizes,
    windows,
    steps,
    index_window,
    index_repeats,
    skip_index,
    out,
    **graph,
):
    """FLOP and wall-clock benchmarks over mini-batches, windows and the index."""

    def ints(text: Optional[str]):
        return [int(v) for v in text.split(",")] if text else None

    runner = _runner(
        ctx,
        **{
            "bench.mini_batch_sizes": ints(sizes),
            "bench.window_sizes": ints(windows),
            "bench.steps": steps,
            "bench.index_window": index_window,
            "bench.index_repeats": index_repeats,
        },
        **_graph_overrides(**graph),
    )
    runner.bench(stream, out, skip_index=skip_index)


@cli.command()
@click.argument('streams', nargs=-1, required=True, type=EXISTING_FILE)
@_graph_options
@click.option('--threshold', '-t', type=float, help='Confidence threshold τ')
@click.option('--stride', '-k', type=int, help='Evaluate the heads every k events')
@click.option('--min-events', '-m', type=int, help='Never stop before this many events')
@click.option('--batch-ms',
              help='Comma-separated batch durations for the batch-wise baseline')
@click.option('--out', type=OUT_DIR, help='Output directory')
@click.pass_context
def early(ctx, streams, threshold, stride, min_events, batch_ms, out, **graph):
    """Early recognition with the confidence head."""
    runner = _runner(
        ctx,
        **{
            "policy.threshold": threshold,
            "policy.stride": stride,
            "policy.min_events": min_events,
        },
        **_graph_overrides(**graph),
    )
    durations = [float(v) for v in batch_ms.split(",")] if batch_ms else []
    runner.early(streams, out, durations)


@cli.group()
def config():
    """Manage configuration."""
    pass


@config.command('show')
@click.pass_context
def config_show(ctx):
    """Show the resolved run configuration and its digest."""
    _runner(ctx).show_config()


@cli.command()
@click.pass_context
def profile(ctx):
    """Show the machine profile stamped into benchmark reports."""
    _runner(ctx).show_profile()


def main():
    """Main entry point."""
    try:
        cli(standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except click.Abort:
        console.print("\n[yellow]Aborted[/yellow]")
        sys.exit(1)
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted by user[/yellow]")
        sys.exit(1)
    except (EvslideError, OSError) as e:
        console.print(f"[red]Error: {e}[/red]")
        sys.exit(1)


if __name__ == "__main__":
    main()
