"""Core evslide functionality - wiring configs, streams, engines and reports."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TaskProgressColumn,
    TextColumn,
)
from rich.table import Table

from .bench import (
    batch_report,
    fixed_scale_config,
    index_benchmark,
    minibatch_sweep,
    padded_window_stream,
    receptive_gap,
    slide_report,
)
from .config import (
    GraphConfig,
    RunConfig,
    canonical_json,
    config_digest,
    config_manager,
)
from .errors import ConfigError
from .events import (
    constant_scene,
    estimate_rate,
    generate_synthetic,
    generate_uniform,
    load_events,
    moving_bar_scene,
    moving_edge_scene,
    ramp_scene,
    save_events,
    stream_digest,
)
from .graph import EventGraph, dump_graph, rebuild, same_topology
from .machine import create_machine_profile
from .metrics import FLOP_CONVENTION, compare_runs, scaling_point
from .models import Event, Precision
from .net.base import Readout
from .net.spec import NetworkSpec, load_weights, random_weights
from .pixel_index import radius_search_bruteforce
from .slide import SlideEngine, StepResult, relative_error
from .state_aware import (
    EarlyStopPolicy,
    early_summary,
    run_batchwise_recognition,
    run_early_recognition,
)

logger = logging.getLogger(__name__)

TOLERANCE = {Precision.F32: 1e-5, Precision.F64: 1e-10}

# rate assumed for count windows when the stream is too short to measure one
NOMINAL_RATE_HZ = 1e5


@dataclass
class VerifyOutcome:
    passed: bool
    steps: int
    checked: int
    max_logit_error: float
    worst_step: int
    graph_mismatches: int
    search_mismatches: int
    tolerance: float
    exact: bool = False
    layer_mismatches: int = 0
    worst: Dict[str, Any] = field(default_factory=dict)


class Runner:
    """One CLI invocation: resolved config, network and output directory."""

    def __init__(self, config: RunConfig, console: Optional[Console] = None):
        self.config = config
        self.console = console or Console()
        self.digest = config_digest(config)
        self._spec: Optional[NetworkSpec] = None

    @classmethod
    def from_sources(
        cls,
        path: Optional[Path] = None,
        overrides: Optional[Dict[str, Any]] = None,
        console: Optional[Console] = None,
    ) -> "Runner":
        return cls(config_manager.load_config(path, overrides), console)

    # -- inputs -----------------------------------------------------------

    @property
    def spec(self) -> NetworkSpec:
        if self._spec is None:
            net = self.config.network
            if net.weights is not None:
                self._spec = load_weights(Path(net.weights))
            else:
                self._spec = random_weights(
                    net.widths,
                    seed=net.seed,
                    num_classes=net.num_classes,
                    readout=Readout(net.readout),
                    state_hidden=net.state_hidden,
                    preset="pooled" if net.pool_after is not None else "plain",
                    pool_after=net.pool_after,
                    voxel=net.voxel,
                    pool_aggr=net.pool_aggr,
                    pool_radius=net.pool_radius,
                )
        return self._spec

    def load_stream(self, path: Path) -> Tuple[List[Event], str]:
        events = load_events(Path(path), geometry=self.config.geometry)
        digest = stream_digest(events, self.config.geometry)
        logger.info("Loaded %d events from %s", len(events), path)
        return events, digest

    def graph_config(self, events: Sequence[Event]) -> GraphConfig:
        rate = estimate_rate(events) or NOMINAL_RATE_HZ
        return self.config.graph.with_temporal_scale(self.config.geometry, rate)

    def engine(
        self, events: Sequence[Event], refresh_interval: Optional[int] = None
    ) -> SlideEngine:
        interval = refresh_interval
        if interval is None:
            interval = self.config.refresh_interval
        return SlideEngine(
            self.spec,
            self.graph_config(events),
            self.config.geometry,
            precision=self.config.precision,
            refresh_interval=interval,
        )

    def output_dir(self, override: Optional[Path] = None) -> Path:
        path = override or self.config.output.directory or config_manager.runs_dir()
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def stamp(self, stream: str, **extra) -> Dict[str, Any]:
        return {
            "config_digest": self.digest,
            "stream_digest": stream,
            "flop_convention": FLOP_CONVENTION,
            **extra,
        }

    def write_json(self, path: Path, doc: Dict[str, Any]) -> Path:
        path.write_text(json.dumps(doc, indent=2, default=str))
        self.console.print(f"[dim]wrote {path}[/dim]")
        return path

    def _progress(self) -> Progress:
        return Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(bar_width=40),
            TaskProgressColumn(),
            console=self.console,
            transient=True,
        )

    # -- commands ---------------------------------------------------------

    def generate(
        self,
        kind: str,
        output: Path,
        duration_us: int,
        rate: float = 1e5,
        speed: float = 100.0,
        threshold: float = 0.2,
        step_us: int = 100,
    ) -> Tuple[List[Event], str]:
        geometry = self.config.geometry
        seed = self.config.seed
        if kind == "uniform":
            events = generate_uniform(geometry, rate, duration_us, seed)
        else:
            scenes = {
                "edge": lambda: moving_edge_scene(speed, threshold),
                "bar": lambda: moving_bar_scene(speed, threshold=threshold),
                "ramp": lambda: ramp_scene(threshold / 1000.0, threshold),
                "constant": lambda: constant_scene(threshold=threshold),
            }
            if kind not in scenes:
                raise ConfigError(f"unknown generator '{kind}'")
            events = generate_synthetic(scenes[kind](), geometry, duration_us, step_us)

        save_events(Path(output), events, geometry)
        digest = stream_digest(events, geometry)
        self.console.print(
            f"[green]✅ {len(events)} events written to {output}[/green]"
        )
        self.console.print(f"   stream digest: [cyan]{digest}[/cyan]")
        return events, digest

    def build_graph(self, stream: Path, dump: Optional[Path] = None) -> EventGraph:
        events, digest = self.load_stream(stream)
        graph = EventGraph(self.graph_config(events), self.config.geometry)
        graph.slide(events)

        table = Table(title="Event graph", show_header=False)
        table.add_column("", style="bold")
        table.add_column("", style="cyan")
        table.add_row("nodes", str(len(graph)))
        edges = sum(len(graph.in_neighbors(i)) for i in graph.node_ids())
        table.add_row("edges", str(edges))
        table.add_row("max in-degree", str(graph.max_in_degree()))
        table.add_row("temporal scale", f"{graph.alpha:.6g}")
        table.add_row("stream digest", digest[:16])
        self.console.print(table)
        if dump is not None:
            dump_graph(graph, dump)
            self.console.print(f"[dim]wrote {dump}[/dim]")
        return graph

    def run_batch(
        self, stream: Path, out: Optional[Path] = None, max_steps: Optional[int] = None
    ):
        events, digest = self.load_stream(stream)
        graph_config = self.graph_config(events)
        directory = self.output_dir(out)
        with self._progress() as progress:
            task = progress.add_task("batch recompute", total=len(events))
            report = batch_report(
                self.spec,
                graph_config,
                self.config.geometry,
                [],
                events,
                mini_batch=self.config.mini_batch,
                precision=self.config.precision,
                max_steps=max_steps,
                on_step=lambda k, *_: progress.update(
                    task, completed=k * self.config.mini_batch
                ),
            )
        report.stream_digest, report.config_digest = digest, self.digest
        self.write_json(
            directory / "batch_report.json", json.loads(report.model_dump_json())
        )
        report.to_csv(directory / "batch_report.csv")
        self._print_report(report)
        return report

    def run_slide(self, stream: Path, out: Optional[Path] = None):
        events, digest = self.load_stream(stream)
        engine = self.engine(events)
        directory = self.output_dir(out)
        last: List[StepResult] = []

        steps_file = None
        if self.config.output.step_reports:
            steps_file = open(directory / "steps.jsonl", "w")
        try:
            with self._progress() as progress:
                task = progress.add_task("slide", total=len(events))

                def on_step(result: StepResult) -> None:
                    progress.advance(task, result.record.events)
                    if steps_file is not None:
                        steps_file.write(json.dumps(result.to_record()) + "\n")
                    last[:] = [result]

                report = slide_report(
                    engine, events, self.config.mini_batch, on_step=on_step
                )
        finally:
            if steps_file is not None:
                steps_file.close()

        report.stream_digest, report.config_digest = digest, self.digest
        self.write_json(
            directory / "slide_report.json", json.loads(report.model_dump_json())
        )
        report.to_csv(directory / "slide_report.csv")
        self._print_report(report)
        if last:
            self.console.print(
                f"final prediction: [bold cyan]{last[0].prediction}[/bold cyan] "
                f"(confidence {last[0].confidence:.3f})"
            )
        return report

    def _print_report(self, report) -> None:
        table = Table(
            title=f"{report.label} cost", show_header=True, header_style="bold magenta"
        )
        table.add_column("component", style="cyan")
        table.add_column("FLOPs", justify="right", style="green")
        for name, value in report.breakdown().items():
            table.add_row(name, f"{value:,}")
        table.add_row("[bold]total[/bold]", f"[bold]{report.cumulative:,}[/bold]")
        table.add_row("per event", f"{report.per_event_flops:,.1f}")
        table.add_row("wall per event", f"{report.per_event_wall_ns / 1e3:,.1f} µs")
        self.console.print(table)

    def verify(
        self,
        stream: Path,
        every: int = 1,
        queries: int = 100,
        out: Optional[Path] = None,
    ) -> VerifyOutcome:
        """Run slide and batch side by side; compare logits, graphs and searches."""
        events, digest = self.load_stream(stream)
        engine = self.engine(events)
        # refreshing after every step must reproduce the batch bit for bit
        exact = engine.state.refresh_interval == 1
        tolerance = 0.0 if exact else TOLERANCE[Precision(self.config.precision)]
        rng = np.random.default_rng(self.config.seed)

        outcome = VerifyOutcome(True, 0, 0, 0.0, 0, 0, 0, tolerance, exact=exact)
        with self._progress() as progress:
            task = progress.add_task("verify", total=len(events))
            for result in engine.run(events, self.config.mini_batch):
                progress.advance(task, result.record.events)
                outcome.steps += 1
                consumed = outcome.steps * self.config.mini_batch
                if outcome.steps % every and consumed < len(events):
                    continue
                outcome.checked += 1
                reference = engine.batch()
                error = relative_error(result.logits, reference.logits)
                if outcome.checked == 1 or error > outcome.max_logit_error:
                    outcome.max_logit_error = error
                    outcome.worst_step = outcome.steps
                    outcome.worst = {
                        "step": outcome.steps,
                        "slide_logits": [float(v) for v in result.logits],
                        "batch_logits": [float(v) for v in reference.logits],
                        "window": len(engine.graph),
                    }
                equivalence = engine.compare(reference)
                if not equivalence.node_sets_match or (exact and not equivalence.exact):
                    outcome.layer_mismatches += 1
                if not same_topology(engine.graph, rebuild(engine.graph)):
                    outcome.graph_mismatches += 1
                outcome.search_mismatches += self._check_searches(
                    engine.graph, rng, queries
                )

        outcome.passed = (
            outcome.max_logit_error <= tolerance
            and not outcome.layer_mismatches
            and not outcome.graph_mismatches
            and not outcome.search_mismatches
        )
        table = Table(title="Verification", show_header=False)
        table.add_column("", style="bold")
        table.add_column("")
        table.add_row("steps", f"{outcome.steps} ({outcome.checked} checked)")
        table.add_row(
            "max relative logit error",
            f"{outcome.max_logit_error:.3e} (tolerance {tolerance:.0e})",
        )
        table.add_row("layer mismatches", str(outcome.layer_mismatches))
        table.add_row("graph mismatches", str(outcome.graph_mismatches))
        table.add_row("radius-search mismatches", str(outcome.search_mismatches))
        verdict = "[green]PASS[/green]" if outcome.passed else "[red]FAIL[/red]"
        table.add_row("result", verdict)
        self.console.print(table)

        directory = self.output_dir(out)
        self.write_json(
            directory / "verify.json",
            self.stamp(digest, **{k: v for k, v in outcome.__dict__.items()}),
        )
        return outcome

    def _check_searches(
        self, graph: EventGraph, rng: np.random.Generator, queries: int
    ) -> int:
        ids = graph.node_ids()
        if not ids:
            return 0
        stored = [graph.events[i] for i in ids]
        mismatches = 0
        for k in rng.integers(0, len(ids), size=min(queries, len(ids))):
            e = stored[k]
            query = (e.x, e.y, e.t)
            found = graph.index.radius_search(query, graph.radius, graph.alpha)
            expected = radius_search_bruteforce(
                stored, query, graph.radius, graph.alpha, ids
            )
            if found != expected:
                mismatches += 1
        return mismatches

    def bench(
        self,
        stream: Optional[Path] = None,
        out: Optional[Path] = None,
        batch_samples: int = 3,
        skip_index: bool = False,
    ) -> Dict[str, Any]:
        cfg = self.config
        bench = cfg.bench
        directory = self.output_dir(out)
        geometry = cfg.geometry
        results: Dict[str, Any] = {"machine": create_machine_profile().model_dump()}

        # mini-batch sweep over one stream
        if stream is not None:
            events, digest = self.load_stream(stream)
        else:
            events = generate_uniform(geometry, 1e5, 1_000_000, cfg.seed)
            digest = stream_digest(events, geometry)
        graph_config = self.graph_config(events)
        warm = _initial_window(events, graph_config)
        rest = events[len(warm) : len(warm) + bench.steps * max(bench.mini_batch_sizes)]
        with self.console.status("mini-batch sweep...", spinner="dots"):
            sweep = minibatch_sweep(
                lambda: SlideEngine(
                    self.spec,
                    graph_config,
                    geometry,
                    cfg.precision,
                    cfg.refresh_interval,
                ),
                warm,
                rest,
                bench.mini_batch_sizes,
            )
        results["mini_batch"] = [p.model_dump() for p in sweep]

        table = Table(title="Mini-batch sweep", header_style="bold magenta")
        for col in (
            "size",
            "steps",
            "cumulative FLOPs",
            "FLOPs / event",
            "logit deviation",
        ):
            table.add_column(col, justify="right")
        for p in sweep:
            table.add_row(
                str(p.mini_batch),
                str(p.steps),
                f"{p.cumulative_flops:,}",
                f"{p.per_event_flops:,.0f}",
                f"{p.max_logit_deviation:.1e}",
            )
        self.console.print(table)

        # window scaling with far-away padding at equal density
        rate = 1e5
        base = min(bench.window_sizes)
        gap = receptive_gap(self.spec, cfg.graph)
        scaling = []
        for window in sorted(bench.window_sizes):
            n = window + bench.warmup + bench.steps
            full, padded = padded_window_stream(
                geometry, base, window, rate, n, gap, cfg.seed
            )
            scaled = fixed_scale_config(
                cfg.graph, geometry, window, rate * window / base
            )
            warm, tail = padded[:window], padded[window:]
            with self.console.status(f"window {window}: slide...", spinner="dots"):
                engine = SlideEngine(
                    self.spec, scaled, full, cfg.precision, refresh_interval=0
                )
                engine.warm_start(warm)
                slide = slide_report(engine, tail, warmup=bench.warmup)
            with self.console.status(f"window {window}: batch...", spinner="dots"):
                batch = batch_report(
                    self.spec,
                    scaled,
                    full,
                    warm,
                    tail,
                    precision=cfg.precision,
                    max_steps=batch_samples,
                )
            slide.stream_digest = batch.stream_digest = stream_digest(padded, full)
            scaling.append(scaling_point(window, slide, batch))
            if window == max(bench.window_sizes):
                results["comparison"] = compare_runs(slide, batch).model_dump()
        results["scaling"] = [p.model_dump() for p in scaling]
        if "comparison" in results:
            results["comparison"]["scaling"] = results["scaling"]

        table = Table(title="Window scaling", header_style="bold magenta")
        for col in (
            "window",
            "slide FLOPs/ev",
            "batch FLOPs/ev",
            "FLOP ratio",
            "wall ratio",
        ):
            table.add_column(col, justify="right")
        for p in scaling:
            table.add_row(
                f"{p.window:,}",
                f"{p.slide_flops_per_event:,.0f}",
                f"{p.batch_flops_per_event:,.0f}",
                f"{p.flop_ratio:.1f}x" if p.flop_ratio is not None else "-",
                f"{p.wall_ratio:.1f}x" if p.wall_ratio is not None else "-",
            )
        self.console.print(table)

        if not skip_index:
            with self.console.status("pixel index...", spinner="dots"):
                pinned = fixed_scale_config(
                    cfg.graph, geometry, bench.index_window, 1e6
                )
                alpha = pinned.temporal_scale
                index = index_benchmark(
                    geometry,
                    cfg.graph.radius,
                    alpha,
                    bench.index_window,
                    bench.index_slide,
                    bench.index_repeats,
                    cfg.seed,
                )
            results["index"] = index.model_dump()
            results["index"]["per_insert_ns"] = index.timing.per_insert_ns
            timing = index.timing
            per_search = timing.search_ns / max(timing.slide * timing.repeats, 1)
            growth = "-"
            if index.growth_factor is not None:
                growth = f"{index.growth_factor:.2f}"
            self.console.print(
                f"index: {timing.per_insert_ns:,.0f} ns/insert, "
                f"{per_search:,.0f} ns/search, "
                f"8x growth factor {growth}"
            )

        doc = self.stamp(digest, **results)
        self.write_json(directory / "bench.json", doc)
        return doc

    def early(
        self,
        streams: Sequence[Path],
        out: Optional[Path] = None,
        batch_ms: Sequence[float] = (),
    ) -> Dict[str, Any]:
        policy = EarlyStopPolicy.from_config(self.config.policy)
        directory = self.output_dir(out)
        results, lengths, rows = [], [], []

        for path in streams:
            events, digest = self.load_stream(path)
            engine = self.engine(events)
            result = run_early_recognition(engine, events, policy)
            final = self.engine(events)
            final.graph.slide(events)
            result.final_prediction = final.refresh().prediction
            results.append(result)
            lengths.append(len(events))

            trace_path = directory / f"{Path(path).stem}.trace.csv"
            result.trace.to_csv(trace_path)
            baseline = [
                run_batchwise_recognition(
                    self.spec,
                    events,
                    self.graph_config(events),
                    self.config.geometry,
                    round(ms * 1000),
                    self.config.precision,
                )
                for ms in batch_ms
            ]
            rows.append(
                {
                    "stream": str(path),
                    "stream_digest": digest,
                    "prediction": result.prediction,
                    "stop_index": result.stop_index,
                    "stopped": result.stopped,
                    "confidence": result.confidence,
                    "final_prediction": result.final_prediction,
                    "events": len(events),
                    "batchwise": [b.__dict__ for b in baseline],
                }
            )

        summary = early_summary(results, lengths)
        table = Table(title="Early recognition", header_style="bold magenta")
        for col in ("stream", "stop index", "events", "class", "final", "confidence"):
            table.add_column(col)
        for row in rows:
            table.add_row(
                Path(row["stream"]).name,
                str(row["stop_index"]),
                str(row["events"]),
                str(row["prediction"]),
                str(row["final_prediction"]),
                f"{row['confidence']:.3f}",
            )
        self.console.print(table)
        for row in rows:
            for b in row["batchwise"]:
                self.console.print(
                    f"[dim]{Path(row['stream']).name}: "
                    f"batch {b['batch_us'] / 1000:g} ms -> "
                    f"class {b['prediction']} after {b['consumed']} events[/dim]"
                )

        doc = {
            "config_digest": self.digest,
            "flop_convention": FLOP_CONVENTION,
            "policy": self.config.policy.model_dump(),
            "streams": rows,
            "summary": summary,
        }
        self.write_json(directory / "early.json", doc)
        return doc

    def show_config(self) -> None:
        self.console.print()
        self.console.print(Panel.fit("⚙️  Run configuration", border_style="cyan"))
        self.console.print_json(canonical_json(self.config.model_dump(mode="json")))
        self.console.print(f"[dim]config digest: {self.digest}[/dim]")
        self.console.print(f"[dim]user defaults: {config_manager.config_file}[/dim]")

    def show_profile(self) -> None:
        profile = create_machine_profile()
        self.console.print()
        self.console.print(Panel.fit("🖥️  Machine Profile", border_style="cyan"))
        self.console.print(f"  Platform: [cyan]{profile.platform}[/cyan]")
        self.console.print(
            f"  Python / numpy: [cyan]{profile.python}[/cyan] / "
            f"[cyan]{profile.numpy}[/cyan]"
        )
        self.console.print(f"  CPU: [cyan]{profile.cpu_model}[/cyan]")
        self.console.print(
            f"  Cores: [cyan]{profile.cpu_cores}[/cyan] physical, "
            f"[cyan]{profile.cpu_threads}[/cyan] threads"
        )
        self.console.print(
            f"  RAM: [cyan]{profile.system_ram_gb:.1f} GB[/cyan] total, "
            f"[green]{profile.available_ram_gb:.1f} GB[/green] available"
        )


def _initial_window(events: Sequence[Event], graph_config: GraphConfig) -> List[Event]:
    """Leading events that fill the first window."""
    window = graph_config.window
    if window.by_count is not None:
        return list(events[: window.by_count])
    if not events:
        return []
    end = events[0].t + window.by_time_us
    return [e for e in events if e.t < end]
