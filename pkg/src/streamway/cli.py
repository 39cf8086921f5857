"""Command-line driver.

Exit codes: 0 success, 2 invalid input (parse, schema, missing artifact),
3 planning infeasible (domain error, or a request left unallocated), 4 internal error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from .errors import MissingArtifact, ParseError, SchemaViolation, StageError, StreamwayError
from .pipeline import run_pipeline
from .plotting import KINDS, emit_plots
from .scenario import load_scenario

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4

logger = logging.getLogger("streamway")


def _guarded(fn):
    """Translate exceptions into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except SchemaViolation as exc:
            for v in exc.violations:
                click.echo(f"schema: {v}", err=True)
            sys.exit(EXIT_INVALID)
        except (ParseError, MissingArtifact, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INVALID)
        except StageError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INFEASIBLE if isinstance(exc.cause, StreamwayError) else EXIT_INTERNAL)
        except StreamwayError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_INFEASIBLE)
        except Exception as exc:  # noqa: BLE001
            logger.debug("internal error", exc_info=True)
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)
        sys.exit(code or EXIT_OK)

    return wrapper


@click.group()
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("run"),
              show_default=True, help="Directory for artifacts.")
@click.option("--log-level", type=click.Choice(["debug", "info", "warning", "error"]), default="warning",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Reserved; every stage is deterministic.")
@click.pass_context
def main(ctx, out_dir, log_level, seed):
    """Stream-function air corridors and first-come-first-serve UAS allocation."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"out_dir": out_dir, "seed": seed}


scenario_arg = click.argument("scenario", type=str)
plot_opt = click.option("--plot/--no-plot", default=False, help="Render SVG figures next to the data.")
dump_opt = click.option("--dump-fields", is_flag=True, help="Also write psi dumps per layer.")


@main.command()
@scenario_arg
@_guarded
def validate(scenario):
    """Check a scenario file against the schema (use 'demo' for the bundled one)."""
    doc = load_scenario(scenario)
    d = doc.data
    click.echo("name\tlayers\tobstacles\tevents\trequests")
    n_req = sum(1 for e in d["events"] if e["type"] == "request")
    click.echo(f"{doc.name}\t{len(d['layers']['altitudes'])}\t{len(d['obstacles'])}\t{len(d['events'])}\t{n_req}")


def _run(ctx, scenario, mode, dump_fields, plot, plots):
    doc = load_scenario(scenario)
    art = run_pipeline(doc, ctx.obj["out_dir"], mode=mode, dump_fields=dump_fields,
                       plots=plots if plot else ())
    return doc, art


def _print_timings(art) -> None:
    summary = json.loads(art.summary.read_text())
    for k, v in summary["timings_s"].items():
        click.echo(f"# {k}\t{v:.3f}s", err=True)


@main.command("solve-field")
@scenario_arg
@plot_opt
@click.pass_context
@_guarded
def solve_field(ctx, scenario, plot):
    """Solve the stream function on every layer and dump it."""
    _, art = _run(ctx, scenario, "field", True, plot, ("field",))
    click.echo("layer\tnx\tny\tresidual\tfile")
    for idx, path in sorted(art.fields.items()):
        f = art.engine.fields[idx]
        click.echo(f"{idx}\t{f.grid.nx}\t{f.grid.ny}\t{f.residual:.3e}\t{path}")
    _print_timings(art)


@main.command("gen-corridors")
@scenario_arg
@dump_opt
@plot_opt
@click.pass_context
@_guarded
def gen_corridors(ctx, scenario, dump_fields, plot):
    """Extract corridors and waypoints per layer."""
    _, art = _run(ctx, scenario, "corridors", dump_fields, plot,
                  ("field", "corridors") if dump_fields else ("corridors",))
    click.echo("layer\taxis\tdirection\tstreamlines\twaypoints\tfile")
    for cs in art.engine.corridors:
        n_wp = sum(len(w) for w in cs.waypoints)
        click.echo(f"{cs.layer.index}\t{cs.layer.axis}\t{cs.layer.direction:+d}\t{cs.n_c}\t{n_wp}\t"
                   f"{art.corridors[cs.layer.index]}")
    _print_timings(art)


def _report_paths(art) -> int:
    click.echo("uas\tstatus\tsteps\tlayer_changes\tt_start\tt_end\tfile")
    eng = art.engine
    for uas_id, rec in sorted(eng.uas.items(), key=lambda kv: kv[1].arrival):
        steps = rec.steps
        changes = sum(1 for s in steps if s.action in ("up", "down"))
        t0 = steps[0].t if steps else ""
        t1 = steps[-1].t if steps else ""
        click.echo(f"{uas_id}\t{rec.status}\t{len(steps)}\t{changes}\t{t0}\t{t1}\t{art.paths.get(uas_id, '')}")
    for uas_id in art.unallocated:
        click.echo(f"{uas_id}\tqueued\t0\t0\t\t\t")
    audit = art.audit
    click.echo(f"# separation_ok={audit['separation_ok']} geometry_ok={audit['geometry_ok']}", err=True)
    _print_timings(art)
    if art.unallocated:
        return EXIT_INFEASIBLE
    if not (audit["separation_ok"] and audit["geometry_ok"]):
        return EXIT_INTERNAL
    return EXIT_OK


@main.command()
@scenario_arg
@dump_opt
@plot_opt
@click.pass_context
@_guarded
def plan(ctx, scenario, dump_fields, plot):
    """Allocate every request against the t=0 airspace, ignoring later disruptions."""
    _, art = _run(ctx, scenario, "plan", dump_fields, plot,
                  KINDS if dump_fields else ("corridors", "paths"))
    return _report_paths(art)


@main.command()
@scenario_arg
@dump_opt
@plot_opt
@click.pass_context
@_guarded
def simulate(ctx, scenario, dump_fields, plot):
    """Replay the full event stream through the engine."""
    _, art = _run(ctx, scenario, "simulate", dump_fields, plot,
                  KINDS if dump_fields else ("corridors", "paths"))
    return _report_paths(art)


@main.command()
@click.option("--which", "which", multiple=True, type=click.Choice(KINDS),
              help="Plot kinds; repeat the flag. Default: whatever the run directory supports.")
@click.pass_context
@_guarded
def plot(ctx, which):
    """Render figures from an existing run directory (--out-dir)."""
    run_dir = ctx.obj["out_dir"]
    if not which:
        meta_path = run_dir / "run_meta.json"
        if not meta_path.exists():
            raise MissingArtifact(f"missing {meta_path}")
        arts = json.loads(meta_path.read_text())["artifacts"]
        which = tuple(k for k, key in (("field", "fields"), ("corridors", "corridors"), ("paths", "paths"))
                      if arts.get(key))
    for p in emit_plots(run_dir, which):
        click.echo(str(p))


if __name__ == "__main__":
    main()
