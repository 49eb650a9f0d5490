"""Command-line entry points.

Thin shells around the library: instantiate templates, fit parts,
annotate objects, tabulate corpus statistics, and serve the HTTP API.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import os
import sys

import click
import numpy as np

from . import asset_io
from .correspondence import build_correspondence
from .fitting import (FitConfig, NonFiniteLossError, default_init,
                      fit_continuous, fit_with_discrete)
from .knowledge import (annotate_poses, annotate_regions, builtin_knowledge,
                        UnknownKnowledgeError)
from .templates import (builtin_registry, instantiate_concept,
                        UnknownTemplateError)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(click.ClickException):
    exit_code = EXIT_DATA


@click.group()
def cli():
    """Parametric concept templates for 3D objects."""


@cli.group()
def templates():
    """Inspect the template registry."""


@templates.command("list")
def templates_list():
    """Print all template ids, one per line, sorted."""
    reg = builtin_registry()
    for d in reg.descriptors():
        kind = d["kind"]
        params = ",".join(p["name"] for p in d["params"])
        click.echo(f"{d['id']}\t{kind}\t{params}")


def _parse_params(reg, template_id, pairs):
    tdef = reg.get(template_id)
    values = {s.name: s.default for s in tdef.param_specs}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--param expects name=value, got {pair!r}")
        name, _, raw = pair.partition("=")
        if name not in values:
            known = ", ".join(s.name for s in tdef.param_specs)
            raise click.UsageError(
                f"unknown parameter {name!r} for {template_id} (known: {known})")
        try:
            values[name] = float(raw)
        except ValueError:
            raise click.UsageError(f"bad value for {name!r}: {raw!r}") from None
    return np.array([values[s.name] for s in tdef.param_specs])


@cli.command()
@click.argument("template_id")
@click.option("--param", "params", multiple=True, metavar="NAME=VALUE",
              help="Override a continuous parameter (repeatable).")
@click.option("--resolution", default=16, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def instantiate(template_id, params, resolution, out_path):
    """Instantiate TEMPLATE_ID and write the merged mesh (OBJ or PLY)."""
    reg = builtin_registry()
    try:
        reg.get(template_id)
    except UnknownTemplateError as exc:
        raise DataError(str(exc)) from None
    cont = _parse_params(reg, template_id, params)
    inst = reg.default_instance(template_id).with_params(continuous=cont)
    try:
        reg.validate_instance(inst)
        expanded = instantiate_concept(reg, inst, resolution)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    asset_io.save_mesh(out_path, expanded.merged)
    click.echo(f"wrote {out_path}: {expanded.merged.n_vertices} vertices, "
               f"{expanded.merged.n_faces} faces")


@cli.command()
@click.option("--target", "target_path", required=True, type=click.Path())
@click.option("--template", "template_id", required=True)
@click.option("--discrete-search", is_flag=True,
              help="Enumerate discrete parameters instead of using defaults.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--max-iters", default=200, show_default=True)
@click.option("--step-size", default=0.05, show_default=True)
@click.option("--resolution", default=16, show_default=True)
@click.option("--mesh-samples", default=1024, show_default=True)
@click.option("--multi-start", default=3, show_default=True)
def fit(target_path, template_id, discrete_search, out_path, seed, max_iters,
        step_size, resolution, mesh_samples, multi_start):
    """Fit TEMPLATE to a point cloud and write the instance as JSON."""
    reg = builtin_registry()
    try:
        reg.get(template_id)
        target = asset_io.load_point_cloud(target_path)
    except (UnknownTemplateError, ValueError, OSError) as exc:
        raise DataError(str(exc)) from None
    cfg = FitConfig(max_iters=max_iters, step_size=step_size, seed=seed,
                    resolution=resolution, mesh_samples=mesh_samples,
                    multi_start=multi_start)
    try:
        if discrete_search:
            result = fit_with_discrete(reg, template_id, target, cfg)
        else:
            init = default_init(reg, template_id, target)
            result = fit_continuous(reg, template_id, init, target, cfg)
    except NonFiniteLossError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    inst = result.best_instance
    payload = {
        "template_id": inst.template_id,
        "continuous": [float(v) for v in inst.continuous],
        "discrete": [int(v) for v in inst.discrete],
        "pose": {"quaternion": [float(v) for v in inst.pose.quaternion],
                 "translation": [float(v) for v in inst.pose.translation]},
        "final_loss": result.final_loss,
        "initial_loss": result.initial_loss,
        "iterations_used": result.iterations_used,
        "converged": result.converged,
    }
    with open(out_path, "wb") as fh:
        fh.write(asset_io.canonical_bytes(payload))
    click.echo(f"wrote {out_path}: loss {result.final_loss:.6g} "
               f"after {result.iterations_used} iterations")


@cli.command()
@click.option("--concept", "concept_path", required=True, type=click.Path())
@click.option("--points", "points_path", required=True, type=click.Path())
@click.option("--knowledge", "knowledge_csv", required=True,
              help="Comma-separated knowledge ids.")
@click.option("--resolution", default=16, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def annotate(concept_path, points_path, knowledge_csv, resolution, out_dir):
    """Propagate knowledge to an object; write region table + pose records."""
    kids = [k for k in knowledge_csv.split(",") if k]
    if not kids:
        raise click.UsageError("--knowledge needs at least one id")
    reg = builtin_registry()
    knowledge = builtin_knowledge()
    try:
        knowledge.check(kids)
        c = asset_io.load_document(concept_path, reg)
        cloud = asset_io.load_point_cloud(points_path)
    except (UnknownKnowledgeError, asset_io.DocumentError,
            ValueError, OSError) as exc:
        raise DataError(str(exc)) from None
    cmap = build_correspondence(reg, cloud, c, resolution)
    regions = annotate_regions(reg, c, cmap, kids, knowledge)
    poses = annotate_poses(reg, c, kids, knowledge)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "regions.tsv"), "w", encoding="utf-8") as fh:
        fh.write(asset_io.region_table_text(regions))
    with open(os.path.join(out_dir, "poses.json"), "wb") as fh:
        fh.write(asset_io.canonical_bytes(asset_io.pose_records(poses)))
    click.echo(f"wrote {out_dir}/regions.tsv and {out_dir}/poses.json")


@cli.command()
@click.argument("directory", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["table", "machine"]),
              default="table", show_default=True)
def stats(directory, fmt):
    """Tabulate instance/parameter statistics over a document corpus."""
    if not os.path.isdir(directory):
        raise DataError(f"not a directory: {directory}")
    reg = builtin_registry()
    result = asset_io.compute_stats(directory, reg)
    if fmt == "machine":
        sys.stdout.buffer.write(asset_io.stats_machine(result))
    else:
        click.echo(asset_io.stats_table(result), nl=False)
        for name, reason in result.skipped:
            click.echo(f"skipped {name}: {reason}", err=True)


@cli.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--asset-dir", default=".", show_default=True)
@click.option("--session-dir", default=".", show_default=True)
@click.option("--max-sessions", default=32, show_default=True)
def serve(port, host, asset_dir, session_dir, max_sessions):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app
    app = create_app(asset_dir=asset_dir, session_dir=session_dir,
                     max_sessions=max_sessions)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_DATA
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
