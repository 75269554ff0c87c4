"""Command line entry point: ``typesampler run`` and ``typesampler annotate``."""

from __future__ import annotations

import json
import logging
import os
import sys
import traceback

import click

from . import pipeline
from .annotation_writer import parse_version
from .runtime_agent import TOOL_DIR, Agent, AgentConfig
from .trace_model import TraceFormatError, read_store, write_store

logger = logging.getLogger("typesampler")

DEFAULT_TRACE_FILE = "typesampler-traces.jsonl"
DEFAULT_REPORT = "typesampler-anomalies.jsonl"

EXIT_OK = 0
EXIT_TARGET = 1
EXIT_TOOL = 2


class ToolError(click.ClickException):
    exit_code = EXIT_TOOL


def _load_config(ctx: click.Context, _param, path: str | None) -> str | None:
    """Reads a JSON config file whose keys mirror the long flag names; flags given explicitly win."""
    if not path:
        return path
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise click.BadParameter(f"cannot read config: {e}") from e
    if not isinstance(data, dict):
        raise click.BadParameter("config must be a JSON object")
    flat = {k.replace("-", "_"): v for k, v in data.items()}
    ctx.default_map = {**(ctx.default_map or {}), **flat}
    return path


def _version(_ctx, _param, value: str) -> tuple[int, int]:
    try:
        return parse_version(value)
    except ValueError as e:
        raise click.BadParameter(str(e)) from e


def _fraction(_ctx, _param, value: float) -> float:
    if not (0 < value <= 1):
        raise click.BadParameter("must be in (0, 1]")
    return value


config_option = click.option("--config", type=click.Path(dir_okay=False), callback=_load_config,
                             is_eager=True, expose_value=False, help="JSON file with default option values.")


def run_options(f):
    for opt in reversed([
        click.option("--output", "-o", default=DEFAULT_TRACE_FILE, show_default=True, help="Trace file to write."),
        click.option("--budget", type=float, default=0.05, show_default=True, callback=_fraction,
                     help="Target share of run time spent in the tool."),
        click.option("--container-sample", type=click.IntRange(1), default=1000, show_default=True,
                     help="Elements sampled per container."),
        click.option("--infer-shapes", is_flag=True, help="Record array shapes."),
        click.option("--include", multiple=True, help="Only instrument matching files (glob or path)."),
        click.option("--exclude", multiple=True, help="Never instrument matching files."),
        click.option("--root", type=click.Path(file_okay=False), help="Instrument files under this directory "
                                                                       "(default: current directory)."),
        click.option("--seed", type=int, default=0, show_default=True, help="Sampling seed."),
        click.option("--module", "-m", "module", is_flag=True, help="Treat TARGET as a module name."),
    ]):
        f = opt(f)
    return f


def annotate_options(f):
    for opt in reversed([
        click.option("--coverage", type=float, default=0.8, show_default=True, callback=_fraction,
                     help="Share of calls the kept traces must cover."),
        click.option("--target-version", default="3.12", show_default=True, callback=_version,
                     help="Python version the annotations must be valid for (3.9 to 3.13)."),
        click.option("--diff", is_flag=True, help="Print a unified diff instead of editing files."),
        click.option("--overwrite", is_flag=True, help="Replace existing annotations."),
        click.option("--no-backup", is_flag=True, help="Do not keep FILE.bak copies."),
        click.option("--report", default=DEFAULT_REPORT, show_default=True, help="Anomaly report path."),
    ]):
        f = opt(f)
    return f


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="More logging.")
def main(verbose: int) -> None:
    """Infers type annotations by observing a running program."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="typesampler: %(levelname)s: %(message)s")


def _strip_tool_frames(tb):
    frames = traceback.extract_tb(tb)
    return [fr for fr in frames if not os.path.realpath(fr.filename).startswith(TOOL_DIR)
            and not fr.filename.startswith("<frozen runpy")]


def _execute(agent: Agent, target: str, args: tuple[str, ...], module: bool) -> int:
    """Runs the target under the agent and returns its exit status."""
    try:
        if module:
            agent.run_module(target, list(args))
        else:
            agent.run_path(target, list(args))
    except SystemExit as e:
        code = e.code
        if code is None:
            return EXIT_OK
        if isinstance(code, int):
            return code
        print(code, file=sys.stderr)
        return EXIT_TARGET
    except KeyboardInterrupt:
        return 130
    except BaseException as e:
        sys.stderr.write("Traceback (most recent call last):\n")
        sys.stderr.write("".join(traceback.format_list(_strip_tool_frames(e.__traceback__))))
        sys.stderr.write("".join(traceback.format_exception_only(type(e), e)))
        return EXIT_TARGET
    return EXIT_OK


def do_run(target: str, args: tuple[str, ...], module: bool, output: str, config: AgentConfig) -> int:
    if not module and not os.path.isfile(target):
        raise ToolError(f"no such script: {target}")
    output = os.path.abspath(output)
    try:
        agent = Agent(config)
        agent.start()
    except Exception as e:
        raise ToolError(f"could not start the agent: {e}") from e
    saved_argv, saved_path = sys.argv[:], sys.path[:]
    try:
        status = _execute(agent, target, args, module)
    finally:
        store = agent.finalize()
        sys.argv[:] = saved_argv
        sys.path[:] = saved_path
        sys.stdout.flush()
        try:
            with open(output, "w", encoding="utf-8") as f:
                write_store(store, f)
        except OSError as e:
            raise ToolError(f"cannot write {output}: {e}") from e
    logger.info("wrote %d traces for %d functions to %s", len(store), len(store.entries), output)
    return status


def _agent_config(budget, container_sample, infer_shapes, include, exclude, root, seed) -> AgentConfig:
    return AgentConfig(budget=budget, sample_size=container_sample, infer_shapes=infer_shapes,
                       include=tuple(include), exclude=tuple(exclude), root=root, seed=seed)


def do_annotate(trace_files, cfg: pipeline.AnnotateConfig, report: str) -> int:
    try:
        store = pipeline.load_stores(trace_files)
    except (OSError, TraceFormatError) as e:
        raise ToolError(str(e)) from e
    result = pipeline.annotate(store, cfg)
    for path in sorted(result.diffs):
        click.echo(result.diffs[path], nl=False)
    pipeline.write_report(result.anomalies, report)
    for path, why in sorted(result.skipped.items()):
        click.echo(f"skipped {path}: {why}", err=True)
    verb = "would edit" if cfg.diff else "edited"
    click.echo(f"{verb} {len(result.edited)} file(s); {len(result.skipped)} skipped; "
               f"{len(result.anomalies)} anomalous trace(s) in {report}", err=True)
    return EXIT_OK


@main.command(context_settings={"ignore_unknown_options": True, "allow_interspersed_args": False})
@config_option
@run_options
@click.option("--annotate", "then_annotate", is_flag=True, help="Annotate right after the run.")
@annotate_options
@click.argument("target")
@click.argument("args", nargs=-1, type=click.UNPROCESSED)
def run(target, args, module, output, budget, container_sample, infer_shapes, include, exclude, root, seed,
        then_annotate, coverage, target_version, diff, overwrite, no_backup, report):
    """Runs TARGET (a script, or a module with -m) and records call traces."""
    config = _agent_config(budget, container_sample, infer_shapes, include, exclude, root, seed)
    status = do_run(target, args, module, output, config)
    if then_annotate:
        cfg = pipeline.AnnotateConfig(coverage=coverage, target=target_version, infer_shapes=infer_shapes,
                                      overwrite=overwrite, backup=not no_backup, diff=diff,
                                      include=tuple(include), exclude=tuple(exclude), root=root)
        do_annotate([output], cfg, report)
    sys.exit(status)


@main.command()
@config_option
@annotate_options
@click.option("--infer-shapes", is_flag=True, help="Annotate array shapes found in the traces.")
@click.option("--include", multiple=True, help="Only edit matching files.")
@click.option("--exclude", multiple=True, help="Never edit matching files.")
@click.option("--root", type=click.Path(file_okay=False), help="Only edit files under this directory.")
@click.argument("trace_files", nargs=-1, type=click.Path(dir_okay=False))
def annotate(trace_files, coverage, target_version, diff, overwrite, no_backup, report, infer_shapes,
             include, exclude, root):
    """Writes annotations inferred from TRACE_FILES into the traced sources."""
    trace_files = trace_files or (DEFAULT_TRACE_FILE,)
    cfg = pipeline.AnnotateConfig(coverage=coverage, target=target_version, infer_shapes=infer_shapes,
                                  overwrite=overwrite, backup=not no_backup, diff=diff,
                                  include=tuple(include), exclude=tuple(exclude), root=root)
    sys.exit(do_annotate(trace_files, cfg, report))


@main.command()
@click.argument("trace_file", type=click.Path(dir_okay=False, exists=True))
def show(trace_file):
    """Prints a trace file's contents in readable form."""
    try:
        store = read_store(trace_file)
    except TraceFormatError as e:
        raise ToolError(str(e)) from e
    for fn in sorted(store.entries, key=lambda k: (k.source_path, k.first_line)):
        click.echo(f"{fn}")
        for tr, n in sorted(store.entries[fn].items(), key=lambda kv: -kv[1]):
            click.echo(f"  {n:>6}  {pipeline._trace_sig(tr)}")


if __name__ == "__main__":
    main()
