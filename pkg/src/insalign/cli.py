"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver degeneracy or
inconsistent input, 4 I/O error. Failures also print a one-line JSON error
record on stderr.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from . import __version__
from .config import parse_config, shipped_configs
from .errors import AlignmentError, ConfigError, SchemaError
from .experiment import OUTPUT_ENV, dump_imu, dumps, monte_carlo, output_directory, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, AlignmentError):
        return EXIT_SOLVER
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (AlignmentError, OSError) as exc:
            code = exit_code_for(exc)
            record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
            if isinstance(exc, SchemaError):
                record["path"] = exc.path
            click.echo(json.dumps(record, sort_keys=True), err=True)
            sys.exit(code)

    return wrapper


_out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                           help=f"Output root; overrides ${OUTPUT_ENV} and the config.")


@click.group()
@click.version_option(__version__, prog_name="insalign")
def main():
    """Alignment observability workbench: simulate, estimate, export."""


@main.command()
@click.argument("config")
@_out_option
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--print-summary", is_flag=True, help="Also write the JSON summary to stdout.")
@_guarded
def run(config, out_dir, seed, print_summary):
    """Run the observers of CONFIG (a path or a shipped scenario name)."""
    cfg = parse_config(config)
    if seed is not None:
        cfg.seed = seed
    summary = run_experiment(cfg, out_dir=out_dir)
    d = output_directory(cfg, out_dir)
    if print_summary:
        click.echo(summary.to_json(), nl=False)
    else:
        for f in summary.files:
            click.echo(str(d / f))


@main.command()
@click.argument("config")
@_out_option
@click.option("--runs", type=int, default=None, help="Override the number of runs.")
@click.option("--workers", type=int, default=1, show_default=True, help="Worker processes.")
@_guarded
def montecarlo(config, out_dir, runs, workers):
    """Repeat the EKF of CONFIG over seeds base_seed + i."""
    cfg = parse_config(config)
    if cfg.monte_carlo is None:
        raise ConfigError("config has no monte_carlo block")
    agg = monte_carlo(cfg, out_dir=out_dir, runs=runs, workers=workers)
    agg.pop("rows")
    click.echo(dumps({k: agg[k] for k in ("name", "runs", "n_ok", "residual_stats")}), nl=False)


@main.command("list-scenarios")
def list_scenarios():
    """List the shipped scenario configs."""
    for name, path in shipped_configs().items():
        cfg = parse_config(path)
        click.echo(f"{name}\t{cfg.description}")


@main.command("dump-imu")
@click.argument("config")
@click.option("-o", "--output", "output", type=click.Path(dir_okay=False), default=None,
              help="CSV path; defaults to imu.csv in the output directory.")
@_out_option
@_guarded
def dump_imu_cmd(config, output, out_dir):
    """Write the simulated IMU stream of CONFIG as CSV."""
    cfg = parse_config(config)
    path = output or output_directory(cfg, out_dir) / "imu.csv"
    click.echo(str(dump_imu(cfg, path)))


if __name__ == "__main__":  # pragma: no cover
    main()
