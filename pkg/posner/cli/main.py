import json
import logging

import click
from pydantic import ValidationError

import posner
from posner.cli import reports, structures, trajectories
from posner.core.config import settings
from posner.core.errors import PosnerError, UsageError

logger = logging.getLogger(__name__)

DATA_ERROR_EXIT = PosnerError.exit_code
USAGE_ERROR_EXIT = UsageError.exit_code
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _emit_error(ctx: click.Context, name: str, detail: str, exit_code: int) -> None:
    if ctx.find_root().params.get("json_errors"):
        click.echo(json.dumps({"error": name, "detail": detail, "exit_code": exit_code}), err=True)
    else:
        click.echo(f"Error: {detail}", err=True)
    ctx.exit(exit_code)


class PosnerGroup(click.Group):
    """Maps library errors onto exit codes: 1 for usage, 2 for data."""

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as exc:
            exc.exit_code = USAGE_ERROR_EXIT
            raise

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            if ctx.params.get("json_errors"):
                _emit_error(ctx, type(exc).__name__, exc.format_message(), USAGE_ERROR_EXIT)
            exc.exit_code = USAGE_ERROR_EXIT
            raise
        except PosnerError as exc:
            logger.debug(f"{type(exc).__name__}: {exc.detail}")
            _emit_error(ctx, type(exc).__name__, exc.detail, exc.exit_code)
        except ValidationError as exc:
            detail = "; ".join(error["msg"] for error in exc.errors())
            _emit_error(ctx, type(exc).__name__, detail, DATA_ERROR_EXIT)


@click.group(cls=PosnerGroup)
@click.version_option(posner.__version__, prog_name="posner")
@click.option("--json-errors", is_flag=True, default=False, help="Write errors to stderr as a JSON object.")
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default=None,
    help="Overrides POSNER_LOG_LEVEL.",
)
def cli(json_errors: bool, log_level: str | None):
    """Symmetry, dynamics and generation tools for Ca9(PO4)6 clusters."""
    logging.basicConfig(
        level=(log_level or settings.POSNER_LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


for module in (structures, trajectories, reports):
    for command in module.commands:
        cli.add_command(command)


def main() -> None:
    cli(prog_name="posner")
