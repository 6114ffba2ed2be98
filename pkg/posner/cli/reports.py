from datetime import datetime, timezone
from pathlib import Path

import click

from posner.core import paths
from posner.services import report_service
from posner.storage import files


@click.command("report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--timestamp/--no-timestamp", default=False, show_default=True,
              help="Record generation time in the metadata; it never enters the digest.")
def report(run_dir: Path, timestamp: bool):
    """Bundle every artifact in RUN_DIR into report.json and write its JSON schema."""
    generated_at = datetime.now(timezone.utc) if timestamp else None
    bundle = report_service.write_report(run_dir, generated_at)
    click.echo(f"sections: {', '.join(bundle.metadata.sources)}")
    click.echo(f"digest: {bundle.payload_digest}")
    click.echo(f"written: {paths.report_path(run_dir)}")


@click.command("schema")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True,
              help="Directory to write report.schema.json into.")
def schema(out_dir: Path):
    """Write the report JSON schema without building a report."""
    written = files.write_json(paths.report_schema_path(out_dir), report_service.report_schema())
    click.echo(f"written: {written}")


commands = (report, schema)
