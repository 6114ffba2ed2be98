import logging
from pathlib import Path
from typing import Optional

import click

from posner.cli.dependencies import (
    out_dir_option,
    parse_float_list,
    parse_int_list,
    tolerance_option,
    workers_option,
)
from posner.core import paths
from posner.core.errors import CensusShortfallError
from posner.models.enums import GenerationMode
from posner.schemas.generation import GenerationScheme
from posner.schemas.potential import OptimizerConfig
from posner.schemas.report import S6MinSummary
from posner.services import (
    forcefield_service,
    generation_service,
    report_service,
    symmetry_service,
    trajectory_stats_service,
)
from posner.storage import files, xyz

logger = logging.getLogger(__name__)


@click.command("generate")
@click.option("--diagonal", type=float, default=generation_service.DEFAULT_DIAGONAL, show_default=True,
              help="Ca-Ca cube body diagonal (Å).")
@click.option("--step", type=float, default=30.0, show_default=True, help="Euler lattice step (degrees).")
@click.option("--scales", callback=parse_float_list, default="0.9,0.95,1.0,1.05", show_default=True,
              help="Comma-separated radial scale factors.")
@click.option("--mode", "modes", multiple=True, type=click.Choice([m.value for m in GenerationMode]),
              help="Rotation modes to run, in order [default: all].")
@click.option("--groups", callback=parse_int_list, default=None, help="Comma-separated PO4 groups to sweep.")
@click.option("--product-cap", type=click.IntRange(min=0), default=2600, show_default=True,
              help="New unique structures the capped product may add.")
@click.option("--strict/--no-strict", default=True, show_default=True,
              help="Fail when the default scheme falls short of its expected counts.")
@out_dir_option
def generate(
    diagonal: float,
    step: float,
    scales: tuple[float, ...],
    modes: tuple[str, ...],
    groups: Optional[tuple[int, ...]],
    product_cap: int,
    strict: bool,
    out_dir: Path,
):
    """
    Enumerate rotated and scaled Ca9(PO4)6 starting structures.
    """
    scheme = GenerationScheme(
        rotation_step=step,
        scale_factors=scales,
        groups=groups,
        product_cap=product_cap,
        **({"modes": tuple(GenerationMode(m) for m in modes)} if modes else {}),
    )
    rotated, scaled, census = generation_service.generate(diagonal, scheme)
    files.write_json(paths.census_path(out_dir), census)
    if scheme == GenerationScheme():
        try:
            generation_service.check_census(census)
        except CensusShortfallError as exc:
            if strict:
                raise
            logger.warning(exc.detail)
    xyz.write_structures(paths.rotated_structures_path(out_dir), rotated)
    xyz.write_structures(paths.scaled_structures_path(out_dir), scaled)

    click.echo(f"candidates: {census.candidates}")
    for mode, count in census.per_mode.items():
        click.echo(f"{mode}: {count}")
    click.echo(f"rotated unique: {census.rotated_unique}")
    click.echo(f"scaled total: {census.scaled_total}")


@click.command("detect")
@click.argument("structure_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@tolerance_option
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Also write detect.json here.")
def detect(structure_path: Path, tol: Optional[float], out_dir: Optional[Path]):
    """
    Print the Schoenflies label, group order and accepted elements of one structure.
    """
    structure = xyz.read_xyz(structure_path)
    group = symmetry_service.detect_point_group(structure, tol)
    summary = report_service.detection_summary(structure_path.name, group)
    if out_dir is not None:
        files.write_json(paths.detection_path(out_dir), summary)

    click.echo(summary.schoenflies)
    click.echo(f"order: {'inf' if summary.order is None else summary.order}")
    for element in summary.elements:
        axis = "" if element.axis is None else " axis ({:+.4f}, {:+.4f}, {:+.4f})".format(*element.axis)
        click.echo(f"{element.symbol:<4} score {element.score:.4f}{axis}")


@click.command("s6min")
@click.option("--starts", type=click.IntRange(min=1), default=8, show_default=True, help="Number of starts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--potential", "potential_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="KEY=VALUE potential file [default: built-in parameters].")
@click.option("--restarts", type=click.IntRange(min=0), default=1, show_default=True,
              help="Simplex restarts per start.")
@click.option("--max-iterations", type=click.IntRange(min=1), default=2000, show_default=True)
@tolerance_option
@workers_option
@out_dir_option
def s6min(
    starts: int,
    seed: int,
    potential_path: Optional[Path],
    restarts: int,
    max_iterations: int,
    tol: Optional[float],
    workers: Optional[int],
    out_dir: Path,
):
    """
    Minimise the pair-potential energy over S6-constrained structures, then
    relax the winner without constraints.
    """
    potential = (
        forcefield_service.load_potential(potential_path) if potential_path
        else forcefield_service.default_potential()
    )
    cfg = OptimizerConfig(max_iterations=max_iterations, restarts=restarts, workers=workers, seed=seed)
    result = forcefield_service.minimize_s6(starts, potential, cfg)
    label = symmetry_service.detect_point_group(result.structure, tol).schoenflies

    relaxed = forcefield_service.relax(result.structure, potential.with_rigid_phosphates(False), cfg)
    relaxed_label = symmetry_service.detect_point_group(relaxed.structure, tol).schoenflies

    summary = S6MinSummary(
        params=result.params.model_dump(),
        energy=result.energy,
        start_index=result.start_index,
        starts_tried=result.starts_tried,
        starts_collided=result.starts_collided,
        label=label,
        relaxed_energy=relaxed.energy,
        relaxed_label=relaxed_label,
        relaxed_converged=relaxed.converged,
    )
    files.write_json(paths.s6min_params_path(out_dir), summary)
    xyz.write_xyz(paths.s6min_xyz_path(out_dir), result.structure)
    click.echo(f"energy: {result.energy:.6f} eV (start {result.start_index}, {label})")
    click.echo(f"relaxed: {relaxed.energy:.6f} eV ({relaxed_label}, converged={relaxed.converged})")


@click.command("formation")
@click.option("--cluster", "e_cluster", type=float, required=True, help="Cluster energy (eV).")
@click.option("--unit", "e_unit", type=float, required=True, help="Energy of one formula unit (eV).")
@click.option("--n", "n_units", type=click.IntRange(min=1), required=True, help="Formula units in the cluster.")
def formation(e_cluster: float, e_unit: float, n_units: int):
    """Is the cluster favoured over n separate units?"""
    check = trajectory_stats_service.formation_check(e_cluster, e_unit, n_units)
    click.echo(f"delta: {check.delta} eV")
    click.echo(f"more stable: {'yes' if check.more_stable else 'no'}")


commands = (generate, detect, s6min, formation)
