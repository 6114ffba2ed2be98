import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from posner.core.errors import (
    AllStartsCollidedError,
    MissingParameterError,
    PosnerError,
    SingularGeometryError,
    UsageError,
)
from posner.schemas.generation import PhosphateTemplate, S6Params
from posner.schemas.potential import (
    BuckinghamPair,
    OptimizerConfig,
    PairPotentialParams,
    RelaxResult,
    S6MinimizationResult,
)
from posner.schemas.structure import Structure
from posner.services import generation_service
from posner.services.batch import ordered_map
from posner.storage import potential_file

logger = logging.getLogger(__name__)

SINGULAR_DISTANCE = 1e-6

PhosphateGroups = Sequence[tuple[int, Sequence[int]]]


def default_potential() -> PairPotentialParams:
    """Illustrative rigid-ion parameters; neutral for Ca9(PO4)6. Mirrors potentials/default.env."""
    return PairPotentialParams(
        charges={"Ca": 2.0, "P": 5.0, "O": -2.0},
        buckingham={
            ("O", "O"): BuckinghamPair(a=22764.0, rho=0.149, c=27.88),
            ("Ca", "O"): BuckinghamPair(a=1090.4, rho=0.3437, c=0.0),
            ("P", "O"): BuckinghamPair(a=10150.0, rho=0.25, c=0.0),
        },
    )


def load_potential(path: Path) -> PairPotentialParams:
    return potential_file.read_potential(path)


class _PairTable:
    """Per-pair constants for one element sequence, in pdist order (i < j)."""

    def __init__(self, s: Structure, p: PairPotentialParams, groups: Optional[PhosphateGroups] = None):
        missing = sorted({symbol for symbol in s.symbols if symbol not in p.charges})
        if missing:
            raise MissingParameterError(f"no charge for element(s): {', '.join(missing)}")

        n = s.n_atoms
        self.i, self.j = np.triu_indices(n, k=1)
        charges = np.array([p.charges[symbol] for symbol in s.symbols])
        self.qq = p.coulomb_constant * charges[self.i] * charges[self.j]

        self.a = np.zeros(len(self.i))
        self.rho = np.ones(len(self.i))
        self.c = np.zeros(len(self.i))
        symbols = np.array(s.symbols)
        for (first, second), pair in p.buckingham.items():
            mask = ((symbols[self.i] == first) & (symbols[self.j] == second)) | (
                (symbols[self.i] == second) & (symbols[self.j] == first)
            )
            self.a[mask] = pair.a
            self.rho[mask] = pair.rho if pair.rho > 0 else 1.0
            self.c[mask] = pair.c

        self.active = np.ones(len(self.i), dtype=bool)
        if p.rigid_phosphates:
            if groups is None:
                groups = generation_service.identify_phosphate_groups(s)
            member = np.full(n, -1)
            for index, (phosphorus, oxygens) in enumerate(groups):
                member[[phosphorus, *oxygens]] = index
            self.active &= ~((member[self.i] >= 0) & (member[self.i] == member[self.j]))
        self.cutoff = p.cutoff

    def distances(self, positions: np.ndarray) -> np.ndarray:
        r = pdist(positions)
        if r.size and r.min() < SINGULAR_DISTANCE:
            k = int(r.argmin())
            raise SingularGeometryError(
                f"atoms {self.i[k]} and {self.j[k]} are {r[k]:.2e} Å apart; the pair potential is singular"
            )
        return r

    def mask(self, r: np.ndarray) -> np.ndarray:
        if self.cutoff is None:
            return self.active
        return self.active & (r <= self.cutoff)

    def energy(self, positions: np.ndarray) -> float:
        r = self.distances(positions)
        m = self.mask(r)
        r, qq, a, rho, c = r[m], self.qq[m], self.a[m], self.rho[m], self.c[m]
        return float(np.sum(qq / r + a * np.exp(-r / rho) - c / r**6))

    def gradient(self, positions: np.ndarray) -> np.ndarray:
        r = self.distances(positions)
        m = self.mask(r)
        i, j, r = self.i[m], self.j[m], r[m]
        d_dr = -self.qq[m] / r**2 - (self.a[m] / self.rho[m]) * np.exp(-r / self.rho[m]) + 6.0 * self.c[m] / r**7
        pair_force = (d_dr / r)[:, None] * (positions[i] - positions[j])
        grad = np.zeros_like(positions)
        np.add.at(grad, i, pair_force)
        np.add.at(grad, j, -pair_force)
        return grad


def energy(s: Structure, p: PairPotentialParams, groups: Optional[PhosphateGroups] = None) -> float:
    """Σ_{i<j} k qᵢqⱼ/r + A exp(−r/ρ) − C/r⁶ in eV; element pairs with no Buckingham entry get Coulomb only."""
    return _PairTable(s, p, groups).energy(s.positions)


def gradient(s: Structure, p: PairPotentialParams, groups: Optional[PhosphateGroups] = None) -> np.ndarray:
    """(N, 3) analytic dE/dx in eV/Å."""
    return _PairTable(s, p, groups).gradient(s.positions)


def relax(s: Structure, p: PairPotentialParams, cfg: Optional[OptimizerConfig] = None) -> RelaxResult:
    """
    Local L-BFGS-B relaxation of all coordinates. A step that lands on a
    singular geometry stops the search at the last valid point.
    """
    cfg = cfg or OptimizerConfig()
    table = _PairTable(s, p)
    shape = s.positions.shape
    initial = table.energy(s.positions)
    best = {"x": s.positions.reshape(-1).copy(), "energy": initial}

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        positions = x.reshape(shape)
        value = table.energy(positions)
        if value <= best["energy"]:
            best["x"], best["energy"] = x.copy(), value
        return value, table.gradient(positions).reshape(-1)

    aborted, message, iterations = False, "", 0
    try:
        result = minimize(
            objective,
            s.positions.reshape(-1),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance, "ftol": 1e-15},
        )
        iterations, message = int(result.nit), str(result.message)
    except SingularGeometryError as exc:
        aborted, message = True, exc.detail
        logger.warning(f"Relaxation aborted: {exc.detail}")

    positions = best["x"].reshape(shape)
    max_gradient = float(np.abs(table.gradient(positions)).max())
    relaxed = s.with_positions(positions, energy=best["energy"])
    logger.info(f"Relaxed {initial:.4f} -> {best['energy']:.4f} eV in {iterations} iterations")
    return RelaxResult(
        structure=relaxed,
        initial_energy=initial,
        energy=best["energy"],
        iterations=iterations,
        max_gradient=max_gradient,
        converged=not aborted and max_gradient <= cfg.gradient_tolerance,
        aborted=aborted,
        message=message,
    )


class S6Objective:
    """energy(build_s6(params)) with collisions and invalid parameters mapped to +inf."""

    def __init__(
        self,
        p: PairPotentialParams,
        cfg: OptimizerConfig,
        template: Optional[PhosphateTemplate] = None,
    ):
        self.p = p.with_rigid_phosphates(True)
        self.cfg = cfg
        self.template = template or PhosphateTemplate()
        self._table: Optional[_PairTable] = None

    def structure(self, vector) -> Optional[Structure]:
        try:
            s = generation_service.build_s6(S6Params.from_vector(vector), self.template)
        except (PosnerError, ValidationError):
            return None
        if pdist(s.positions).min() < self.cfg.collision_distance:
            return None
        return s

    def __call__(self, vector) -> float:
        s = self.structure(vector)
        if s is None:
            return math.inf
        if self._table is None:
            self._table = _PairTable(s, self.p, generation_service.assembled_phosphate_groups(s))
        return self._table.energy(s.positions)


def _search(objective: S6Objective, start: S6Params, cfg: OptimizerConfig) -> tuple[np.ndarray, float]:
    x = start.to_vector()
    value = objective(x)
    for _ in range(cfg.restarts + 1):
        simplex = np.vstack([x, x + cfg.initial_simplex_step * np.eye(len(x))])
        result = minimize(
            objective,
            x,
            method="Nelder-Mead",
            options={
                "maxiter": cfg.max_iterations,
                "xatol": cfg.simplex_xatol,
                "fatol": cfg.simplex_fatol,
                "initial_simplex": simplex,
            },
        )
        if result.fun <= value:
            x, value = result.x, float(result.fun)
    return x, value


def minimize_s6(
    starts: Union[int, Sequence[S6Params]],
    p: PairPotentialParams,
    cfg: Optional[OptimizerConfig] = None,
    template: Optional[PhosphateTemplate] = None,
) -> S6MinimizationResult:
    """
    Nelder-Mead over the ten S6 parameters from every start; the lowest
    energy wins, ties to the earliest start. Tetrahedra stay rigid. An integer
    `starts` draws that many starts around the default parameters from `cfg.seed`.
    """
    cfg = cfg or OptimizerConfig()
    if isinstance(starts, int):
        starts = generation_service.random_s6_starts(starts, seed=cfg.seed)
    if not starts:
        raise UsageError("minimize_s6 needs at least one start")
    objective = S6Objective(p, cfg, template)

    viable = [index for index, start in enumerate(starts) if math.isfinite(objective(start.to_vector()))]
    if not viable:
        raise AllStartsCollidedError(f"all {len(starts)} starts collide or are invalid")

    outcomes = ordered_map(lambda index: _search(objective, starts[index], cfg), viable, cfg.workers)
    start_energies: list[Optional[float]] = [None] * len(starts)
    for index, (_, value) in zip(viable, outcomes):
        start_energies[index] = value

    best_index = min(viable, key=lambda index: (start_energies[index], index))
    vector, _ = outcomes[viable.index(best_index)]
    params = S6Params.from_vector(vector)
    structure = generation_service.build_s6(params, objective.template)
    final = objective(vector)
    logger.info(
        f"S6 search: best energy {final:.4f} eV from start {best_index} "
        f"({len(viable)} of {len(starts)} starts viable)"
    )
    return S6MinimizationResult(
        params=params,
        structure=structure.with_positions(structure.positions, energy=final),
        energy=final,
        start_index=best_index,
        starts_tried=len(starts),
        starts_collided=len(starts) - len(viable),
        start_energies=start_energies,
    )
