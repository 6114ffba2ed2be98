from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, field_validator, model_validator

from posner.schemas.generation import S6Params
from posner.schemas.structure import Structure

COULOMB_CONSTANT = 14.399645  # eV·Å/e²


class BuckinghamPair(BaseModel):
    a: float = Field(0.0, description="eV")
    rho: float = Field(1.0, description="Å")
    c: float = Field(0.0, description="eV·Å⁶")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_rho(self):
        if self.a != 0.0 and self.rho <= 0.0:
            raise ValueError("rho must be positive where A is non-zero")
        return self


def pair_key(first: str, second: str) -> tuple[str, str]:
    return tuple(sorted((first, second)))


class PairPotentialParams(BaseModel):
    """Rigid-ion Coulomb + Buckingham pair potential."""
    charges: dict[str, float]
    buckingham: dict[tuple[str, str], BuckinghamPair] = {}
    cutoff: Optional[PositiveFloat] = None
    coulomb_constant: float = COULOMB_CONSTANT
    rigid_phosphates: bool = False

    model_config = ConfigDict(frozen=True)

    @field_validator("buckingham")
    @classmethod
    def _canonical_pairs(cls, value):
        return {pair_key(*key): pair for key, pair in value.items()}

    def pair(self, first: str, second: str) -> Optional[BuckinghamPair]:
        return self.buckingham.get(pair_key(first, second))

    def total_charge(self, structure: Structure) -> float:
        return float(sum(self.charges.get(s, 0.0) for s in structure.symbols))

    def with_rigid_phosphates(self, rigid: bool = True) -> "PairPotentialParams":
        return self.model_copy(update={"rigid_phosphates": rigid})


class OptimizerConfig(BaseModel):
    max_iterations: PositiveInt = 500
    gradient_tolerance: PositiveFloat = Field(1e-4, description="eV/Å, max per-coordinate gradient")
    restarts: int = Field(0, ge=0, description="Simplex restarts from each start's best point")
    initial_simplex_step: PositiveFloat = Field(0.1, description="Å or rad per parameter")
    simplex_xatol: PositiveFloat = 1e-6
    simplex_fatol: PositiveFloat = 1e-8
    collision_distance: PositiveFloat = Field(1.0, description="Å, closest allowed pair in the S6 search")
    workers: Optional[PositiveInt] = None
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class RelaxResult(BaseModel):
    structure: Structure
    initial_energy: float
    energy: float
    iterations: int
    max_gradient: float
    converged: bool
    aborted: bool = False
    message: str = ""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class S6MinimizationResult(BaseModel):
    params: S6Params
    structure: Structure
    energy: float
    start_index: int
    starts_tried: int
    starts_collided: int
    start_energies: list[Optional[float]]

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def parameter_vector(self) -> np.ndarray:
        return self.params.to_vector()
