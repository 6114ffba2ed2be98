import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, field_validator, model_validator

from posner.models.enums import GenerationMode, PhaseKind
from posner.schemas.structure import Trajectory

Vec3 = tuple[float, float, float]

TETRAHEDRON_SIGNS = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
])


class PhosphateTemplate(BaseModel):
    """Rigid regular PO4 tetrahedron."""
    po_bond: PositiveFloat = Field(1.55, description="P-O distance (Å)")

    model_config = ConfigDict(frozen=True)

    def offsets(self) -> np.ndarray:
        """(4, 3) O positions relative to P, axis-aligned."""
        return TETRAHEDRON_SIGNS * (self.po_bond / math.sqrt(3.0))


class S6Params(BaseModel):
    """
    Ten numbers that pin down an exactly S6 Ca9(PO4)6 cluster about the z axis:
    the axial Ca height, one orbit Ca, one P and the Euler angles (xyz, rad)
    of that P's tetrahedron. Everything else is generated by the group.
    """
    z_axial: PositiveFloat = 3.75
    ca_orbit: Vec3 = (3.54, 0.0, 1.25)
    p_orbit: Vec3 = (2.107, 1.768, 2.1)
    orient: Vec3 = (0.35, 0.55, 0.95)

    model_config = ConfigDict(frozen=True)

    @field_validator("ca_orbit", "p_orbit")
    @classmethod
    def _non_zero(cls, value: Vec3) -> Vec3:
        if math.hypot(*value) <= 0.0:
            raise ValueError("orbit representative must not sit at the origin")
        return value

    def to_vector(self) -> np.ndarray:
        return np.array([self.z_axial, *self.ca_orbit, *self.p_orbit, *self.orient], dtype=float)

    @classmethod
    def from_vector(cls, vector) -> "S6Params":
        values = [float(v) for v in np.asarray(vector, dtype=float).reshape(-1)]
        if len(values) != 10:
            raise ValueError(f"S6 parameter vector needs 10 entries, got {len(values)}")
        return cls(
            z_axial=values[0],
            ca_orbit=tuple(values[1:4]),
            p_orbit=tuple(values[4:7]),
            orient=tuple(values[7:10]),
        )


class GenerationScheme(BaseModel):
    rotation_step: PositiveFloat = Field(30.0, description="Degrees")
    modes: tuple[GenerationMode, ...] = (
        GenerationMode.UNIFORM,
        GenerationMode.PER_GROUP,
        GenerationMode.FULL_PRODUCT,
    )
    scale_factors: tuple[PositiveFloat, ...] = (0.90, 0.95, 1.00, 1.05)
    groups: Optional[tuple[NonNegativeInt, ...]] = Field(
        None, description="Restrict per-group and product modes to these PO4 groups"
    )
    product_cap: NonNegativeInt = Field(
        2600, description="New unique structures the capped product may add"
    )

    model_config = ConfigDict(frozen=True)

    @field_validator("rotation_step")
    @classmethod
    def _divides_turn(cls, value: float) -> float:
        steps = 360.0 / value
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("360 must be divisible by rotation_step")
        return value

    @property
    def steps_per_turn(self) -> int:
        return int(round(360.0 / self.rotation_step))


class GenerationCensus(BaseModel):
    diagonal: float
    rotation_step: float
    candidates: int = Field(..., description="Rotated candidates before deduplication")
    per_mode: dict[str, int] = Field(..., description="Unique structures contributed by each mode")
    rotated_unique: int
    scale_factors: list[float]
    scaled_total: int
    stoichiometry: dict[str, int]


class PlantedPhase(BaseModel):
    kind: PhaseKind
    start_frame: NonNegativeInt
    end_frame: NonNegativeInt

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_span(self):
        if self.end_frame < self.start_frame:
            raise ValueError("end_frame precedes start_frame")
        return self

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


DEFAULT_SCHEDULE = (
    PlantedPhase(kind=PhaseKind.CI_BASIN, start_frame=0, end_frame=399),
    PlantedPhase(kind=PhaseKind.S6_INTERLUDE, start_frame=400, end_frame=439),
    PlantedPhase(kind=PhaseKind.CI_BASIN, start_frame=440, end_frame=559),
    PlantedPhase(kind=PhaseKind.C1_BASIN, start_frame=560, end_frame=719),
    PlantedPhase(kind=PhaseKind.S6_INTERLUDE, start_frame=720, end_frame=749),
    PlantedPhase(kind=PhaseKind.C1_BASIN, start_frame=750, end_frame=899),
)


class SampleTrajectoryConfig(BaseModel):
    seed: int = 20240
    timestep_fs: PositiveFloat = 2.4
    temperature_k: PositiveFloat = 300.0
    equilibration_frames: NonNegativeInt = 100
    schedule: tuple[PlantedPhase, ...] = DEFAULT_SCHEDULE
    axial_shift: PositiveFloat = Field(0.8, description="Å, sideways shift of the axial Ca pair in both basins")
    inversion_break: PositiveFloat = Field(0.5, description="Å, per-atom shift that removes the inversion centre")
    broken_pairs: int = Field(12, ge=2, description="Inversion pairs moved in the C1 basin; even")
    symmetric_noise: float = Field(0.1, ge=0, description="Å, S6-preserving jitter per frame")
    thermal_noise: float = Field(0.03, ge=0, description="Å, jitter that keeps the basin's own symmetry")
    phase_energies: dict[PhaseKind, float] = {
        PhaseKind.CI_BASIN: -271.6,
        PhaseKind.C1_BASIN: -271.2,
        PhaseKind.S6_INTERLUDE: -270.4,
    }
    energy_noise: float = Field(0.25, ge=0, description="eV")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_schedule(self):
        if not self.schedule:
            raise ValueError("schedule is empty")
        expected = 0
        for phase in self.schedule:
            if phase.start_frame != expected:
                raise ValueError(f"schedule gap or overlap at frame {expected}")
            expected = phase.end_frame + 1
        if self.broken_pairs % 2:
            raise ValueError("broken_pairs must be even")
        return self

    @property
    def n_frames(self) -> int:
        return self.schedule[-1].end_frame + 1


class SampleTrajectory(BaseModel):
    trajectory: Trajectory
    phases: tuple[PlantedPhase, ...]
    amplitude_bound: float = Field(..., description="Largest per-atom offset between planted bases (Å)")
    equilibration_frames: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)
