import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from posner.models.enums import ElementKind

UNIT_TOLERANCE = 1e-10


class SymmetryElement(BaseModel):
    """
    One candidate isometry about the centroid. `axis` is the rotation axis for
    Cn/Sn and the plane normal for a mirror; identity and inversion have none.
    """
    kind: ElementKind
    axis: Optional[tuple[float, float, float]] = None
    order: int = Field(1, ge=1)
    score: float = Field(0.0, ge=0.0)

    model_config = ConfigDict(frozen=True)

    @field_validator("axis", mode="before")
    @classmethod
    def _normalize_axis(cls, value):
        if value is None:
            return None
        vector = np.asarray(value, dtype=float).reshape(-1)
        norm = np.linalg.norm(vector)
        if vector.shape != (3,) or not np.isfinite(norm) or norm < UNIT_TOLERANCE:
            raise ValueError("axis must be a non-zero finite 3-vector")
        return tuple(float(x) for x in vector / norm)

    @model_validator(mode="after")
    def _check_kind(self):
        needs_axis = self.kind in (
            ElementKind.PROPER_ROTATION, ElementKind.IMPROPER_ROTATION, ElementKind.MIRROR
        )
        if needs_axis and self.axis is None:
            raise ValueError(f"{self.kind.value} needs an axis")
        if not needs_axis and self.axis is not None:
            raise ValueError(f"{self.kind.value} takes no axis")
        if self.kind == ElementKind.PROPER_ROTATION and self.order < 2:
            raise ValueError("proper rotations need order >= 2")
        if self.kind == ElementKind.IMPROPER_ROTATION and self.order < 3:
            raise ValueError("improper rotations need order >= 3")
        return self

    @property
    def symbol(self) -> str:
        if self.kind == ElementKind.IDENTITY:
            return "E"
        if self.kind == ElementKind.INVERSION:
            return "i"
        if self.kind == ElementKind.MIRROR:
            return "σ"
        prefix = "C" if self.kind == ElementKind.PROPER_ROTATION else "S"
        return f"{prefix}{self.order}"

    def with_score(self, score: float) -> "SymmetryElement":
        return self.model_copy(update={"score": float(score)})

    @classmethod
    def identity(cls) -> "SymmetryElement":
        return cls(kind=ElementKind.IDENTITY)

    @classmethod
    def inversion(cls, score: float = 0.0) -> "SymmetryElement":
        return cls(kind=ElementKind.INVERSION, score=score)

    @classmethod
    def rotation(cls, axis, order: int, score: float = 0.0) -> "SymmetryElement":
        return cls(kind=ElementKind.PROPER_ROTATION, axis=axis, order=order, score=score)

    @classmethod
    def improper(cls, axis, order: int, score: float = 0.0) -> "SymmetryElement":
        return cls(kind=ElementKind.IMPROPER_ROTATION, axis=axis, order=order, score=score)

    @classmethod
    def mirror(cls, normal, score: float = 0.0) -> "SymmetryElement":
        return cls(kind=ElementKind.MIRROR, axis=normal, score=score)


class PointGroup(BaseModel):
    schoenflies: str
    order: float = Field(..., description="Group order; math.inf for the linear and atomic groups")
    elements: tuple[SymmetryElement, ...] = ()
    tolerance: float = Field(..., gt=0)
    principal_axis: Optional[tuple[float, float, float]] = None

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="strings")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.order)

    def count(self, kind: ElementKind, order: Optional[int] = None) -> int:
        return sum(
            1 for e in self.elements
            if e.kind == kind and (order is None or e.order == order)
        )

    def has_inversion(self) -> bool:
        return self.count(ElementKind.INVERSION) > 0
