from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from posner.models.elements import atomic_mass, is_known_element

ORTHONORMAL_TOLERANCE = 1e-10


def _frozen_positions(value) -> np.ndarray:
    array = np.array(value, dtype=float)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ValueError(f"positions must have shape (N, 3), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("positions must be finite")
    array.setflags(write=False)
    return array


class Element(BaseModel):
    symbol: str
    mass: float = Field(..., gt=0, description="Atomic mass (amu)")

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_symbol(cls, symbol: str) -> "Element":
        return cls(symbol=symbol, mass=atomic_mass(symbol))


class Structure(BaseModel):
    """
    Element-tagged coordinates in Å. Atom index i is the same atom in every
    structure derived from this one.
    """
    symbols: tuple[str, ...]
    positions: np.ndarray
    energy: Optional[float] = None
    label: Optional[str] = None
    time_fs: Optional[float] = None

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("symbols", mode="before")
    @classmethod
    def _check_symbols(cls, value):
        symbols = tuple(value)
        if not symbols:
            raise ValueError("a structure needs at least one atom")
        unknown = sorted({s for s in symbols if not is_known_element(s)})
        if unknown:
            raise ValueError(f"unknown element symbols: {', '.join(unknown)}")
        return symbols

    @field_validator("positions", mode="before")
    @classmethod
    def _check_positions(cls, value):
        return _frozen_positions(value)

    @model_validator(mode="after")
    def _check_counts(self):
        if len(self.symbols) != self.positions.shape[0]:
            raise ValueError(
                f"{len(self.symbols)} symbols but {self.positions.shape[0]} positions"
            )
        return self

    @property
    def n_atoms(self) -> int:
        return len(self.symbols)

    @property
    def elements(self) -> tuple[Element, ...]:
        return tuple(Element.from_symbol(s) for s in self.symbols)

    @property
    def masses(self) -> np.ndarray:
        return np.array([atomic_mass(s) for s in self.symbols])

    def census(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for symbol in self.symbols:
            counts[symbol] = counts.get(symbol, 0) + 1
        return counts

    def same_atoms(self, other: "Structure") -> bool:
        return self.symbols == other.symbols

    def with_positions(self, positions, **updates) -> "Structure":
        data = {
            "symbols": self.symbols,
            "positions": positions,
            "energy": self.energy,
            "label": self.label,
            "time_fs": self.time_fs,
        }
        data.update(updates)
        return Structure(**data)


class Trajectory(BaseModel):
    frames: tuple[Structure, ...]
    timestep_fs: Optional[PositiveFloat] = None
    temperature_k: Optional[float] = None
    label: str = ""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_frames(self):
        if not self.frames:
            raise ValueError("a trajectory needs at least one frame")
        symbols = self.frames[0].symbols
        for index, frame in enumerate(self.frames):
            if frame.symbols != symbols:
                raise ValueError(f"frame {index} has a different element sequence than frame 0")
        return self

    @classmethod
    def from_coordinates(
        cls,
        symbols: Sequence[str],
        coordinates,
        energies: Optional[Sequence[Optional[float]]] = None,
        times_fs: Optional[Sequence[Optional[float]]] = None,
        **metadata,
    ) -> "Trajectory":
        coordinates = np.asarray(coordinates, dtype=float)
        frames = []
        for index, positions in enumerate(coordinates):
            frames.append(Structure(
                symbols=tuple(symbols),
                positions=positions,
                energy=None if energies is None else energies[index],
                time_fs=None if times_fs is None else times_fs[index],
            ))
        return cls(frames=tuple(frames), **metadata)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.frames[0].symbols

    def coordinates(self) -> np.ndarray:
        """(F, N, 3) array of all frame positions."""
        return np.stack([frame.positions for frame in self.frames])

    def energies(self) -> list[Optional[float]]:
        return [frame.energy for frame in self.frames]

    def with_frames(self, frames: Sequence[Structure]) -> "Trajectory":
        return Trajectory(
            frames=tuple(frames),
            timestep_fs=self.timestep_fs,
            temperature_k=self.temperature_k,
            label=self.label,
        )

    def slice(self, start: int, stop: int) -> "Trajectory":
        return self.with_frames(self.frames[start:stop])


class RigidTransform(BaseModel):
    """x -> rotation @ x + translation, with a proper rotation."""
    rotation: np.ndarray
    translation: np.ndarray

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, value):
        rotation = np.array(value, dtype=float)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOLERANCE):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation is improper (det != +1)")
        rotation.setflags(write=False)
        return rotation

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, value):
        translation = np.array(value, dtype=float).reshape(-1)
        if translation.shape != (3,) or not np.all(np.isfinite(translation)):
            raise ValueError("translation must be a finite 3-vector")
        translation.setflags(write=False)
        return translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))


class InertiaResult(BaseModel):
    tensor: np.ndarray
    moments: np.ndarray
    axes: np.ndarray
    degenerate_pairs: tuple[tuple[int, int], ...] = ()

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_pairs)
