"""
XYZ and multi-frame XYZ.

Frame layout: atom count, comment, then one `El x y z` row per atom.
The comment carries an optional free-text label followed by the keys
`energy=<eV>` and `time_fs=<fs>`; any other `key=value` token is ignored.
Labels that contain `=`, whitespace or quotes are written as a shell-quoted
`label=...` token so they survive a round trip. Coordinates are written with
9 significant digits.
"""
import logging
import shlex
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from posner.core.errors import XyzParseError
from posner.models.elements import is_known_element
from posner.schemas.structure import Structure, Trajectory
from posner.storage.files import atomic_write_text

logger = logging.getLogger(__name__)

ENERGY_KEY = "energy"
TIME_KEY = "time_fs"
LABEL_KEY = "label"
COORDINATE_FORMAT = ".9g"


def _comment_tokens(comment: str) -> list[str]:
    try:
        return shlex.split(comment)
    except ValueError:
        # unbalanced quote in a foreign comment line
        return comment.split()


def _parse_comment(comment: str, line: int) -> tuple[Optional[str], Optional[float], Optional[float]]:
    label_tokens, values = [], {}
    explicit_label: Optional[str] = None
    for token in _comment_tokens(comment):
        key, sep, value = token.partition("=")
        if not sep:
            label_tokens.append(token)
            continue
        if key == LABEL_KEY:
            explicit_label = value
        elif key in (ENERGY_KEY, TIME_KEY):
            try:
                values[key] = float(value)
            except ValueError:
                raise XyzParseError(f"malformed {key} value '{value}'", line) from None
    label = explicit_label if explicit_label is not None else " ".join(label_tokens)
    return label or None, values.get(ENERGY_KEY), values.get(TIME_KEY)


def _read_frame(lines: list[str], start: int) -> tuple[Structure, int]:
    """Parse the frame whose count line is lines[start]; returns it and the next frame's start."""
    count_line = start + 1
    try:
        n_atoms = int(lines[start].strip())
    except ValueError:
        raise XyzParseError(f"expected an atom count, got '{lines[start].strip()}'", count_line) from None
    if n_atoms < 1:
        raise XyzParseError(f"atom count must be positive, got {n_atoms}", count_line)
    if start + 1 >= len(lines):
        raise XyzParseError("missing comment line", count_line + 1)
    label, energy, time_fs = _parse_comment(lines[start + 1], count_line + 1)

    symbols, positions = [], []
    for offset in range(n_atoms):
        index = start + 2 + offset
        line = index + 1
        if index >= len(lines) or not lines[index].strip():
            raise XyzParseError(f"expected {n_atoms} atom rows, found {offset}", line)
        fields = lines[index].split()
        if len(fields) < 4:
            raise XyzParseError(f"expected 'element x y z', got '{lines[index].strip()}'", line)
        symbol = fields[0].capitalize()
        if not is_known_element(symbol):
            raise XyzParseError(f"unknown element '{fields[0]}'", line)
        try:
            positions.append([float(value) for value in fields[1:4]])
        except ValueError:
            raise XyzParseError(f"malformed coordinate in '{lines[index].strip()}'", line) from None
        symbols.append(symbol)

    try:
        structure = Structure(
            symbols=tuple(symbols), positions=np.array(positions), energy=energy, label=label, time_fs=time_fs
        )
    except ValidationError as exc:
        raise XyzParseError(str(exc.errors()[0]["msg"]), count_line) from None
    return structure, start + 2 + n_atoms


def _frames(text: str) -> list[tuple[Structure, int]]:
    """Every frame with the 1-based line number of its atom count."""
    lines = text.splitlines()
    frames, cursor = [], 0
    while cursor < len(lines):
        if not lines[cursor].strip():
            cursor += 1
            continue
        header = cursor + 1
        frame, cursor = _read_frame(lines, cursor)
        frames.append((frame, header))
    return frames


def parse_xyz(text: str) -> Structure:
    frames = _frames(text)
    if not frames:
        raise XyzParseError("no frame found", 1)
    if len(frames) > 1:
        raise XyzParseError(f"expected a single frame, found {len(frames)}", frames[1][1])
    return frames[0][0]


def parse_traj(text: str, timestep_fs: Optional[float] = None, label: str = "") -> Trajectory:
    """
    Concatenated frames sharing one element sequence. Without an explicit
    timestep, it is taken from the first two frame times when both are present.
    """
    located = _frames(text)
    if not located:
        raise XyzParseError("no frame found", 1)
    frames = [frame for frame, _ in located]
    for index, (frame, header) in enumerate(located):
        if not frame.same_atoms(frames[0]):
            raise XyzParseError(f"frame {index} has a different element sequence than frame 0", header)
    if timestep_fs is None and len(frames) > 1:
        first, second = frames[0].time_fs, frames[1].time_fs
        if first is not None and second is not None and second > first:
            timestep_fs = second - first
    logger.debug(f"Parsed {len(frames)} frames of {frames[0].n_atoms} atoms")
    return Trajectory(frames=tuple(frames), timestep_fs=timestep_fs, label=label)


def _label_token(label: str) -> str:
    quoted = shlex.quote(label)
    return label if quoted == label and "=" not in label else f"{LABEL_KEY}={quoted}"


def _comment(s: Structure) -> str:
    tokens = [_label_token(s.label)] if s.label else []
    if s.energy is not None:
        tokens.append(f"{ENERGY_KEY}={float(s.energy)!r}")
    if s.time_fs is not None:
        tokens.append(f"{TIME_KEY}={float(s.time_fs)!r}")
    return " ".join(tokens)


def format_xyz(s: Structure) -> str:
    rows = [str(s.n_atoms), _comment(s)]
    for symbol, (x, y, z) in zip(s.symbols, s.positions):
        rows.append(f"{symbol} {x:{COORDINATE_FORMAT}} {y:{COORDINATE_FORMAT}} {z:{COORDINATE_FORMAT}}")
    return "\n".join(rows) + "\n"


def format_traj(traj: Trajectory) -> str:
    return "".join(format_xyz(frame) for frame in traj.frames)


def read_xyz(path: Path) -> Structure:
    return parse_xyz(Path(path).read_text(encoding="utf-8"))


def read_traj(path: Path, timestep_fs: Optional[float] = None) -> Trajectory:
    path = Path(path)
    return parse_traj(path.read_text(encoding="utf-8"), timestep_fs=timestep_fs, label=path.stem)


def write_xyz(path: Path, s: Structure) -> Path:
    return atomic_write_text(path, format_xyz(s))


def write_structures(path: Path, structures) -> Path:
    return atomic_write_text(path, "".join(format_xyz(s) for s in structures))


def write_traj(path: Path, traj: Trajectory) -> Path:
    return atomic_write_text(path, format_traj(traj))
