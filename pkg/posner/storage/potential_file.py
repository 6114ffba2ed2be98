import logging
from pathlib import Path

from dotenv import dotenv_values
from pydantic import ValidationError

from posner.core.errors import MissingParameterError, PosnerError, UsageError
from posner.schemas.potential import COULOMB_CONSTANT, BuckinghamPair, PairPotentialParams, pair_key

logger = logging.getLogger(__name__)

BUCKINGHAM_FIELDS = {"A": "a", "RHO": "rho", "C": "c"}


def _number(key: str, value) -> float:
    if value is None or value.strip() == "":
        raise MissingParameterError(f"{key} has no value")
    try:
        return float(value)
    except ValueError:
        raise PosnerError(f"{key}: '{value}' is not a number") from None


def parse_potential(values: dict) -> PairPotentialParams:
    """
    KEY=VALUE entries to parameters:
    CHARGE_<El>, BUCK_<El1>_<El2>_{A,RHO,C}, CUTOFF, COULOMB_CONSTANT.
    """
    charges: dict[str, float] = {}
    pairs: dict[tuple[str, str], dict[str, float]] = {}
    cutoff, coulomb_constant = None, COULOMB_CONSTANT

    for key, value in values.items():
        if key.startswith("CHARGE_"):
            charges[key.removeprefix("CHARGE_")] = _number(key, value)
        elif key.startswith("BUCK_"):
            parts = key.removeprefix("BUCK_").split("_")
            if len(parts) != 3 or parts[2] not in BUCKINGHAM_FIELDS:
                raise PosnerError(f"'{key}' is not BUCK_<El1>_<El2>_<A|RHO|C>")
            pairs.setdefault(pair_key(parts[0], parts[1]), {})[BUCKINGHAM_FIELDS[parts[2]]] = _number(key, value)
        elif key == "CUTOFF":
            cutoff = _number(key, value)
        elif key == "COULOMB_CONSTANT":
            coulomb_constant = _number(key, value)
        else:
            raise PosnerError(f"unrecognised potential key '{key}'")

    if not charges:
        raise MissingParameterError("the potential file defines no CHARGE_<El> entries")
    try:
        return PairPotentialParams(
            charges=charges,
            buckingham={key: BuckinghamPair(**fields) for key, fields in pairs.items()},
            cutoff=cutoff,
            coulomb_constant=coulomb_constant,
        )
    except ValidationError as exc:
        raise PosnerError(f"invalid potential parameters: {exc.errors()[0]['msg']}") from None


def read_potential(path: Path) -> PairPotentialParams:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"potential file {path} does not exist")
    params = parse_potential(dotenv_values(path))
    logger.info(f"Loaded potential from {path}: {len(params.charges)} charges, {len(params.buckingham)} Buckingham pairs")
    return params


def format_potential(params: PairPotentialParams) -> str:
    rows = [f"CHARGE_{symbol}={charge!r}" for symbol, charge in params.charges.items()]
    for (first, second), pair in params.buckingham.items():
        rows += [
            f"BUCK_{first}_{second}_A={pair.a!r}",
            f"BUCK_{first}_{second}_RHO={pair.rho!r}",
            f"BUCK_{first}_{second}_C={pair.c!r}",
        ]
    if params.cutoff is not None:
        rows.append(f"CUTOFF={params.cutoff!r}")
    rows.append(f"COULOMB_CONSTANT={params.coulomb_constant!r}")
    return "\n".join(rows) + "\n"
