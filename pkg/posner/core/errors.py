class PosnerError(ValueError):
    """
    Base error for the analysis pipeline.
    `exit_code` is what the CLI returns when the error escapes a command.
    """
    exit_code: int = 2

    def __init__(self, detail: str, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class UsageError(PosnerError):
    exit_code = 1


class StructureMismatchError(PosnerError):
    pass


class GeometryError(PosnerError):
    pass


class UnknownElementError(PosnerError):
    pass


class XyzParseError(PosnerError):
    def __init__(self, detail: str, line: int):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class PhosphateGroupError(PosnerError):
    pass


class S6CollisionError(PosnerError):
    pass


class SingularGeometryError(PosnerError):
    pass


class MissingEnergyError(PosnerError):
    def __init__(self, frame_index: int):
        super().__init__(f"frame {frame_index} carries no energy")
        self.frame_index = frame_index


class MissingParameterError(PosnerError):
    pass


class EmptySelectionError(PosnerError):
    pass


class ModeIndexError(PosnerError):
    pass


class ClusterCountError(PosnerError):
    pass


class AllStartsCollidedError(PosnerError):
    pass


class CensusShortfallError(PosnerError):
    pass
