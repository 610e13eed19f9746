"""Exception types shared across the package."""


class ToolDraftError(Exception):
    """Base class for all package errors."""


class UnknownSymbol(ToolDraftError, ValueError):
    def __init__(self, char: str, offset: int):
        super().__init__(f"cannot encode {char!r} at offset {offset}")
        self.char = char
        self.offset = offset


class EmptyInput(ToolDraftError, ValueError):
    pass


class MaskShapeMismatch(ToolDraftError, ValueError):
    pass


class SchemaError(ToolDraftError):
    pass


class DocParseError(SchemaError, ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class DuplicateTool(DocParseError):
    pass


class DuplicateParam(DocParseError):
    pass


class IllegalToken(ToolDraftError):
    """A token that cannot extend any legal tool or parameter name."""

    def __init__(self, token: int, state):
        super().__init__(f"token {token} is illegal in state {state.tag.value}")
        self.token = token
        self.state = state


class WrongState(ToolDraftError, ValueError):
    pass


class NotAdherent(ToolDraftError, ValueError):
    pass


class EmptyDraftSet(ToolDraftError, ValueError):
    pass


class DimensionMismatch(ToolDraftError, ValueError):
    pass
