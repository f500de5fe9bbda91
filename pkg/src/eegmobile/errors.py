"""Exception types shared across the package."""


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte {offset})")
        self.offset = offset


class NumericError(FloatingPointError):
    """A forward operation produced NaN or Inf."""

    def __init__(self, op: str, scope: str = ""):
        where = f" in {scope}" if scope else ""
        super().__init__(f"non-finite values produced by {op}{where}")
        self.op = op
        self.scope = scope
