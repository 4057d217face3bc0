"""Exception hierarchy. Each class carries a short category used by the CLI."""


class MfgcrnError(Exception):
    category = "error"


class DimensionError(MfgcrnError, ValueError):
    category = "dimension"


class ContractError(MfgcrnError, ValueError):
    category = "contract"


class SchemaError(MfgcrnError, ValueError):
    category = "schema"


class GapError(MfgcrnError, ValueError):
    category = "gap"


class HistoryError(MfgcrnError, ValueError):
    category = "history"


class ConfigError(MfgcrnError, ValueError):
    category = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DivergenceError(MfgcrnError, FloatingPointError):
    category = "divergence"
