from __future__ import annotations


class ConfigError(ValueError):
    """Invalid scenario or network configuration.

    ``problems`` holds every violation found, each prefixed with the
    section/field path it refers to.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ContractViolation(RuntimeError):
    """An action or value broke a precondition that callers must uphold."""


class SolverLimitError(ValueError):
    """Exact enumeration refused because a block has too many binary variables."""
