"""Pass/fail records shared by the condition checkers and bound checks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

STATUSES = ("pass", "fail", "deviates")


@dataclass
class ClauseResult:
    name: str
    status: str
    measured: float
    note: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        self.measured = float(self.measured)


@dataclass
class ConditionReport:
    condition: str
    clauses: list[ClauseResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when no clause fails outright; documented deviations are allowed."""
        return all(c.status != "fail" for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"condition": self.condition, "passed": self.passed,
                "clauses": [asdict(c) for c in self.clauses]}
