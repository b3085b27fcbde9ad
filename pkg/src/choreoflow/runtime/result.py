from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field


@dataclass
class RunResult:
    """Per-instance output logs plus exit status and channel counters."""

    logs: dict[str, list[str]] = field(default_factory=dict)
    status: dict[str, int] = field(default_factory=dict)
    channel_stats: dict[int, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"instances": {k: list(v) for k, v in self.logs.items()}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def multisets(self) -> dict[str, Counter]:
        return {k: Counter(v) for k, v in self.logs.items()}

    @property
    def ok(self) -> bool:
        return all(code == 0 for code in self.status.values())
