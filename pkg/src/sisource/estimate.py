from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class SourceEstimate:
    """Result of a source estimator.

    ``estimators`` holds every node attaining the optimum (sorted by id);
    ``scores`` the per-candidate values the method optimizes and
    ``direction`` whether lower or higher is better.
    """

    method: str
    estimators: list[int]
    scores: dict[int, float]
    direction: str = "max"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.estimators = sorted(int(u) for u in self.estimators)
        if not self.estimators:
            raise ValueError("an estimate needs at least one node")

    @property
    def pick(self) -> int:
        """Deterministic scalar estimate: lowest id among the tied optima."""
        return self.estimators[0]

    @property
    def score(self) -> float:
        return self.scores[self.pick]

    def to_json(self, labels=None) -> dict:
        name = (lambda u: labels[u]) if labels is not None else (lambda u: u)
        score = self.score
        if isinstance(score, float) and not math.isfinite(score):
            score = str(score)
        return {"method": self.method, "estimators": [name(u) for u in self.estimators], "score": score}


def argbest(scores: dict[int, float], direction: str = "max", tol: float = 0.0) -> list[int]:
    """Nodes whose score is within ``tol`` of the best one.

    With ``tol=0`` the comparison is exact, so rational scores stay rational.
    """
    if direction == "max":
        best = max(scores.values())
        return sorted(u for u, s in scores.items() if (s >= best - tol if tol else s == best))
    best = min(scores.values())
    return sorted(u for u, s in scores.items() if (s <= best + tol if tol else s == best))
