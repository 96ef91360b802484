"""Patient-exclusive k-fold assignment with a fixed test/tune rotation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


@dataclass(frozen=True)
class FoldRoles:
    test: int
    tune: int
    train: frozenset[int]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    @property
    def iterations(self) -> list[FoldRoles]:
        return [
            FoldRoles(i, (i + 1) % self.k, frozenset(set(range(self.k)) - {i, (i + 1) % self.k}))
            for i in range(self.k)
        ]

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes

    def to_json(self) -> str:
        return json.dumps(
            {"k": self.k, "seed": self.seed, "assignment": dict(sorted(self.assignment.items()))},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        obj = json.loads(text)
        return cls(int(obj["k"]), int(obj["seed"]), {str(p): int(f) for p, f in obj["assignment"].items()})


def assign_folds(patient_ids: Iterable[Hashable], k: int = 10, seed: int = 0) -> FoldPlan:
    """Shuffle patients and deal them round-robin into ``k`` folds.

    Ids are sorted first so the plan depends only on the id set and the seed.
    """
    ids = sorted({str(p) for p in patient_ids})
    if k < 3:
        raise ValueError(f"need k >= 3 folds, got {k}")
    if len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} patients into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignment = {ids[j]: pos % k for pos, j in enumerate(order)}
    return FoldPlan(k, seed, assignment)


def select(plan: FoldPlan, iteration: int, examples: Sequence[T]) -> tuple[list[T], list[T], list[T]]:
    """Route examples (anything with ``patient_id``) into train, tune and test lists."""
    if not 0 <= iteration < plan.k:
        raise ValueError(f"iteration {iteration} outside [0, {plan.k})")
    roles = plan.iterations[iteration]
    train, tune, test = [], [], []
    for e in examples:
        try:
            fold = plan.assignment[str(e.patient_id)]
        except KeyError:
            raise KeyError(f"patient {e.patient_id!r} is not in the fold plan") from None
        if fold == roles.test:
            test.append(e)
        elif fold == roles.tune:
            tune.append(e)
        else:
            train.append(e)
    return train, tune, test
