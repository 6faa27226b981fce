"""Subject-disjoint evaluation protocols: leave-one-out and k-fold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SplitError(ValueError):
    pass


@dataclass
class Split:
    train: list[str]
    val: list[str]
    test: list[str]

    def validate(self) -> None:
        seen = self.train + self.val + self.test
        if len(set(seen)) != len(seen):
            raise SplitError("subject appears in more than one partition")


def make_splits(
    subjects: list[str],
    protocol: str,
    seed: int = 0,
    train_count: int | None = None,
    val_count: int | None = None,
    k: int | None = None,
) -> list[Split]:
    """Partition subjects into (train, val, test) lists.

    ``loocv``: every subject serves as the test subject exactly once; the
    remaining subjects are shuffled (seeded) and split into ``train_count``
    training and ``val_count`` validation subjects (defaults: half and the
    rest).  ``kfold``: subjects are shuffled once and partitioned into k
    disjoint test folds; per fold the leftover subjects are split into
    validation (``val_count``, default ~a fifth) and training.
    """
    subjects = sorted(set(subjects))
    if len(subjects) < 3:
        raise SplitError(f"need at least 3 subjects, got {len(subjects)}")
    rng = np.random.default_rng(seed)
    splits: list[Split] = []

    if protocol == "loocv":
        rest_n = len(subjects) - 1
        tc = train_count if train_count is not None else rest_n - rest_n // 2
        vc = val_count if val_count is not None else rest_n - tc
        if tc < 1 or vc < 1 or tc + vc > rest_n:
            raise SplitError(
                f"cannot take {tc} train + {vc} val subjects from {rest_n} leftovers"
            )
        for test_subject in subjects:
            rest = [s for s in subjects if s != test_subject]
            order = rng.permutation(len(rest))
            train = [rest[i] for i in order[:tc]]
            val = [rest[i] for i in order[tc : tc + vc]]
            splits.append(Split(train=train, val=val, test=[test_subject]))
    elif protocol == "kfold":
        if k is None or k < 2:
            raise SplitError("kfold needs k >= 2")
        if k > len(subjects):
            raise SplitError(f"k={k} exceeds {len(subjects)} subjects")
        order = rng.permutation(len(subjects))
        folds = [sorted(subjects[i] for i in order[f::k]) for f in range(k)]
        for f, test in enumerate(folds):
            rest = [s for s in subjects if s not in test]
            vc = val_count if val_count is not None else max(1, len(rest) // 5)
            if vc >= len(rest):
                raise SplitError(f"val_count={vc} leaves no training subjects")
            sub_order = rng.permutation(len(rest))
            val = [rest[i] for i in sub_order[:vc]]
            train = [rest[i] for i in sub_order[vc:]]
            splits.append(Split(train=train, val=val, test=test))
    else:
        raise SplitError(f"unknown protocol {protocol!r}")

    for s in splits:
        s.validate()
    return splits
