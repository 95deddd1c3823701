"""Word error rate by unit-cost Levenshtein alignment."""
import math
from dataclasses import dataclass
from typing import Hashable, Sequence, Tuple


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.reference_length == 0:
            # an empty reference is only matched by an empty hypothesis
            return 0.0 if self.errors == 0 else math.inf
        return self.errors / self.reference_length

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )

    def to_dict(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "reference_length": self.reference_length,
            "wer": self.wer,
        }


# (errors, insertions, deletions, substitutions); tuple order is the tie-break
_Cell = Tuple[int, int, int, int]


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> WerBreakdown:
    """Minimal S+D+I alignment of ``hyp`` against ``ref``.

    Among alignments with the same total, fewer insertions win, then fewer
    deletions, so the breakdown is deterministic.
    """
    n, m = len(ref), len(hyp)
    previous = [(j, j, 0, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        current = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            e, ins, dele, sub = previous[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diagonal = (e, ins, dele, sub)
            else:
                diagonal = (e + 1, ins, dele, sub + 1)
            e, ins, dele, sub = previous[j]
            deletion = (e + 1, ins, dele + 1, sub)
            e, ins, dele, sub = current[j - 1]
            insertion = (e + 1, ins + 1, dele, sub)
            current.append(min(diagonal, deletion, insertion))
        previous = current
    _, ins, dele, sub = previous[m]
    return WerBreakdown(substitutions=sub, deletions=dele, insertions=ins, reference_length=n)


def word_error_rate(refs: Sequence[Sequence[Hashable]], hyps: Sequence[Sequence[Hashable]]) -> WerBreakdown:
    """Corpus WER: errors and reference lengths pooled over all utterances."""
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total = WerBreakdown()
    for ref, hyp in zip(refs, hyps):
        total = total + edit_distance(ref, hyp)
    return total
