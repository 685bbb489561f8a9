"""Token error rate and insertion/deletion/substitution breakdowns."""
from __future__ import annotations

from dataclasses import dataclass


def edit_counts(hyp, ref) -> tuple[int, int, int]:
    """Unit-cost Levenshtein alignment; returns (insertions, deletions, substitutions)."""
    hyp, ref = list(hyp), list(ref)
    n, m = len(ref), len(hyp)
    # each cell: (total, ins, dels, subs); ties prefer fewer substitutions
    prev = [(j, j, 0, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            t, a, b, c = prev[j - 1]
            same = ref[i - 1] == hyp[j - 1]
            diag = (t + (not same), a, b, c + (not same))
            t, a, b, c = prev[j]
            dele = (t + 1, a, b + 1, c)
            t, a, b, c = cur[j - 1]
            ins = (t + 1, a + 1, b, c)
            cur.append(min(diag, dele, ins, key=lambda e: (e[0], e[3])))
        prev = cur
    _, i, d, s = prev[m]
    return i, d, s


def token_error_rate(hyp, ref) -> tuple[float, int, int, int]:
    """``(rate, insertions, deletions, substitutions)``; an empty reference gives rate = insertions."""
    i, d, s = edit_counts(hyp, ref)
    errors = i + d + s
    rate = float(errors) / len(ref) if len(ref) else float(i)
    return rate, i, d, s


@dataclass
class ErrorTotals:
    name: str
    insertions: int = 0
    deletions: int = 0
    substitutions: int = 0
    ref_tokens: int = 0

    def add(self, hyp, ref) -> None:
        _, i, d, s = token_error_rate(hyp, ref)
        self.insertions += i
        self.deletions += d
        self.substitutions += s
        self.ref_tokens += len(ref)

    @property
    def errors(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_tokens if self.ref_tokens else float(self.insertions)

    @property
    def accuracy(self) -> float:
        """Token accuracy, ``1 - TER``, over the whole set."""
        return 1.0 - self.rate

    def row(self) -> dict:
        return {"model": self.name, "ins": self.insertions, "del": self.deletions,
                "sub": self.substitutions, "ref_tokens": self.ref_tokens, "ter": round(self.rate, 6)}


def corpus_totals(name: str, hyps, refs) -> ErrorTotals:
    totals = ErrorTotals(name)
    for h, r in zip(hyps, refs, strict=True):
        totals.add(h, r)
    return totals


def format_table(rows) -> str:
    cols = ("model", "ins", "del", "sub", "ref_tokens", "ter")
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines)
