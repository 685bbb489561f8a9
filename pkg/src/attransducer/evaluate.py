"""Decoding a whole test set and comparing models."""
from __future__ import annotations

from .decoding import decode_utterance, greedy_decode
from .metrics import ErrorTotals, corpus_totals
from .model import Model


def transcribe(model: Model, dataset, beam: int = 1) -> list[list[int]]:
    """Greedy when ``beam == 0``, otherwise chunk-synchronous beam search."""
    if beam == 0:
        return [greedy_decode(u.features, model) for u in dataset]
    return [decode_utterance(u.features, model, beam).tokens for u in dataset]


def accuracy(model: Model, dataset, beam: int = 0) -> float:
    hyps = transcribe(model, dataset, beam)
    return corpus_totals("model", hyps, [u.tokens for u in dataset]).accuracy


def error_breakdown_report(model_a: Model, model_b: Model, testset, beam: int = 8,
                           names=("model_a", "model_b")) -> list[dict]:
    """Per-model insertion/deletion/substitution totals on a shared test set."""
    rows = []
    refs = [u.tokens for u in testset]
    for name, model in zip(names, (model_a, model_b)):
        totals: ErrorTotals = corpus_totals(name, transcribe(model, testset, beam), refs)
        rows.append(totals.row())
    return rows
