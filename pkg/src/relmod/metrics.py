"""SQuAD-style answer scoring with the answerable / unanswerable split.

An empty string stands for NO_ANSWER on both the gold and predicted side.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = "".join(ch for ch in s.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", s).split())


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_answer(prediction) == normalize_answer(gold))


def f1_score(prediction: str, gold: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        return float(pred == ref)
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def score(golds: Sequence[str], predictions: Sequence[str]) -> dict[str, float]:
    """EM, F1 and split accuracies, all in percent.

    A gold of "" marks an unanswerable question. ``NA_accuracy`` is the share
    of those predicted as "", ``answerable_accuracy`` the share of answerable
    questions given any non-empty answer. Empty splits give NaN.
    """
    if len(golds) != len(predictions):
        raise ValueError("golds and predictions differ in length")
    n = len(golds)
    em = sum(exact_match(p, g) for p, g in zip(predictions, golds))
    f1 = sum(f1_score(p, g) for p, g in zip(predictions, golds))
    na = [p == "" for p, g in zip(predictions, golds) if g == ""]
    ans = [p != "" for p, g in zip(predictions, golds) if g != ""]

    def pct(total, count):
        return 100.0 * total / count if count else float("nan")

    return {
        "EM": pct(em, n),
        "F1": pct(f1, n),
        "NA_accuracy": pct(sum(na), len(na)),
        "answerable_accuracy": pct(sum(ans), len(ans)),
    }
