"""Independent reference implementations used only by the tests."""

from fractions import Fraction
import math


def precision(tp, fp, tn, fn):
    return float(Fraction(tp, tp + fp)) if tp + fp else 0.0


def recall(tp, fp, tn, fn):
    return float(Fraction(tp, tp + fn)) if tp + fn else 0.0


def balanced_accuracy(tp, fp, tn, fn):
    tpr = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    tnr = Fraction(tn, tn + fp) if tn + fp else Fraction(0)
    return float((tpr + tnr) / 2)


def mcc(tp, fp, tn, fn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    num = tp * tn - fp * fn
    # sign(num) * sqrt(num^2 / den), evaluated with an exact ratio
    return math.copysign(math.sqrt(Fraction(num * num, den)), num)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    # count in half-units so every comparison stays an integer
    halves = 0
    for p in pos:
        for n in neg:
            halves += 2 if p > n else 1 if p == n else 0
    return float(Fraction(halves, 2 * len(pos) * len(neg)))


def product_perplexity(probs):
    """N-th root of 1 / prod(p), without logarithms."""
    prod = 1.0
    for p in probs:
        prod *= p
    return (1.0 / prod) ** (1.0 / len(probs))
