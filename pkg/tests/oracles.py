"""Independent reference implementations used only by the tests.

Nothing here imports the code under test. Each oracle is written the slow,
obvious way: explicit loops, list counting, per-pair sums.
"""

import math


def tokenize(text):
    out = []
    word = ""
    for ch in text.lower():
        if ch in ".,;:!?\"'()":
            continue
        if ch.isspace():
            if word:
                out.append(word)
            word = ""
        else:
            word += ch
    if word:
        out.append(word)
    return out


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def clipped_precision(cand, refs, n):
    grams = _grams(cand, n)
    if not grams:
        return 0.0
    matched = 0
    for g in set(grams):
        in_cand = grams.count(g)
        best_ref = max(_grams(r, n).count(g) for r in refs)
        matched += min(in_cand, best_ref)
    return matched / len(grams)


def bleu4(cand, refs, eps=1e-9):
    if len(cand) == 0:
        return 0.0
    c = len(cand)
    best_r, best_gap = None, None
    for r in refs:
        gap = abs(len(r) - c)
        if best_gap is None or gap < best_gap or (gap == best_gap and len(r) < best_r):
            best_r, best_gap = len(r), gap
    bp = 1.0 if c >= best_r else math.exp(1 - best_r / c)
    prod = 1.0
    for n in (1, 2, 3, 4):
        p = clipped_precision(cand, refs, n)
        prod *= p if p > 0 else eps
    return bp * prod ** 0.25


def nt_xent(U, V, tau, symmetric=True):
    """Per-pair softmax summation over plain Python lists."""
    B = len(U)

    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    S = [[cos(U[i], V[j]) / tau for j in range(B)] for i in range(B)]
    rows = 0.0
    for i in range(B):
        denom = sum(math.exp(S[i][j]) for j in range(B))
        rows += -math.log(math.exp(S[i][i]) / denom)
    rows /= B
    if not symmetric:
        return rows
    cols = 0.0
    for j in range(B):
        denom = sum(math.exp(S[i][j]) for i in range(B))
        cols += -math.log(math.exp(S[j][j]) / denom)
    cols /= B
    return 0.5 * (rows + cols)


def adamw_scalar(x, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, wd=1e-2):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        x = x - lr * wd * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
    return x


def sorted_ranking(scores, ids, k):
    """Exhaustive sort: descending score, ascending id on ties."""
    return [i for _, i in sorted(zip(scores, ids), key=lambda p: (-p[0], p[1]))][:k]
