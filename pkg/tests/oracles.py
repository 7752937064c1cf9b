"""Independent loop-based reference implementations used as test oracles."""

import math

import numpy as np


def relu(x):
    return x if x > 0 else 0.0


def textcnn(emb, conv_w, conv_b, proj_w, proj_b, tokens):
    """emb: V x c, conv_w: f x c x w, tokens: list of non-pad ids."""
    f, c, w = conv_w.shape
    toks = list(tokens) + [0] * max(0, w - len(tokens))
    n_valid = max(len(tokens) - w + 1, 1)
    pooled = []
    for k in range(f):
        best = -math.inf
        for p in range(n_valid):
            s = conv_b[k]
            for j in range(w):
                for ch in range(c):
                    s += conv_w[k, ch, j] * emb[toks[p + j], ch]
            best = max(best, relu(s))
        pooled.append(best)
    out = []
    for r in range(proj_w.shape[0]):
        out.append(proj_b[r] + sum(proj_w[r, k] * pooled[k] for k in range(f)))
    return np.array(out)


def linear(W, b, x):
    return np.array([b[r] + sum(W[r, k] * x[k] for k in range(len(x))) for r in range(W.shape[0])])


def mlp_logit(layers, x):
    """layers: list of (W, b); ReLU between, none after the last."""
    h = list(x)
    for k, (W, b) in enumerate(layers):
        h = linear(W, b, h)
        if k < len(layers) - 1:
            h = np.array([relu(v) for v in h])
    return float(h[0])


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def hit_ratio(lists, t, users):
    hits = 0
    for u in users:
        for item in lists[u]:
            if item == t:
                hits += 1
                break
    return hits / len(users)


def ndcg(lists, t, users):
    total = 0.0
    for u in users:
        for pos, item in enumerate(lists[u], start=1):
            if item == t:
                total += 1.0 / math.log2(pos + 1)
                break
    return total / len(users)


def l_trans(preds, t, K, C, exclude=None):
    total, missed = 0.0, 0
    for row in range(len(preds)):
        cands = [i for i in range(len(preds[row])) if exclude is None or not exclude[row][i]]
        cands.sort(key=lambda i: (-preds[row][i], i))
        top = cands[:K]
        if t in top:
            continue
        missed += 1
        total += sum(math.exp(preds[row][i]) - math.exp(preds[row][t]) for i in top)
    return C if missed == 0 else math.log(total + 1.0)


def topk(scores, K, exclude=()):
    cands = [i for i in range(len(scores)) if i not in set(exclude)]
    cands.sort(key=lambda i: (-scores[i], i))
    return cands[:K]
