"""Independent brute-force oracles used to freeze expected test values.

Everything here is written directly from first principles (explicit
loops, plain dicts) and stays independent of the package code paths it
checks.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def column_mean_loops(v):
    m, d = v.shape
    out = np.zeros(d)
    for j in range(d):
        s = 0.0
        for i in range(m):
            s += v[i, j]
        out[j] = s / m
    return out


def conv_direct(v, filters, bias, stride):
    """Quadruple-loop direct summation of the full-height strided conv."""
    m, d1 = v.shape
    k, _, c1 = filters.shape
    d2 = (d1 - c1) // stride + 1
    out = np.zeros((k, d2))
    for kk in range(k):
        for j in range(d2):
            acc = bias[kk]
            for mm in range(m):
                for c in range(c1):
                    acc += filters[kk, mm, c] * v[mm, j * stride + c]
            out[kk, j] = acc
    return out


def deconv_scatter(topics, filters, bias, stride, out_width):
    """Scatter-sum transposed convolution."""
    k, d2 = topics.shape
    _, m, c1 = filters.shape
    out = np.zeros((m, out_width))
    for kk in range(k):
        for j in range(d2):
            for mm in range(m):
                for c in range(c1):
                    out[mm, j * stride + c] += filters[kk, mm, c] * topics[kk, j]
    for i in range(out_width):
        out[:, i] += bias[i]
    return out


def l1_loops(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += abs(x - y)
    return total


def lstm_step_loops(x, h, c, w_x, w_h, b, hidden):
    """Gate-equation evaluation, gate order i|f|o|g."""
    z = x @ w_x + h @ w_h + b
    sig = lambda t: 1.0 / (1.0 + np.exp(-t))
    i = sig(z[:hidden])
    f = sig(z[hidden:2 * hidden])
    o = sig(z[2 * hidden:3 * hidden])
    g = np.tanh(z[3 * hidden:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def coverage_bruteforce(generated, gold, lexicon_tokens):
    q_gt = [t for t in lexicon_tokens if t in gold]
    if not q_gt:
        return 1.0
    q_both = [t for t in q_gt if t in generated]
    return len(set(q_both)) / len(set(q_gt))


def finite_difference(f, array, eps=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. an array
    mutated in place."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


# ---------------------------------------------------------------------------
# CIDEr-D reference implementation (independent of paragen.metrics)


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


class CiderDOracle:
    """Straight transcription of the CIDEr-D procedure: per-n TF-IDF
    vectors, count clipping on the candidate side, cosine per n, gaussian
    length penalty, average over n = 1..4, times 10."""

    def __init__(self, corpus, n=4, sigma=6.0):
        self.n = n
        self.sigma = sigma
        self.df = Counter()
        self.ndocs = len(corpus)
        for doc in corpus:
            seen = set()
            for nn in range(1, n + 1):
                seen.update(_ngrams(doc, nn))
            for ng in seen:
                self.df[ng] += 1

    def _tfidf(self, tokens):
        vecs = []
        for nn in range(1, self.n + 1):
            counts = Counter(_ngrams(tokens, nn))
            vec = {}
            for ng, c in counts.items():
                df = max(self.df.get(ng, 0), 1)
                vec[ng] = c * (math.log(self.ndocs) - math.log(df))
            vecs.append(vec)
        return vecs

    def score(self, candidate, references):
        if not candidate:
            return 0.0
        cvecs = self._tfidf(candidate)
        cnorm = [math.sqrt(sum(x * x for x in v.values())) for v in cvecs]
        per_n = [0.0] * self.n
        for ref in references:
            rvecs = self._tfidf(ref)
            rnorm = [math.sqrt(sum(x * x for x in v.values())) for v in rvecs]
            delta = len(candidate) - len(ref)
            pen = math.exp(-delta * delta / (2.0 * self.sigma * self.sigma))
            for i in range(self.n):
                dot = 0.0
                for ng, w in cvecs[i].items():
                    if ng in rvecs[i]:
                        dot += min(w, rvecs[i][ng]) * rvecs[i][ng]
                if cnorm[i] > 0 and rnorm[i] > 0:
                    per_n[i] += pen * dot / (cnorm[i] * rnorm[i])
        return 10.0 * sum(x / len(references) for x in per_n) / self.n


def bleu4_oracle(candidate, references):
    """Clipped-precision BLEU-4 with brevity penalty, single pair."""
    precisions = []
    for n in range(1, 5):
        cand = Counter(_ngrams(candidate, n))
        if sum(cand.values()) == 0:
            return 0.0
        clip = Counter()
        for ref in references:
            rc = Counter(_ngrams(ref, n))
            for ng in cand:
                clip[ng] = max(clip[ng], min(cand[ng], rc.get(ng, 0)))
        matched = sum(clip.values())
        if matched == 0:
            return 0.0
        precisions.append(matched / sum(cand.values()))
    ref_len = min((abs(len(r) - len(candidate)), len(r)) for r in references)[1]
    bp = 1.0 if len(candidate) > ref_len else math.exp(1 - ref_len / len(candidate))
    return bp * math.exp(sum(math.log(p) for p in precisions) / 4)
