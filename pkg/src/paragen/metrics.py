"""Coverage reward, CIDEr-D, BLEU-4, combined reward, and the policy loss."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from paragen import tensor as T
from paragen.tensor import Tensor

_STOPWORDS = {
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being",
    "of", "in", "on", "at", "to", "and", "or", "it", "its", "this", "that",
    "there", "with", "for", "by", "from", "as", "has", "have", "had", "not",
    "he", "she", "they", "his", "her", "their", "some", "very", "up", "down",
}


class MetricError(ValueError):
    pass


@dataclass
class ObjectLexicon:
    """Top object tokens with training-corpus frequencies, non-increasing."""
    tokens: list
    frequencies: list

    def __post_init__(self):
        if len(self.tokens) != len(self.frequencies):
            raise MetricError("token/frequency length mismatch")
        if len(set(self.tokens)) != len(self.tokens):
            raise MetricError("lexicon tokens must be distinct")
        if any(a < b for a, b in zip(self.frequencies, self.frequencies[1:])):
            raise MetricError("lexicon frequencies must be non-increasing")
        self.token_set = set(self.tokens)

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, train_token_lists, candidates=None, limit: int = 1000):
        """Rank candidate object tokens by corpus frequency and truncate.

        Without an explicit candidate list, all non-stopword tokens are
        candidates.
        """
        counts = Counter()
        for tokens in train_token_lists:
            counts.update(tokens)
        if candidates is None:
            candidates = [t for t in counts if t not in _STOPWORDS]
        ranked = sorted((t for t in candidates if counts[t] > 0),
                        key=lambda t: (-counts[t], t))[:limit]
        return cls(tokens=ranked, frequencies=[counts[t] for t in ranked])

    @classmethod
    def from_file(cls, path):
        """One token per line, optional tab-separated frequency."""
        tokens, freqs = [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if "\t" in line:
                    tok, freq = line.split("\t", 1)
                    tokens.append(tok)
                    freqs.append(int(freq))
                else:
                    tokens.append(line)
                    freqs.append(0)
        return cls(tokens=tokens, frequencies=freqs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for tok, freq in zip(self.tokens, self.frequencies):
                fh.write(f"{tok}\t{freq}\n")


def coverage_reward(generated_tokens, gold_tokens, lexicon: ObjectLexicon) -> float:
    """Fraction of the gold paragraph's lexicon tokens that the generated
    paragraph also mentions; 1.0 when the gold mentions none."""
    if len(lexicon) == 0:
        raise MetricError("empty object lexicon")
    q_gt = set(gold_tokens) & lexicon.token_set
    if not q_gt:
        return 1.0
    q_g = set(generated_tokens) & lexicon.token_set
    return len(q_g & q_gt) / len(q_gt)


# ---------------------------------------------------------------------------
# n-gram machinery


def ngram_counts(tokens, max_n: int = 4) -> dict:
    """Counter of n-gram tuples for n = 1..max_n."""
    counts = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i:i + n])] += 1
    return counts


@dataclass
class NgramStats:
    """Corpus document frequencies for IDF weighting."""
    doc_freq: dict = field(default_factory=lambda: defaultdict(int))
    n_docs: int = 0

    @classmethod
    def from_corpus(cls, token_lists, max_n: int = 4) -> "NgramStats":
        stats = cls()
        for tokens in token_lists:
            stats.n_docs += 1
            for ngram in ngram_counts(tokens, max_n):
                stats.doc_freq[ngram] += 1
        return stats


class CiderD:
    """CIDEr-D: clipped TF-IDF n-gram similarity with a gaussian length
    penalty (sigma = 6) and a x10 scale, n = 1..4."""

    def __init__(self, corpus_token_lists, n: int = 4, sigma: float = 6.0):
        self.n = n
        self.sigma = sigma
        self.stats = NgramStats.from_corpus(corpus_token_lists, n)
        if self.stats.n_docs == 0:
            raise MetricError("CIDEr corpus must be non-empty")
        self.log_docs = math.log(max(self.stats.n_docs, 1))

    def _vec(self, tokens):
        """Per-n TF-IDF vectors, their norms, and the token length."""
        vecs = [defaultdict(float) for _ in range(self.n)]
        for ngram, count in ngram_counts(tokens, self.n).items():
            idf = self.log_docs - math.log(max(self.stats.doc_freq.get(ngram, 0), 1))
            vecs[len(ngram) - 1][ngram] = count * idf
        norms = [math.sqrt(sum(v * v for v in vec.values())) for vec in vecs]
        return vecs, norms, len(tokens)

    def score(self, candidate_tokens, reference_token_lists) -> float:
        if not candidate_tokens:
            return 0.0
        if not reference_token_lists:
            raise MetricError("CIDEr needs at least one reference")
        c_vecs, c_norms, c_len = self._vec(candidate_tokens)
        total = [0.0] * self.n
        for ref in reference_token_lists:
            r_vecs, r_norms, r_len = self._vec(ref)
            penalty = math.exp(-((c_len - r_len) ** 2) / (2.0 * self.sigma ** 2))
            for i in range(self.n):
                dot = sum(min(w, r_vecs[i][ng]) * r_vecs[i][ng]
                          for ng, w in c_vecs[i].items() if ng in r_vecs[i])
                if c_norms[i] > 0 and r_norms[i] > 0:
                    total[i] += penalty * dot / (c_norms[i] * r_norms[i])
        n_refs = len(reference_token_lists)
        return 10.0 * sum(v / n_refs for v in total) / self.n


def bleu4(candidate_tokens, reference_token_lists) -> float:
    """Sentence-level BLEU-4: uniform weights, clipped counts, brevity penalty.

    Any empty modified precision gives 0.
    """
    return corpus_bleu4([(candidate_tokens, reference_token_lists)])


def corpus_bleu4(pairs, max_n: int = 4) -> float:
    """Corpus-level BLEU with clipped precision pooled over all pairs."""
    matched = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for candidate, references in pairs:
        cand_len += len(candidate)
        if references:
            # standard effective reference length: closest, ties -> shorter
            ref_len += min((abs(len(r) - len(candidate)), len(r))
                           for r in references)[1]
        for n in range(1, max_n + 1):
            cand_counts = Counter(tuple(candidate[i:i + n])
                                  for i in range(len(candidate) - n + 1))
            max_ref = Counter()
            for ref in references:
                ref_counts = Counter(tuple(ref[i:i + n])
                                     for i in range(len(ref) - n + 1))
                for ng, c in ref_counts.items():
                    max_ref[ng] = max(max_ref[ng], c)
            totals[n - 1] += sum(cand_counts.values())
            matched[n - 1] += sum(min(c, max_ref[ng])
                                  for ng, c in cand_counts.items())
    if any(t == 0 or m == 0 for m, t in zip(matched, totals)):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, totals)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return bp * math.exp(log_precision)


# ---------------------------------------------------------------------------
# combined reward and the policy-gradient loss


@dataclass
class RewardBundle:
    coverage: float
    cider: float
    combined: float
    baseline: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0 + 1e-12:
            raise MetricError(f"coverage {self.coverage} outside [0, 1]")


def combined_reward(generated_tokens, gold_tokens, lexicon: ObjectLexicon,
                    cider: CiderD, beta: float = 8.0,
                    baseline: float = 0.0) -> RewardBundle:
    if beta < 0:
        raise MetricError("beta must be >= 0")
    r_c = coverage_reward(generated_tokens, gold_tokens, lexicon)
    r_d = cider.score(generated_tokens, [gold_tokens])
    return RewardBundle(coverage=r_c, cider=r_d,
                        combined=beta * r_c + r_d, baseline=baseline)


def scst_loss(sample_log_prob: Tensor, sample_reward: float,
              baseline_reward: float) -> Tensor:
    """Self-critical policy loss: -(R_sample - R_baseline) * sum log-probs.

    Rewards are constants; gradient flows only through the log-probs.
    """
    if sample_log_prob.size != 1:
        raise MetricError("sample log-prob must be a scalar tensor")
    advantage = float(sample_reward) - float(baseline_reward)
    if not math.isfinite(advantage):
        raise MetricError("non-finite reward advantage")
    return T.scale(sample_log_prob, -advantage)
