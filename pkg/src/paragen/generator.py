"""Two-level LSTM paragraph decoder with region attention.

The paragraph-level LSTM carries state across all sentences; its input
at each step is [previous sentence-LSTM output, mean-pooled image
feature, previous word embedding]. Attention scores every region against
the paragraph state and the current topic; the sentence-level LSTM
consumes [attended feature, topic, paragraph state] and feeds a softmax
word head. Sentence-level state resets to zero at every sentence start,
paragraph-level state only at the start of the paragraph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from paragen import tensor as T
from paragen.config import TrainConfig
from paragen.corpus import BOS, EOS, Paragraph
from paragen.tensor import Parameter, RngStream, Tensor


class LstmCell:
    """Standard LSTM cell (i, f, o gates + tanh candidate), gate order i|f|o|g.

    Forget-gate bias starts at 1.0 for training stability.
    """

    def __init__(self, name: str, input_dim: int, hidden: int, rng: RngStream):
        self.hidden = hidden
        self.w_x = Parameter(f"{name}.w_x",
                             T.init_uniform(rng, (input_dim, 4 * hidden), input_dim))
        self.w_h = Parameter(f"{name}.w_h",
                             T.init_uniform(rng, (hidden, 4 * hidden), hidden))
        b = np.zeros((1, 4 * hidden))
        b[0, hidden:2 * hidden] = 1.0
        self.b = Parameter(f"{name}.b", b)

    def parameters(self) -> list:
        return [self.w_x, self.w_h, self.b]

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        hdim = self.hidden
        z = T.add(T.add(T.matmul(x, self.w_x.tensor),
                        T.matmul(h, self.w_h.tensor)), self.b.tensor)
        i = T.sigmoid(T.narrow(z, 1, 0, hdim))
        f = T.sigmoid(T.narrow(z, 1, hdim, hdim))
        o = T.sigmoid(T.narrow(z, 1, 2 * hdim, hdim))
        g = T.tanh(T.narrow(z, 1, 3 * hdim, hdim))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new


class AttentionHead:
    """Additive attention over regions; no bias terms inside the tanh."""

    def __init__(self, cfg: TrainConfig, rng: RngStream, prefix: str = "attn"):
        d1, d2, d3, h = cfg.d_region, cfg.d_topic, cfg.d_attn, cfg.hidden
        self.w_v = Parameter(f"{prefix}.w_v", T.init_uniform(rng, (d1, d3), d1))
        self.w_h = Parameter(f"{prefix}.w_h", T.init_uniform(rng, (h, d3), h))
        self.w_t = Parameter(f"{prefix}.w_t", T.init_uniform(rng, (d2, d3), d2))
        self.w_att = Parameter(f"{prefix}.w_att", T.init_uniform(rng, (d3, 1), d3))
        self.dropout = cfg.dropout

    def parameters(self) -> list:
        return [self.w_v, self.w_h, self.w_t, self.w_att]

    def attend(self, v: Tensor, h_p: Tensor, topic: Tensor,
               training: bool = False, rng: RngStream = None):
        """Returns (alpha (1, M), attended feature (1, D1))."""
        shift = T.add(T.matmul(h_p, self.w_h.tensor),
                      T.matmul(topic, self.w_t.tensor))
        hidden = T.tanh(T.add_rowvec(T.matmul(v, self.w_v.tensor), shift))
        if training and self.dropout > 0.0:
            hidden = T.dropout(hidden, self.dropout, rng)
        scores = T.reshape(T.matmul(hidden, self.w_att.tensor), (1, v.shape[0]))
        alpha = T.softmax(scores, axis=-1)
        attended = T.matmul(alpha, v)
        return alpha, attended


@dataclass
class GeneratorState:
    """Hidden/cell pairs for both LSTMs plus sentence/time indices."""
    h_p: Tensor
    c_p: Tensor
    h_s: Tensor
    c_s: Tensor
    k: int = 0
    t: int = 0


class ParagraphDecoder:
    """Word embedding, both LSTMs, attention, and the word head."""

    def __init__(self, cfg: TrainConfig, vocab_size: int, rng: RngStream,
                 prefix: str = "gen"):
        self.cfg = cfg
        self.vocab_size = vocab_size
        d1, d2, ds, h = cfg.d_region, cfg.d_topic, cfg.d_word, cfg.hidden
        p = prefix
        self.word_embed = Parameter(f"{p}.word_embed",
                                    T.init_uniform(rng, (vocab_size, ds), ds))
        self.para_lstm = LstmCell(f"{p}.para_lstm", h + d1 + ds, h, rng)
        self.sent_lstm = LstmCell(f"{p}.sent_lstm", d1 + d2 + h, h, rng)
        self.attention = AttentionHead(cfg, rng, prefix=f"{p}.attn")
        self.out_w = Parameter(f"{p}.out_w", T.init_uniform(rng, (h, vocab_size), h))
        self.out_b = Parameter(f"{p}.out_b", np.zeros((1, vocab_size)))

    def parameters(self) -> list:
        return ([self.word_embed] + self.para_lstm.parameters()
                + self.sent_lstm.parameters() + self.attention.parameters()
                + [self.out_w, self.out_b])

    def initial_state(self) -> GeneratorState:
        h = self.cfg.hidden
        zero = lambda: Tensor(np.zeros((1, h)))
        return GeneratorState(zero(), zero(), zero(), zero(), k=0, t=0)

    def reset_sentence(self, state: GeneratorState, k: int) -> None:
        h = self.cfg.hidden
        state.h_s = Tensor(np.zeros((1, h)))
        state.c_s = Tensor(np.zeros((1, h)))
        state.k = k
        state.t = 0

    def step_paragraph_lstm(self, state: GeneratorState, v_bar: Tensor,
                            prev_word_id: int) -> Tensor:
        if not 0 <= prev_word_id < self.vocab_size:
            raise ValueError(f"word id {prev_word_id} outside vocabulary")
        w = T.pick_rows(self.word_embed.tensor, [prev_word_id])
        x = T.concat([state.h_s, v_bar, w], axis=1)
        state.h_p, state.c_p = self.para_lstm.step(x, state.h_p, state.c_p)
        return state.h_p

    def step_sentence_lstm(self, state: GeneratorState, attended: Tensor,
                           topic: Tensor, h_p: Tensor, training: bool = False,
                           rng: RngStream = None) -> Tensor:
        """One word step; returns (1, |vocab|) logits."""
        x = T.concat([attended, topic, h_p], axis=1)
        state.h_s, state.c_s = self.sent_lstm.step(x, state.h_s, state.c_s)
        h_out = state.h_s
        if training and self.cfg.dropout > 0.0:
            h_out = T.dropout(h_out, self.cfg.dropout, rng)
        logits = T.add(T.matmul(h_out, self.out_w.tensor), self.out_b.tensor)
        state.t += 1
        return logits


def paragraph_trigrams(prefix_tokens) -> set:
    return {tuple(prefix_tokens[i:i + 3]) for i in range(len(prefix_tokens) - 2)}


def block_repeated_trigram(prefix_tokens, probs: np.ndarray):
    """Zero out candidates that would repeat a trigram of the prefix.

    Returns (renormalized probs, waived). If every candidate with mass
    would be blocked, the constraint is waived and the input distribution
    is returned unchanged.
    """
    if len(prefix_tokens) < 2:
        return probs, False
    seen = paragraph_trigrams(prefix_tokens)
    if not seen:
        return probs, False
    last_two = tuple(prefix_tokens[-2:])
    blocked = np.array([(last_two + (w,)) in seen for w in range(len(probs))])
    if not blocked.any():
        return probs, False
    filtered = np.where(blocked, 0.0, probs)
    total = filtered.sum()
    if total <= 0.0:
        return probs, True
    return filtered / total, False
