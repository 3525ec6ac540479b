"""Full model: topic auto-encoder plus two-level LSTM decoder.

Composes the pieces into paragraph decoding (greedy or sampled),
teacher-forced cross-entropy, and the joint phase-1 loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from paragen import tensor as T
from paragen.autoencoder import TopicAutoencoder
from paragen.config import TrainConfig
from paragen.corpus import BOS, EOS, PAD, Paragraph, RawRegionSet, Vocabulary
from paragen.generator import ParagraphDecoder, block_repeated_trigram
from paragen.tensor import RngStream, Tensor


@dataclass
class DecodeResult:
    paragraph: Paragraph
    stop_probs: list
    log_prob: Tensor = None        # sum of sampled log-probs (sample mode)
    waived: bool = False           # trigram-block waiver fired
    attention: list = None         # per-sentence list of alpha arrays
    sentence_start_states: list = None


class ParagraphModel:
    def __init__(self, cfg: TrainConfig, vocab: Vocabulary, rng: RngStream):
        self.cfg = cfg
        self.vocab = vocab
        self.cae = TopicAutoencoder(cfg, rng)
        self.decoder = ParagraphDecoder(cfg, len(vocab), rng)
        # PAD and BOS are never legal outputs; knock them out at the logits
        mask = np.zeros((1, len(vocab)))
        mask[0, [PAD, BOS]] = -1e9
        self._decode_mask = Tensor(mask)

    def parameters(self) -> list:
        return self.cae.parameters() + self.decoder.parameters()

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.trainable]

    # ------------------------------------------------------------------
    # shared forward pieces

    def run_topics(self, raw: RawRegionSet, training: bool):
        """Embed regions and run the conv encoder once per image.

        Returns (V, v_bar, topic rows, stop logits).
        """
        v = self.cae.embed_regions(raw, training)
        v_bar = T.mean_pool_columns(v)
        topics = self.cae.encode(v)
        stop_logits = self.cae.stop_logits(topics)
        topic_rows = [T.narrow(topics, 0, k, 1)
                      for k in range(self.cfg.max_sentences)]
        return v, v_bar, topics, topic_rows, stop_logits

    # ------------------------------------------------------------------
    # decoding

    def decode(self, raw: RawRegionSet, mode: str = "greedy",
               rng: RngStream = None, max_sentences: int = None,
               record_attention: bool = False,
               record_states: bool = False) -> DecodeResult:
        """Decode a paragraph; greedy mode is deterministic and applies the
        trigram-repetition block, sample mode draws words and stop decisions
        and accumulates their log-probs on the tape."""
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decode mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sample mode needs an rng")
        cfg = self.cfg
        k_cap = min(max_sentences or cfg.max_sentences, cfg.max_sentences)
        v, v_bar, _topics, topic_rows, stop_logits = self.run_topics(raw, training=False)
        stop_log_probs = T.log_softmax(stop_logits, axis=-1)
        stop_probs = np.exp(stop_log_probs.data[:, 1])

        dec = self.decoder
        state = dec.initial_state()
        sentences, alphas_all, start_states = [], [], []
        log_prob_terms = []
        waived = False
        prefix = []                # flat word context for the trigram block

        for k in range(k_cap):
            dec.reset_sentence(state, k)
            if record_states:
                start_states.append((state.h_p.data.copy(), state.h_s.data.copy()))
            sentence, alphas = [], []
            prev_word = BOS
            while True:
                h_p = dec.step_paragraph_lstm(state, v_bar, prev_word)
                alpha, attended = dec.attention.attend(v, h_p, topic_rows[k])
                logits = dec.step_sentence_lstm(state, attended, topic_rows[k], h_p)
                logits = T.add(logits, self._decode_mask)
                if record_attention:
                    alphas.append(alpha.data.ravel().copy())
                if mode == "greedy":
                    probs = T.softmax(logits, axis=-1).data.ravel()
                    probs, w = block_repeated_trigram(prefix, probs)
                    waived = waived or w
                    word = int(np.argmax(probs))  # first max = lowest id on ties
                else:
                    log_p = T.log_softmax(logits, axis=-1)
                    probs = np.exp(log_p.data.ravel())
                    word = rng.categorical(probs / probs.sum())
                    log_prob_terms.append(T.pick(log_p, 0, word))
                if word == EOS:
                    break
                sentence.append(word)
                prefix.append(word)
                prev_word = word
                if len(sentence) >= cfg.max_words:
                    break
            sentences.append(sentence)
            alphas_all.append(alphas)
            if k + 1 >= k_cap:
                break
            if mode == "greedy":
                if stop_probs[k] > 0.5:
                    break
            else:
                stop = rng.bernoulli(stop_probs[k])
                idx = 1 if stop else 0
                log_prob_terms.append(T.pick(stop_log_probs, k, idx))
                if stop:
                    break

        log_prob = None
        if mode == "sample":
            log_prob = log_prob_terms[0]
            for term in log_prob_terms[1:]:
                log_prob = T.add(log_prob, term)
        para = Paragraph(sentences=sentences)
        para.text = para.render(self.vocab)
        return DecodeResult(paragraph=para,
                            stop_probs=stop_probs[:len(sentences)].tolist(),
                            log_prob=log_prob, waived=waived,
                            attention=alphas_all if record_attention else None,
                            sentence_start_states=start_states or None)

    # ------------------------------------------------------------------
    # training losses

    def teacher_forced_nll(self, raw: RawRegionSet, gold: Paragraph,
                           training: bool = False, rng: RngStream = None):
        """Word cross-entropy plus stop-head cross-entropy under teacher forcing.

        Returns (word_loss, stop_loss, n_tokens) where n_tokens counts the
        scored positions (gold words plus one EOS per sentence).
        """
        pieces = self.run_topics(raw, training)
        return self._nll_from(pieces, gold, training, rng)

    def _nll_from(self, pieces, gold: Paragraph, training: bool,
                  rng: RngStream = None):
        if not gold.sentences:
            raise ValueError("empty gold paragraph")
        cfg = self.cfg
        k_gold = len(gold.sentences)
        if k_gold > cfg.max_sentences:
            raise ValueError("gold paragraph exceeds the sentence cap")
        v, v_bar, _topics, topic_rows, stop_logits = pieces

        dec = self.decoder
        state = dec.initial_state()
        word_terms = []
        n_tokens = 0
        for k, sent in enumerate(gold.sentences):
            dec.reset_sentence(state, k)
            prev_word = BOS
            targets = list(sent[:cfg.max_words]) + [EOS]
            for target in targets:
                h_p = dec.step_paragraph_lstm(state, v_bar, prev_word)
                _, attended = dec.attention.attend(v, h_p, topic_rows[k],
                                                   training=training, rng=rng)
                logits = dec.step_sentence_lstm(state, attended, topic_rows[k],
                                                h_p, training=training, rng=rng)
                log_p = T.log_softmax(logits, axis=-1)
                word_terms.append(T.pick(log_p, 0, target))
                n_tokens += 1
                prev_word = target

        word_loss = word_terms[0]
        for term in word_terms[1:]:
            word_loss = T.add(word_loss, term)
        word_loss = T.scale(word_loss, -1.0)

        stop_log_probs = T.log_softmax(stop_logits, axis=-1)
        stop_terms = []
        for k in range(k_gold):
            target = 1 if k == k_gold - 1 else 0
            stop_terms.append(T.pick(stop_log_probs, k, target))
        stop_loss = stop_terms[0]
        for term in stop_terms[1:]:
            stop_loss = T.add(stop_loss, term)
        stop_loss = T.scale(stop_loss, -1.0)
        return word_loss, stop_loss, n_tokens

    def phase1_loss(self, raw: RawRegionSet, gold: Paragraph,
                    training: bool = True, rng: RngStream = None):
        """Joint loss: cross-entropy + lambda_rec * L1 + lambda_stop * stop CE."""
        cfg = self.cfg
        pieces = self.run_topics(raw, training)
        v, _v_bar, topics, _topic_rows, _stop_logits = pieces
        rec = T.l1_loss(self.cae.decode(topics), v)
        word_loss, stop_loss, n_tokens = self._nll_from(pieces, gold,
                                                        training, rng)
        total = T.add(word_loss, T.scale(stop_loss, cfg.lambda_stop))
        if cfg.lambda_rec != 0.0:
            total = T.add(total, T.scale(rec, cfg.lambda_rec))
        parts = {"word": word_loss.item(), "stop": stop_loss.item(),
                 "rec": rec.item(), "n_tokens": n_tokens}
        return total, parts
