"""Two-phase training, evaluation reports, and checkpoint plumbing."""

from __future__ import annotations

import numpy as np

from paragen import tensor as T
from paragen.checkpoint import Checkpoint
from paragen.config import TrainConfig
from paragen.corpus import Dataset
from paragen.metrics import (CiderD, ObjectLexicon, combined_reward,
                             corpus_bleu4, coverage_reward, scst_loss)
from paragen.model import ParagraphModel
from paragen.tensor import NonFiniteError, RngStream


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Adam with bias correction; state is checkpointable per parameter."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        with np.errstate(over="ignore", invalid="ignore"):
            for p in self.params:
                g = p.tensor.grad
                if not np.isfinite(g).all():
                    raise NonFiniteError(f"non-finite gradient for {p.name}")
                m = self.m[p.name]
                v = self.v[p.name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if not np.isfinite(p.tensor.data).all():
                    raise NonFiniteError(f"non-finite update for {p.name}")


# ---------------------------------------------------------------------------
# model <-> checkpoint plumbing


def model_arrays(model: ParagraphModel, adam: Adam = None) -> dict:
    arrays = {p.name: p.data.copy() for p in model.parameters()}
    if adam is not None:
        arrays["adam.t"] = np.array([float(adam.t)])
        for name, arr in adam.m.items():
            arrays[f"adam.m.{name}"] = arr.copy()
        for name, arr in adam.v.items():
            arrays[f"adam.v.{name}"] = arr.copy()
    return arrays


def load_model_arrays(model: ParagraphModel, arrays: dict, adam: Adam = None) -> None:
    for p in model.parameters():
        p.tensor.data[...] = arrays[p.name]
    if adam is not None and "adam.t" in arrays:
        adam.t = int(arrays["adam.t"][0])
        for name in adam.m:
            adam.m[name][...] = arrays[f"adam.m.{name}"]
            adam.v[name][...] = arrays[f"adam.v.{name}"]


def build_lexicon(dataset: Dataset, limit: int, candidates=None) -> ObjectLexicon:
    train_tokens = [dataset.gold_tokens(i) for i in dataset.split.train]
    return ObjectLexicon.build(train_tokens, candidates=candidates, limit=limit)


def build_cider(dataset: Dataset) -> CiderD:
    return CiderD([dataset.gold_tokens(i) for i in dataset.split.train])


def model_from_checkpoint(ckpt: Checkpoint) -> ParagraphModel:
    model = ParagraphModel(ckpt.config, ckpt.vocab, RngStream(ckpt.config.seed))
    load_model_arrays(model, ckpt.arrays)
    return model


# ---------------------------------------------------------------------------
# trainers


class _TrainerBase:
    phase = "?"

    def __init__(self, config: TrainConfig, dataset: Dataset, lr: float,
                 checkpoint: Checkpoint = None, lexicon: ObjectLexicon = None):
        self.config = config
        self.dataset = dataset
        self.rng = RngStream(config.seed)
        if checkpoint is not None:
            self.vocab = checkpoint.vocab
            self.lexicon = checkpoint.lexicon
        else:
            self.vocab = dataset.vocab
            self.lexicon = lexicon or build_lexicon(dataset, config.lexicon_size)
        self.model = ParagraphModel(config, self.vocab, self.rng)
        self.adam = Adam(self.model.trainable_parameters(), lr)
        self.cider = build_cider(dataset)
        self.step_count = 0
        self._order = []
        self._cursor = 0
        if checkpoint is not None:
            self._restore(checkpoint)

    def _restore(self, ckpt: Checkpoint) -> None:
        same_phase = ckpt.phase == self.phase
        load_model_arrays(self.model, ckpt.arrays,
                          adam=self.adam if same_phase else None)
        if same_phase:
            self.step_count = ckpt.step
            if ckpt.rng_state is not None:
                self.rng.set_state(ckpt.rng_state)
            self._order = list(ckpt.extra.get("order", []))
            self._cursor = int(ckpt.extra.get("cursor", 0))

    def checkpoint(self, best_val=None) -> Checkpoint:
        return Checkpoint(
            config=self.config, vocab=self.vocab, lexicon=self.lexicon,
            arrays=model_arrays(self.model, self.adam),
            step=self.step_count, phase=self.phase,
            rng_state=self.rng.get_state(), best_val=best_val,
            extra={"order": list(self._order), "cursor": self._cursor},
        )

    def _next_ids(self, n: int) -> list:
        ids = []
        for _ in range(n):
            if self._cursor >= len(self._order):
                self._order = list(self.dataset.split.train)
                self.rng.shuffle(self._order)
                self._cursor = 0
            ids.append(self._order[self._cursor])
            self._cursor += 1
        return ids


class Phase1Trainer(_TrainerBase):
    """Joint cross-entropy + reconstruction + stop-head training."""

    phase = "1"

    def __init__(self, config, dataset, checkpoint=None, lexicon=None, lr=None):
        super().__init__(config, dataset, lr or config.lr_phase1,
                         checkpoint=checkpoint, lexicon=lexicon)

    def step(self) -> dict:
        """One optimizer update over the next minibatch."""
        cfg = self.config
        ids = self._next_ids(min(cfg.batch_size, len(self.dataset.split.train)))
        self.adam.zero_grad()
        total = None
        parts_sum = {"word": 0.0, "stop": 0.0, "rec": 0.0, "n_tokens": 0}
        try:
            for ident in ids:
                raw = self.dataset.features[ident]
                gold = self.dataset.gold(ident, cfg.max_sentences, cfg.max_words)
                loss, parts = self.model.phase1_loss(raw, gold, training=True,
                                                     rng=self.rng)
                total = loss if total is None else T.add(total, loss)
                for k in parts_sum:
                    parts_sum[k] += parts[k]
            total = T.scale(total, 1.0 / len(ids))
            total.backward()
            self.adam.step()
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"phase 1 diverged at step {self.step_count}: {exc}") from exc
        self.step_count += 1
        return {
            "step": self.step_count,
            "loss": total.item(),
            "word_per_token": parts_sum["word"] / max(parts_sum["n_tokens"], 1),
            "rec": parts_sum["rec"] / len(ids),
            "stop": parts_sum["stop"] / len(ids),
        }

    def run(self, epochs: int = None, max_steps: int = None,
            select_best: bool = True, log=None) -> Checkpoint:
        """Train, evaluating validation CIDEr each epoch; returns the
        checkpoint with the best validation CIDEr (falls back to final)."""
        cfg = self.config
        epochs = cfg.epochs_phase1 if epochs is None else epochs
        steps_per_epoch = max(1, (len(self.dataset.split.train)
                                  + cfg.batch_size - 1) // cfg.batch_size)
        best = None
        best_score = -np.inf
        stale = 0
        done = False
        for _epoch in range(epochs):
            for _ in range(steps_per_epoch):
                info = self.step()
                if log:
                    log(info)
                if max_steps is not None and self.step_count >= max_steps:
                    done = True
                    break
            if select_best and self.dataset.split.val:
                score = validation_cider(self.model, self.dataset, self.cider)
                if score > best_score:
                    best_score = score
                    best = self.checkpoint(best_val=score)
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        done = True
            if done:
                break
        if best is not None:
            return best
        return self.checkpoint(best_val=None if best_score == -np.inf else best_score)


class Phase2Trainer(_TrainerBase):
    """Self-critical policy optimization with combined coverage + CIDEr reward."""

    phase = "2"

    def __init__(self, config, dataset, checkpoint, lr=None):
        super().__init__(config, dataset, lr or config.lr_phase2,
                         checkpoint=checkpoint)

    def step(self) -> dict:
        cfg = self.config
        (ident,) = self._next_ids(1)
        raw = self.dataset.features[ident]
        gold_tokens = self.dataset.gold(ident, cfg.max_sentences,
                                        cfg.max_words).flat_tokens()
        gold_words = [self.vocab.decode(t) for t in gold_tokens]
        self.adam.zero_grad()
        try:
            greedy = self.model.decode(raw, mode="greedy")
            sampled = self.model.decode(raw, mode="sample", rng=self.rng)
            r_greedy = self._reward(greedy.paragraph, gold_words)
            r_sample = self._reward(sampled.paragraph, gold_words)
            loss = scst_loss(sampled.log_prob, r_sample.combined,
                             r_greedy.combined)
            loss.backward()
            self.adam.step()
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"phase 2 diverged at step {self.step_count}: {exc}") from exc
        self.step_count += 1
        return {"step": self.step_count, "loss": loss.item(),
                "reward_sample": r_sample.combined,
                "reward_greedy": r_greedy.combined}

    def _reward(self, paragraph, gold_words):
        words = [self.vocab.decode(t) for t in paragraph.flat_tokens()]
        return combined_reward(words, gold_words, self.lexicon, self.cider,
                               beta=self.config.beta)

    def validation_reward(self) -> float:
        return mean_validation_reward(self.model, self.dataset, self.lexicon,
                                      self.cider, self.config.beta)

    def run(self, updates: int = None, log=None) -> Checkpoint:
        updates = self.config.updates_phase2 if updates is None else updates
        for _ in range(updates):
            info = self.step()
            if log:
                log(info)
        best_val = self.validation_reward() if self.dataset.split.val else None
        return self.checkpoint(best_val=best_val)


# ---------------------------------------------------------------------------
# evaluation


def validation_cider(model: ParagraphModel, dataset: Dataset,
                     cider: CiderD) -> float:
    scores = []
    for ident in dataset.split.val:
        result = model.decode(dataset.features[ident], mode="greedy")
        cand = [model.vocab.decode(t) for t in result.paragraph.flat_tokens()]
        scores.append(cider.score(cand, [dataset.gold_tokens(ident)]))
    return float(np.mean(scores)) if scores else 0.0


def mean_validation_reward(model: ParagraphModel, dataset: Dataset,
                           lexicon: ObjectLexicon, cider: CiderD,
                           beta: float) -> float:
    rewards = []
    for ident in dataset.split.val:
        result = model.decode(dataset.features[ident], mode="greedy")
        cand = [model.vocab.decode(t) for t in result.paragraph.flat_tokens()]
        bundle = combined_reward(cand, dataset.gold_tokens(ident), lexicon,
                                 cider, beta=beta)
        rewards.append(bundle.combined)
    return float(np.mean(rewards)) if rewards else 0.0


def evaluate(ckpt: Checkpoint, dataset: Dataset, split: str = "test",
             dump: bool = False) -> dict:
    """Greedy decode a split and report CIDEr, BLEU-4, mean coverage, and a
    sentence-count histogram; optionally per-image outputs."""
    model = model_from_checkpoint(ckpt)
    cider = build_cider(dataset)
    ids = getattr(dataset.split, split)
    cider_scores, coverages, pairs = [], [], []
    histogram = {}
    per_image = []
    for ident in ids:
        if ident not in dataset.features:
            raise KeyError(f"no features for image {ident!r}")
        result = model.decode(dataset.features[ident], mode="greedy")
        cand = [model.vocab.decode(t) for t in result.paragraph.flat_tokens()]
        gold = dataset.gold_tokens(ident)
        cider_scores.append(cider.score(cand, [gold]))
        coverages.append(coverage_reward(cand, gold, ckpt.lexicon))
        pairs.append((cand, [gold]))
        n_sent = len(result.paragraph.sentences)
        histogram[n_sent] = histogram.get(n_sent, 0) + 1
        if dump:
            per_image.append({
                "image_id": ident,
                "sentences": [" ".join(model.vocab.decode(t) for t in s)
                              for s in result.paragraph.sentences],
                "token_ids": [list(map(int, s))
                              for s in result.paragraph.sentences],
                "stop_probs": [float(p) for p in result.stop_probs],
            })
    report = {
        "split": split,
        "n_images": len(ids),
        "CIDEr": float(np.mean(cider_scores)) if cider_scores else 0.0,
        "BLEU4": corpus_bleu4(pairs) if pairs else 0.0,
        "coverage_mean": float(np.mean(coverages)) if coverages else 0.0,
        "sentence_count_histogram": {str(k): v
                                     for k, v in sorted(histogram.items())},
    }
    if dump:
        report["outputs"] = per_image
    return report
