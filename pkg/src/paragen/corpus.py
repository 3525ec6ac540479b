"""Dataset handling: tokenization, vocabulary, feature files, synthetic data."""

from __future__ import annotations

import json
import string
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from paragen.tensor import RngStream

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class CorpusError(ValueError):
    pass


class Vocabulary:
    """Dense token/id bijection with PAD/BOS/EOS/UNK specials."""

    def __init__(self, tokens):
        self.id_to_token = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def decode(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode_sentence(self, tokens) -> list:
        return [self.encode(t) for t in tokens]

    def to_json(self) -> dict:
        return {"tokens": self.id_to_token[len(SPECIAL_TOKENS):]}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def tokenize(text: str, max_sentences: int = 6, max_words: int = 20) -> list:
    """Lowercase, split into sentences on . ! ?, strip punctuation from tokens.

    Sentences beyond the cap and tokens beyond the per-sentence cap are
    truncated. Empty text is an error.
    """
    if not text or not text.strip():
        raise CorpusError("cannot tokenize empty text")
    text = text.lower()
    pieces, current = [], []
    for ch in text:
        if ch in ".!?":
            pieces.append("".join(current))
            current = []
        else:
            current.append(ch)
    pieces.append("".join(current))
    sentences = []
    for piece in pieces:
        tokens = [w.translate(_PUNCT_TABLE) for w in piece.split()]
        tokens = [w for w in tokens if w]
        if tokens:
            sentences.append(tokens[:max_words])
    if not sentences:
        raise CorpusError("text contains no tokens")
    return sentences[:max_sentences]


def render(sentences) -> str:
    return " ".join(" ".join(s) + " ." for s in sentences).strip()


def build_vocab(records, min_count: int = 4) -> Vocabulary:
    """Frequency-thresholded vocabulary with deterministic id order.

    Ids are assigned by descending frequency, ties broken lexicographically.
    """
    records = list(records)
    if not records:
        raise CorpusError("cannot build a vocabulary from an empty training set")
    counts = Counter()
    for rec in records:
        for sent in tokenize(rec.paragraph_text, max_sentences=10 ** 9,
                             max_words=10 ** 9):
            counts.update(sent)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# data types


@dataclass
class RawRegionSet:
    """Per-image raw detector features, rows ordered by descending objectness."""
    image_id: str
    features: np.ndarray      # (M, D0) float64
    objectness: list

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.objectness = [float(o) for o in self.objectness]
        if self.features.ndim != 2 or len(self.objectness) != self.features.shape[0]:
            raise CorpusError(f"malformed region set for {self.image_id}")


@dataclass
class DatasetRecord:
    image_id: str
    paragraph_text: str

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "paragraph": self.paragraph_text}

    @classmethod
    def from_json(cls, d: dict) -> "DatasetRecord":
        return cls(image_id=d["image_id"], paragraph_text=d["paragraph"])


@dataclass
class SplitSpec:
    train: list
    val: list
    test: list

    def validate(self, all_ids) -> None:
        parts = [set(self.train), set(self.val), set(self.test)]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise CorpusError("split lists overlap")
        if parts[0] | parts[1] | parts[2] != set(all_ids):
            raise CorpusError("split does not cover the dataset")

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_json(cls, d: dict) -> "SplitSpec":
        return cls(train=list(d["train"]), val=list(d["val"]), test=list(d["test"]))


@dataclass
class Paragraph:
    """Token-id sentences (no PAD before EOS) plus optional rendered text."""
    sentences: list                  # list of list[int], EOS not stored
    text: str = ""

    def flat_tokens(self) -> list:
        return [t for s in self.sentences for t in s]

    def render(self, vocab: Vocabulary) -> str:
        return render([[vocab.decode(t) for t in s] for s in self.sentences])


def encode_paragraph(text: str, vocab: Vocabulary, max_sentences: int,
                     max_words: int) -> Paragraph:
    sents = tokenize(text, max_sentences, max_words)
    return Paragraph(sentences=[vocab.encode_sentence(s) for s in sents], text=text)


# ---------------------------------------------------------------------------
# feature files

_FEATURE_MAGIC = b"RFEA"


def save_features(path, region_sets) -> None:
    """Binary region feature file; one record per image, little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        for rs in region_sets:
            ident = rs.image_id.encode("utf-8")
            m, d0 = rs.features.shape
            fh.write(struct.pack("<III", len(ident), m, d0))
            fh.write(ident)
            fh.write(rs.features.astype("<f8").tobytes())
            fh.write(np.asarray(rs.objectness, dtype="<f8").tobytes())


def save_features_jsonl(path, region_sets) -> None:
    with open(path, "w") as fh:
        for rs in region_sets:
            m, d0 = rs.features.shape
            fh.write(json.dumps({
                "image_id": rs.image_id, "m": m, "d0": d0,
                "features": rs.features.ravel().tolist(),
                "objectness": rs.objectness,
            }) + "\n")


def _iter_feature_records(path):
    if str(path).endswith(".jsonl"):
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                feats = np.asarray(d["features"], dtype=np.float64)
                yield RawRegionSet(
                    d["image_id"], feats.reshape(d["m"], d["d0"]), d["objectness"])
        return
    with open(path, "rb") as fh:
        if fh.read(4) != _FEATURE_MAGIC:
            raise CorpusError(f"{path}: not a region feature file")
        while True:
            head = fh.read(12)
            if not head:
                break
            if len(head) != 12:
                raise CorpusError(f"{path}: truncated record header")
            id_len, m, d0 = struct.unpack("<III", head)
            ident = fh.read(id_len).decode("utf-8")
            body = fh.read(8 * m * d0)
            obj = fh.read(8 * m)
            if len(body) != 8 * m * d0 or len(obj) != 8 * m:
                raise CorpusError(f"{path}: truncated record for {ident}")
            feats = np.frombuffer(body, dtype="<f8").reshape(m, d0).copy()
            yield RawRegionSet(ident, feats, np.frombuffer(obj, dtype="<f8").tolist())


def load_features(path, m_regions: int) -> dict:
    """Load, sort by descending objectness, and truncate/pad to exactly M rows.

    Padding rows are zero features with objectness 0.
    """
    out = {}
    for rs in _iter_feature_records(path):
        if rs.image_id in out:
            raise CorpusError(f"duplicate image_id {rs.image_id!r}")
        out[rs.image_id] = normalize_regions(rs, m_regions)
    return out


def normalize_regions(rs: RawRegionSet, m_regions: int) -> RawRegionSet:
    order = np.argsort(-np.asarray(rs.objectness), kind="stable")
    feats = rs.features[order][:m_regions]
    obj = [rs.objectness[i] for i in order][:m_regions]
    if feats.shape[0] < m_regions:
        pad = m_regions - feats.shape[0]
        feats = np.vstack([feats, np.zeros((pad, feats.shape[1]))])
        obj = obj + [0.0] * pad
    return RawRegionSet(rs.image_id, feats, obj)


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    records: dict                   # image_id -> DatasetRecord
    features: dict                  # image_id -> RawRegionSet (normalized to M)
    split: SplitSpec
    vocab: Vocabulary

    def __post_init__(self):
        for ident in self.records:
            if ident not in self.features:
                raise CorpusError(f"no features for image {ident!r}")
        self.split.validate(self.records.keys())

    def gold(self, image_id: str, max_sentences: int, max_words: int) -> Paragraph:
        return encode_paragraph(self.records[image_id].paragraph_text,
                                self.vocab, max_sentences, max_words)

    def gold_tokens(self, image_id: str) -> list:
        """Flat lowercase token list of the gold paragraph, uncapped."""
        sents = tokenize(self.records[image_id].paragraph_text,
                         max_sentences=10 ** 9, max_words=10 ** 9)
        return [t for s in sents for t in s]


def save_records_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_records_jsonl(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = DatasetRecord.from_json(json.loads(line))
            if rec.image_id in out:
                raise CorpusError(f"duplicate image_id {rec.image_id!r}")
            out[rec.image_id] = rec
    return out


# ---------------------------------------------------------------------------
# synthetic data

_OBJECT_GRAMMAR = [
    ("cat", "sleeps", "softly"),
    ("dog", "barks", "loudly"),
    ("bird", "sings", "sweetly"),
    ("fish", "swims", "slowly"),
    ("tree", "sways", "gently"),
    ("car", "shines", "brightly"),
    ("horse", "gallops", "fast"),
    ("boat", "floats", "calmly"),
    ("clock", "ticks", "steadily"),
    ("lamp", "glows", "warmly"),
]


@dataclass
class GrammarSpec:
    objects_per_image: int = 3
    n_object_types: int = 8
    d_raw: int = 8
    m_regions: int = 4
    noise: float = 0.05
    latent_scale: float = 1.0

    def __post_init__(self):
        if not 1 <= self.n_object_types <= len(_OBJECT_GRAMMAR):
            raise CorpusError(
                f"n_object_types must be in [1, {len(_OBJECT_GRAMMAR)}]")
        if self.objects_per_image > self.n_object_types:
            raise CorpusError("more objects per image than object types")


@dataclass
class SyntheticData:
    records: list = field(default_factory=list)     # DatasetRecord
    region_sets: list = field(default_factory=list)  # RawRegionSet
    object_tokens: list = field(default_factory=list)


def synthesize_dataset(rng: RngStream, n_images: int,
                       spec: GrammarSpec = None) -> SyntheticData:
    """Generate images as clusters of object latents plus template paragraphs.

    Each image gets `objects_per_image` distinct object types; regions are
    assigned round-robin to the objects and carry that object's latent
    vector plus noise, so coverage and topic structure are learnable by
    construction. One sentence per object, with object-specific verbs and
    adverbs so gold paragraphs never repeat a trigram. Deterministic under
    the rng seed.
    """
    spec = spec or GrammarSpec()
    grammar = _OBJECT_GRAMMAR[:spec.n_object_types]
    latents = rng.normal(0.0, spec.latent_scale,
                         (spec.n_object_types, spec.d_raw))
    data = SyntheticData(object_tokens=[g[0] for g in grammar])
    for i in range(n_images):
        ident = f"img{i:04d}"
        chosen = sorted(_sample_distinct(rng, spec.n_object_types,
                                         spec.objects_per_image))
        sentences = []
        for obj_idx in chosen:
            noun, verb, adverb = grammar[obj_idx]
            sentences.append(f"the {noun} {verb} {adverb} .")
        text = " ".join(sentences)
        feats = np.zeros((spec.m_regions, spec.d_raw))
        for r in range(spec.m_regions):
            obj_idx = chosen[r % len(chosen)]
            feats[r] = latents[obj_idx] + rng.normal(0.0, spec.noise, spec.d_raw)
        objectness = np.sort(rng.uniform(0.1, 1.0, spec.m_regions))[::-1].tolist()
        data.records.append(DatasetRecord(ident, text))
        data.region_sets.append(RawRegionSet(ident, feats, objectness))
    return data


def _sample_distinct(rng: RngStream, n_types: int, k: int) -> list:
    pool = list(range(n_types))
    chosen = []
    for _ in range(k):
        j = int(rng.integers(0, len(pool)))
        chosen.append(pool.pop(j))
    return chosen


def make_split(ids, n_val: int, n_test: int) -> SplitSpec:
    ids = list(ids)
    if n_val + n_test >= len(ids):
        raise CorpusError("not enough ids for the requested val/test sizes")
    n_train = len(ids) - n_val - n_test
    return SplitSpec(train=ids[:n_train],
                     val=ids[n_train:n_train + n_val],
                     test=ids[n_train + n_val:])
