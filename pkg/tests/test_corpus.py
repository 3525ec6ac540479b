import numpy as np
import pytest

from paragen.corpus import (BOS, EOS, PAD, UNK, CorpusError, DatasetRecord,
                            GrammarSpec, Paragraph, RawRegionSet, SplitSpec,
                            Vocabulary, build_vocab, encode_paragraph,
                            load_features, load_records_jsonl, make_split,
                            normalize_regions, render, save_features,
                            save_features_jsonl, save_records_jsonl,
                            synthesize_dataset, tokenize)
from paragen.metrics import ObjectLexicon, coverage_reward
from paragen.tensor import RngStream


class TestTokenize:
    def test_basic_two_sentences(self):
        got = tokenize("A dog runs. It is fast.")
        assert got == [["a", "dog", "runs"], ["it", "is", "fast"]]

    def test_punctuation_stripped(self):
        got = tokenize("Hello, world! Yes?")
        assert got == [["hello", "world"], ["yes"]]

    def test_sentence_cap(self):
        text = " ".join(f"word{i} ." for i in range(10))
        assert len(tokenize(text, max_sentences=6)) == 6

    def test_word_cap(self):
        text = " ".join(f"w{i}" for i in range(30)) + " ."
        sents = tokenize(text, max_words=20)
        assert len(sents[0]) == 20

    def test_empty_text_rejected(self):
        with pytest.raises(CorpusError):
            tokenize("   ")
        with pytest.raises(CorpusError):
            tokenize("...!!!")

    def test_no_trailing_period_still_a_sentence(self):
        assert tokenize("no final stop") == [["no", "final", "stop"]]

    def test_render_round_trip(self):
        text = "the cat sleeps softly . the dog barks loudly ."
        assert render(tokenize(text)) == text


class TestVocabulary:
    def test_specials_occupy_first_ids(self):
        vocab = Vocabulary(["cat", "dog"])
        assert [vocab.decode(i) for i in (PAD, BOS, EOS, UNK)] == \
            ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert vocab.encode("cat") == 4

    def test_unknown_maps_to_unk(self):
        vocab = Vocabulary(["cat"])
        assert vocab.encode("zebra") == UNK

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(CorpusError):
            Vocabulary(["cat", "cat"])

    def test_save_load_round_trip(self, tmp_path):
        vocab = Vocabulary(["cat", "dog", "tree"])
        path = tmp_path / "vocab.json"
        vocab.save(path)
        again = Vocabulary.load(path)
        assert again.id_to_token == vocab.id_to_token

    def test_min_count_threshold(self):
        # "dog" appears 3 times (below the default threshold of 4), "cat" 4
        recs = [DatasetRecord(f"i{k}", "the cat sits . the dog runs ."
                              if k < 3 else "the cat sits .")
                for k in range(4)]
        vocab = build_vocab(recs, min_count=4)
        assert "cat" in vocab
        assert "dog" not in vocab
        assert vocab.encode("dog") == UNK

    def test_min_count_boundary_kept(self):
        recs = [DatasetRecord(f"i{k}", "dog runs .") for k in range(4)]
        vocab = build_vocab(recs, min_count=4)
        assert "dog" in vocab

    def test_id_order_frequency_then_lexicographic(self):
        recs = [DatasetRecord("i0", "b b b a a a c c c c .")]
        vocab = build_vocab(recs, min_count=1)
        # c (freq 4) first, then a/b tied at 3 -> alphabetical
        assert vocab.id_to_token[4:] == ["c", "a", "b"]

    def test_empty_training_set_rejected(self):
        with pytest.raises(CorpusError):
            build_vocab([], min_count=1)


class TestParagraph:
    def test_encode_decode_round_trip(self):
        vocab = Vocabulary(["the", "cat", "sleeps", "softly"])
        para = encode_paragraph("the cat sleeps softly .", vocab, 6, 20)
        assert para.sentences == [[4, 5, 6, 7]]
        assert para.render(vocab) == "the cat sleeps softly ."
        assert para.flat_tokens() == [4, 5, 6, 7]

    def test_unknown_words_encode_to_unk(self):
        vocab = Vocabulary(["the"])
        para = encode_paragraph("the zebra .", vocab, 6, 20)
        assert para.sentences == [[4, UNK]]


class TestFeatureFiles:
    def region_sets(self, n, m=3, d0=4, seed=40):
        rng = RngStream(seed)
        out = []
        for i in range(n):
            out.append(RawRegionSet(
                f"img{i}", rng.normal(0, 1, (m, d0)),
                np.linspace(0.9, 0.3, m).tolist()))
        return out

    def test_binary_round_trip(self, tmp_path):
        sets = self.region_sets(3)
        path = tmp_path / "features.bin"
        save_features(path, sets)
        loaded = load_features(path, m_regions=3)
        assert sorted(loaded) == ["img0", "img1", "img2"]
        for rs in sets:
            got = loaded[rs.image_id]
            assert np.array_equal(got.features, rs.features)
            assert got.objectness == rs.objectness

    def test_jsonl_round_trip(self, tmp_path):
        sets = self.region_sets(2)
        path = tmp_path / "features.jsonl"
        save_features_jsonl(path, sets)
        loaded = load_features(path, m_regions=3)
        for rs in sets:
            assert np.allclose(loaded[rs.image_id].features, rs.features,
                               atol=0)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(CorpusError):
            load_features(path, m_regions=3)

    def test_duplicate_id_rejected(self, tmp_path):
        sets = self.region_sets(1) * 2
        path = tmp_path / "dup.bin"
        save_features(path, sets)
        with pytest.raises(CorpusError):
            load_features(path, m_regions=3)

    def test_truncation_keeps_top_objectness(self, tmp_path):
        rng = RngStream(41)
        feats = rng.normal(0, 1, (60, 4))
        # shuffled objectness; the loader must sort before truncating
        obj = rng.uniform(0, 1, 60).tolist()
        path = tmp_path / "big.bin"
        save_features(path, [RawRegionSet("big", feats, obj)])
        got = load_features(path, m_regions=50)["big"]
        order = np.argsort(-np.asarray(obj), kind="stable")[:50]
        assert np.array_equal(got.features, feats[order])
        assert got.objectness == sorted(obj, reverse=True)[:50]

    def test_padding_with_zero_rows(self, tmp_path):
        sets = self.region_sets(1, m=2)
        path = tmp_path / "small.bin"
        save_features(path, sets)
        got = load_features(path, m_regions=5)["img0"]
        assert got.features.shape == (5, 4)
        assert np.array_equal(got.features[2:], np.zeros((3, 4)))
        assert got.objectness[2:] == [0.0, 0.0, 0.0]

    def test_normalize_sorts_descending(self):
        rs = RawRegionSet("x", np.arange(8.0).reshape(4, 2),
                          [0.2, 0.9, 0.5, 0.7])
        got = normalize_regions(rs, 4)
        assert got.objectness == [0.9, 0.7, 0.5, 0.2]
        assert got.features[0].tolist() == [2.0, 3.0]


class TestRecordsJsonl:
    def test_round_trip(self, tmp_path):
        recs = [DatasetRecord("a", "the cat sits ."),
                DatasetRecord("b", "the dog runs .")]
        path = tmp_path / "records.jsonl"
        save_records_jsonl(path, recs)
        loaded = load_records_jsonl(path)
        assert loaded["a"].paragraph_text == "the cat sits ."
        assert set(loaded) == {"a", "b"}

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        save_records_jsonl(path, [DatasetRecord("a", "x ."),
                                  DatasetRecord("a", "y .")])
        with pytest.raises(CorpusError):
            load_records_jsonl(path)


class TestSplit:
    def test_partition(self):
        split = make_split([f"i{k}" for k in range(10)], 2, 3)
        assert len(split.train) == 5
        assert len(split.val) == 2
        assert len(split.test) == 3
        split.validate([f"i{k}" for k in range(10)])

    def test_too_small_rejected(self):
        with pytest.raises(CorpusError):
            make_split(["a", "b"], 1, 1)

    def test_overlap_detected(self):
        split = SplitSpec(train=["a", "b"], val=["b"], test=["c"])
        with pytest.raises(CorpusError):
            split.validate(["a", "b", "c"])

    def test_coverage_gap_detected(self):
        split = SplitSpec(train=["a"], val=["b"], test=[])
        with pytest.raises(CorpusError):
            split.validate(["a", "b", "c"])


class TestSyntheticData:
    def test_deterministic_under_seed(self):
        a = synthesize_dataset(RngStream(7), 5)
        b = synthesize_dataset(RngStream(7), 5)
        assert [r.paragraph_text for r in a.records] == \
            [r.paragraph_text for r in b.records]
        for x, y in zip(a.region_sets, b.region_sets):
            assert np.array_equal(x.features, y.features)

    def test_different_seeds_differ(self):
        a = synthesize_dataset(RngStream(7), 20)
        b = synthesize_dataset(RngStream(8), 20)
        assert [r.paragraph_text for r in a.records] != \
            [r.paragraph_text for r in b.records]

    def test_one_sentence_per_object(self):
        spec = GrammarSpec(objects_per_image=3)
        data = synthesize_dataset(RngStream(9), 10, spec)
        for rec in data.records:
            assert len(tokenize(rec.paragraph_text)) == 3

    def test_gold_paragraphs_have_no_repeated_trigram(self):
        data = synthesize_dataset(RngStream(10), 50)
        for rec in data.records:
            flat = [t for s in tokenize(rec.paragraph_text) for t in s]
            trigrams = [tuple(flat[i:i + 3]) for i in range(len(flat) - 2)]
            assert len(trigrams) == len(set(trigrams)), rec.paragraph_text

    def test_gold_covers_its_own_objects(self):
        data = synthesize_dataset(RngStream(11), 10)
        lex = ObjectLexicon(tokens=data.object_tokens,
                            frequencies=[1] * len(data.object_tokens))
        for rec in data.records:
            toks = [t for s in tokenize(rec.paragraph_text) for t in s]
            assert coverage_reward(toks, toks, lex) == 1.0

    def test_zero_noise_regions_equal_latents(self):
        spec = GrammarSpec(noise=0.0, objects_per_image=2, m_regions=4)
        data = synthesize_dataset(RngStream(12), 4, spec)
        for rs in data.region_sets:
            # round-robin over 2 objects: rows 0/2 and 1/3 coincide
            assert np.array_equal(rs.features[0], rs.features[2])
            assert np.array_equal(rs.features[1], rs.features[3])

    def test_objectness_descending(self):
        data = synthesize_dataset(RngStream(13), 5)
        for rs in data.region_sets:
            assert rs.objectness == sorted(rs.objectness, reverse=True)

    def test_invalid_spec_rejected(self):
        with pytest.raises(CorpusError):
            GrammarSpec(objects_per_image=5, n_object_types=3)
        with pytest.raises(CorpusError):
            GrammarSpec(n_object_types=99)
