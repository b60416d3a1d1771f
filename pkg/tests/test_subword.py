import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtrans.errors import ArgumentError, FormatError
from simtrans.subword import (
    BPE_HEADER,
    SPECIALS,
    BpeModel,
    Vocab,
    apply_bpe,
    build_vocab,
    learn_bpe,
    revert_bpe,
    revert_bpe_counted,
)

# Alphabet without "@": a word containing the marker text cannot be reverted unambiguously.
WORD = st.text(alphabet="abcdeéñxyz0.,'", min_size=1, max_size=8)
SENTENCE = st.lists(WORD, min_size=0, max_size=8)


class TestLearn:
    def test_first_merge_example(self):
        model = learn_bpe(["ab ab abc"], 1)
        assert model.merges == (("a", "b"),)

    def test_zero_merges(self):
        assert learn_bpe(["ab ab abc"], 0).merges == ()

    def test_single_character_word(self):
        assert learn_bpe(["a"], 10).merges == ()

    def test_empty_corpus(self):
        with pytest.raises(ArgumentError):
            learn_bpe([], 5)

    def test_negative(self):
        with pytest.raises(ArgumentError):
            learn_bpe(["ab"], -1)

    def test_stops_when_no_pair_repeats(self):
        # every pair occurs once
        assert learn_bpe(["abc"], 5).merges == ()

    def test_lexicographic_tie_break(self):
        # (a,b) and (c,d) both occur twice
        assert learn_bpe(["ab cd ab cd"], 1).merges == (("a", "b"),)

    def test_frequency_weighting(self):
        model = learn_bpe([["xy"] * 3 + ["ab"] * 2], 2)
        assert model.merges == (("x", "y"), ("a", "b"))

    def test_matches_naive_recount(self):
        """Incremental statistics agree with recounting from scratch every round."""
        from collections import Counter

        corpus = ["the then there these thesis", "hat that than the", "aaaa aaa aa"] * 2

        words = Counter(w for s in corpus for w in s.split())
        seqs = {w: list(w) for w in words}
        expected = []
        for _ in range(15):
            stats = Counter()
            for w, sym in seqs.items():
                for p in zip(sym, sym[1:]):
                    stats[p] += words[w]
            if not stats:
                break
            best, count = min(stats.items(), key=lambda kv: (-kv[1], kv[0]))
            if count < 2:
                break
            expected.append(best)
            for w, sym in seqs.items():
                out, i = [], 0
                while i < len(sym):
                    if i + 1 < len(sym) and (sym[i], sym[i + 1]) == best:
                        out.append(sym[i] + sym[i + 1])
                        i += 2
                    else:
                        out.append(sym[i])
                        i += 1
                seqs[w] = out
        assert list(learn_bpe(corpus, 15).merges) == expected

    def test_prefix_property(self):
        corpus = ["lower lowest newer newest wider widest", "low low new news"] * 3
        full = learn_bpe(corpus, 50).merges
        for k in range(1, 51):
            assert learn_bpe(corpus, k).merges == full[:k]


class TestApply:
    def test_example(self):
        assert apply_bpe(["abc"], BpeModel((("a", "b"),))) == ["ab@@", "c"]

    def test_no_merges(self):
        assert apply_bpe(["ab"], BpeModel()) == ["a@@", "b"]

    def test_string_input(self):
        assert apply_bpe("ab c", BpeModel((("a", "b"),))) == ["ab", "c"]

    def test_rank_order(self):
        # (b,c) has higher priority than (a,b)
        model = BpeModel((("b", "c"), ("a", "b")))
        assert apply_bpe(["abc"], model) == ["a@@", "bc"]

    def test_unknown_characters_pass_through(self):
        assert apply_bpe(["ñb"], BpeModel((("a", "b"),))) == ["ñ@@", "b"]

    @settings(max_examples=300, deadline=None)
    @given(SENTENCE)
    def test_roundtrip(self, sentence):
        model = learn_bpe([" ".join(sentence) or "x"] * 2, 20)
        assert revert_bpe(apply_bpe(sentence, model)) == sentence

    @settings(max_examples=200, deadline=None)
    @given(WORD)
    def test_characters_preserved(self, word):
        model = learn_bpe([word, word, "abc abd"], 10)
        pieces = apply_bpe([word], model)
        assert "".join(p.removesuffix("@@") for p in pieces) == word


class TestRevert:
    def test_examples(self):
        assert revert_bpe(["ab@@", "c"]) == ["abc"]
        assert revert_bpe([]) == []
        assert revert_bpe(["x"]) == ["x"]

    def test_dangling_marker(self, caplog):
        words, dangling = revert_bpe_counted(["a", "b@@"])
        assert words == ["a", "b"]
        assert dangling == 1
        with caplog.at_level(logging.WARNING):
            assert revert_bpe(["b@@"]) == ["b"]
        assert "dangling" in caplog.text


class TestBpeFile:
    def test_roundtrip(self, tmp_path):
        model = learn_bpe(["lower lowest newer newest"] * 2, 10)
        path = tmp_path / "codes"
        model.save(path)
        assert path.read_text().splitlines()[0] == BPE_HEADER
        assert BpeModel.load(path) == model

    def test_missing_header(self, tmp_path):
        path = tmp_path / "codes"
        path.write_text("a b\n")
        with pytest.raises(FormatError):
            BpeModel.load(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "codes"
        path.write_text(BPE_HEADER + "\na b c\n")
        with pytest.raises(FormatError, match=":2:"):
            BpeModel.load(path)

    def test_duplicate_rule(self):
        with pytest.raises(ArgumentError):
            BpeModel((("a", "b"), ("a", "b")))


class TestVocab:
    def test_size(self):
        assert len(build_vocab([["a b", "b"]])) == 4 + 2

    def test_specials_first(self):
        v = build_vocab([["a"]])
        assert v.tokens[:4] == SPECIALS
        assert [v.id(t) for t in SPECIALS] == [0, 1, 2, 3]

    def test_idempotent_over_duplicates(self):
        corpus = ["a b b c", "c c c"]
        assert build_vocab([corpus]).tokens[4:] == build_vocab([corpus, corpus]).tokens[4:]

    def test_tags_precede_tokens(self):
        v = build_vocab([["x y"]], ["<2hr>", "<2sl>"])
        ids = [v.id("<2hr>"), v.id("<2sl>")]
        assert ids == [4, 5]
        assert max(ids) < min(v.id("x"), v.id("y"))

    def test_frequency_then_lexicographic(self):
        v = build_vocab([["b a c c", "b"]])
        assert v.tokens[4:] == ("b", "c", "a")

    def test_deterministic(self):
        corpus = ["z y x w v", "y x", "x"]
        assert build_vocab([corpus]) == build_vocab([list(corpus)])

    def test_unknown_maps_to_unk(self):
        v = build_vocab([["a"]])
        assert v.encode(["a", "zzz"]) == [4, 3]
        assert v.decode([4]) == ["a"]
        assert "a" in v and "zzz" not in v

    def test_empty(self):
        with pytest.raises(ArgumentError):
            build_vocab([])

    def test_file_roundtrip(self, tmp_path):
        v = build_vocab([["a b c", "a"]], ["<2ca>"])
        v.save(tmp_path / "v.txt")
        assert Vocab.load(tmp_path / "v.txt") == v

    def test_bad_file(self, tmp_path):
        (tmp_path / "v.txt").write_text("<pad>\t0\n<s>\t1\n</s>\t2\n<unk>\t5\n")
        with pytest.raises(FormatError):
            Vocab.load(tmp_path / "v.txt")

    def test_reserved_specials_required(self):
        with pytest.raises(ArgumentError):
            Vocab(("a", "b"))
