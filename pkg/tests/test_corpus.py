import numpy as np
import pytest

from modtst.corpus import (EvalEntry, EvalSet, ParallelPair, TaggedSentence, Tokenizer, load_corpus,
                           save_corpus, select_by_style_score)
from modtst.exceptions import ContractError, FormatError


@pytest.fixture
def tok():
    return Tokenizer(["l1", "l2"], ["ciao", "mondo", ",", "!"])


def test_tokenize_empty_and_round_trip(tok):
    assert tok.tokenize("", "l1") == [tok.lang_id("l1"), tok.eos_id]
    ids = tok.tokenize("ciao, mondo!", "l1")
    assert tok.detokenize(ids[1:]) == "ciao , mondo !"
    assert tok.detokenize(tok.tokenize("ciao , mondo !", "l2")) == "ciao , mondo !"


def test_unknown_words(tok):
    assert tok.count_unknown(["ciao gatto cane"]) == 2
    assert tok.tokenize("gatto", "l1")[1] == tok.unk_id
    with pytest.raises(ContractError):
        tok.lang_id("l3")


def test_tokenizer_save_load(tok, tmp_path):
    tok.save(tmp_path / "v.json")
    again = Tokenizer.load(tmp_path / "v.json")
    assert again.itos == tok.itos


def test_mono_round_trip(tmp_path):
    corpus = [TaggedSentence(t, "l1", "formal", s) for t, s in [("a b", 1.5), ("c\td", 2.0), ("é ü", 3.25)]]
    save_corpus(corpus, tmp_path / "m.txt", "mono")
    assert load_corpus(tmp_path / "m.txt", "mono") == corpus


def test_parallel_round_trip_with_tabs_and_backslashes(tmp_path):
    pairs = [ParallelPair(TaggedSentence("a\tb \\ c", "l2", "informal"), TaggedSentence("x\\ty", "l2", "formal"))]
    save_corpus(pairs, tmp_path / "p.tsv", "parallel")
    assert load_corpus(tmp_path / "p.tsv", "parallel") == pairs


def test_empty_file_is_empty_corpus(tmp_path):
    (tmp_path / "e.txt").write_bytes(b"")
    assert load_corpus(tmp_path / "e.txt", "mono") == []


def test_bom_is_rejected(tmp_path):
    (tmp_path / "b.txt").write_bytes(b"\xef\xbb\xbfhello\n")
    with pytest.raises(FormatError, match="byte-order"):
        load_corpus(tmp_path / "b.txt", "mono")


def test_malformed_line_reports_its_number(tmp_path):
    (tmp_path / "p.tsv").write_text('#!{"format": "parallel"}\na\tb\nno tab here\n', encoding="utf-8")
    with pytest.raises(FormatError) as err:
        load_corpus(tmp_path / "p.tsv", "parallel")
    assert err.value.line == 3


def test_mixed_languages_cannot_share_a_file(tmp_path):
    with pytest.raises(ContractError, match="language"):
        save_corpus([TaggedSentence("a", "l1"), TaggedSentence("b", "l2")], tmp_path / "x.txt", "mono")


def test_pair_contracts():
    with pytest.raises(ContractError):
        ParallelPair(TaggedSentence("a", "l1", "formal"), TaggedSentence("b", "l1", "formal"))
    with pytest.raises(ContractError):
        ParallelPair(TaggedSentence("a", "l1", "informal"), TaggedSentence("b", "l2", "formal"))
    with pytest.raises(ContractError):
        TaggedSentence("a", "l1", "casual")


@pytest.mark.parametrize("sigma,expected", [(-0.7, "informal"), (-0.5, None), (0.0, None), (1.0, None),
                                            (1.5, "formal"), (-0.5000001, "informal"), (1.0000001, "formal")])
def test_threshold_rules(sigma, expected):
    informal, formal = select_by_style_score([TaggedSentence("x", "l1")], lambda _: sigma)
    got = "informal" if informal else "formal" if formal else None
    assert got == expected
    for s in informal + formal:
        assert s.score == sigma and s.style == expected


def test_selection_partitions_a_scored_corpus():
    sigmas = np.random.default_rng(0).uniform(-3, 3, 1000)
    sigmas[:4] = [-0.5, 1.0, -0.5, 1.0]
    corpus = [TaggedSentence(f"s{i}", "l1") for i in range(1000)]
    score = dict(zip((s.text for s in corpus), sigmas))
    informal, formal = select_by_style_score(corpus, score.get)
    assert {s.text for s in informal} == {t for t, v in score.items() if v < -0.5}
    assert {s.text for s in formal} == {t for t, v in score.items() if v > 1.0}
    assert not {s.text for s in informal} & {s.text for s in formal}


def test_eval_set_multiplicities(tmp_path):
    es = EvalSet("I→F", "l1", [EvalEntry(("a",), ("b", "c"))], k=2)
    swapped = es.swapped()
    assert swapped.direction == "F→I" and swapped.entries[0].sources == ("b", "c")
    with pytest.raises(ContractError, match="references"):
        EvalSet("I→F", "l1", [EvalEntry(("a", "b"), ("c",))], k=2)
    es.save(tmp_path / "e.json")
    assert EvalSet.load(tmp_path / "e.json") == es
