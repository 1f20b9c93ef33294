from fractions import Fraction
import io

import pytest
from hypothesis import given, settings, strategies as st

from hgl.corpus import (
    Corpus,
    Dictionary,
    Sentence,
    Span,
    estimate_noise_rate,
    format_corpus,
    load_corpus,
    load_dictionary,
    read_corpus,
    read_dictionary,
    snap_to_grid,
    weak_label,
    write_corpus,
)
from hgl.errors import EstimationError, ParseError


TWO_SENTENCES = """\
-DOCSTART- d1
George\tB-PER
slept\tO

It\tO
rained\tO
"""


def instances_of(dictionary, *sentences):
    corpus = Corpus(tuple(Sentence(tuple(s.split())) for s in sentences))
    return weak_label(corpus, dictionary)


class TestLoadCorpus:
    def test_two_sentences(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text(TWO_SENTENCES, encoding="utf-8")
        corpus = load_corpus(path)
        assert len(corpus) == 2
        assert corpus.gold_mentions() == [(0, 0, 1, "PER")]
        assert corpus[0].doc_id == "d1"
        assert [s.sent_id for s in corpus] == [0, 1]

    def test_empty(self):
        assert len(read_corpus([])) == 0

    def test_orphan_inside_tag(self):
        with pytest.raises(ParseError) as err:
            read_corpus(io.StringIO("a\tO\nb\tI-PER\n"))
        assert err.value.line == 2

    def test_type_switch_inside_span(self):
        with pytest.raises(ParseError):
            read_corpus(["a\tB-ORG\n", "b\tI-PER\n"])

    def test_wrong_column_count(self):
        with pytest.raises(ParseError) as err:
            read_corpus(["a\tO\n", "b\n"])
        assert err.value.line == 2

    def test_no_gold(self):
        corpus = read_corpus(["a\t-\n", "b\t-\n"])
        assert corpus[0].gold is None
        assert not corpus.has_gold

    def test_mixed_gold_marker(self):
        with pytest.raises(ParseError):
            read_corpus(["a\t-\n", "b\tO\n"])

    def test_chunk_column(self):
        corpus = read_corpus(["Big\tO\tB\n", "Apple\tO\tI\n", "rots\tO\tO\n"])
        assert corpus[0].chunks == (Span(0, 2),)

    def test_adjacent_spans(self):
        corpus = read_corpus(["a\tB-PER\n", "b\tB-PER\n", "c\tI-PER\n"])
        assert corpus[0].gold == ((0, 1, "PER"), (1, 3, "PER"))

    def test_round_trip(self):
        corpus = Corpus((
            Sentence(("a", "b"), "d1", 0, ((0, 2, "ORG"),)),
            Sentence(("c",), "d1", 1, ()),
            Sentence(("x", "Y", "Z"), "d2", 0, None, (Span(1, 3),)),
            Sentence(("q",), "d2", 1, ((0, 1, "PER"),), ()),
        ))
        assert read_corpus(io.StringIO(format_corpus(corpus))) == corpus

    def test_round_trip_without_documents(self, tmp_path):
        corpus = Corpus((Sentence(("a",), "", 0, ()), Sentence(("b",), "", 1, None)))
        write_corpus(corpus, tmp_path / "x.txt")
        assert load_corpus(tmp_path / "x.txt") == corpus


token = st.text(alphabet="abcXYZ-.", min_size=1, max_size=4)


@st.composite
def corpora(draw):
    sents = []
    ndocs = draw(st.integers(1, 3))
    for d in range(ndocs):
        for s in range(draw(st.integers(1, 3))):
            toks = tuple(draw(st.lists(token, min_size=1, max_size=6)))
            gold = None
            if draw(st.booleans()):
                gold, i = [], 0
                while i < len(toks):
                    j = draw(st.integers(i, len(toks)))
                    if j > i and draw(st.booleans()):
                        gold.append((i, j, draw(st.sampled_from(["PER", "ORG"]))))
                        i = j
                    else:
                        i += 1
                gold = tuple(gold)
            sents.append(Sentence(toks, f"doc{d}", s, gold))
    return Corpus(tuple(sents))


@settings(max_examples=100, deadline=None)
@given(corpora())
def test_round_trip_property(corpus):
    assert read_corpus(io.StringIO(format_corpus(corpus))) == corpus


class TestDictionary:
    def test_single_line(self):
        d = read_dictionary(["PER\tGeorge Washington\n"])
        assert ("George", "Washington") in d.phrases("PER")

    def test_duplicates(self):
        d = read_dictionary(["PER\tGeorge\n", "PER\tGeorge\n"])
        assert len(d) == 1

    def test_empty_phrase(self):
        with pytest.raises(ParseError) as err:
            read_dictionary(["PER\tok\n", "PER\t\n"])
        assert err.value.line == 2

    def test_missing_tab(self):
        with pytest.raises(ParseError):
            read_dictionary(["PER George\n"])

    def test_load(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("GPE\tNew York\nPER\tAda\n", encoding="utf-8")
        assert load_dictionary(path).types == ["GPE", "PER"]


class TestWeakLabel:
    def test_longest_match(self):
        d = Dictionary({"GPE": [("New", "York"), ("New", "York", "City")]})
        (inst,) = instances_of(d, "New York City")
        assert inst.span == Span(0, 3) and inst.entity_type == "GPE"

    def test_multi_type(self):
        d = Dictionary({"PER": [("Washington",)], "GPE": [("Washington",)]})
        out = instances_of(d, "Washington slept")
        assert sorted((i.entity_type, i.span) for i in out) == [("GPE", Span(0, 1)), ("PER", Span(0, 1))]

    def test_no_match(self):
        assert instances_of(Dictionary({"PER": [("Ada",)]}), "nobody here") == []

    def test_case_sensitive(self):
        assert instances_of(Dictionary({"PER": [("Ada",)]}), "ada") == []

    def test_resumes_after_match(self):
        d = Dictionary({"ORG": [("a", "b")], "PER": [("b", "c")]})
        out = instances_of(d, "a b c")
        assert [(i.entity_type, i.span) for i in out] == [("ORG", Span(0, 2))]

    def test_longest_across_types(self):
        d = Dictionary({"PER": [("New",)], "GPE": [("New", "York")]})
        out = instances_of(d, "New York")
        assert [(i.entity_type, i.span) for i in out] == [("GPE", Span(0, 2))]

    def test_gold_flags(self):
        sent = Sentence(("Ada", "met", "Bob"), gold=((0, 1, "PER"),))
        d = Dictionary({"PER": [("Ada",), ("Bob",)]})
        out = weak_label(Corpus((sent,)), d)
        assert [i.gold for i in out] == [True, False]

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), min_size=1, max_size=5),
        st.dictionaries(
            st.sampled_from(["PER", "ORG", "GPE"]),
            st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=3), min_size=1, max_size=4),
            min_size=1,
        ),
    )
    def test_properties(self, sents, entries):
        corpus = Corpus(tuple(Sentence(tuple(s)) for s in sents))
        d = Dictionary(entries)
        out = weak_label(corpus, d)
        assert weak_label(corpus, d) == out
        by_sentence = {}
        for inst in out:
            assert (inst.entity_type, inst.phrase) in d
            by_sentence.setdefault(inst.sent_index, set()).add(inst.span)
        for spans in by_sentence.values():
            spans = sorted(spans)
            for a, b in zip(spans, spans[1:]):
                assert not a.overlaps(b)


class TestNoiseRate:
    def _instances(self, correct, total, etype="PER"):
        sent = Sentence(("x",))
        from hgl.corpus import Instance

        return [Instance(sent, 0, Span(0, 1), etype, gold=i < correct) for i in range(total)]

    def test_worked_example(self):
        # 34.1% noise -> 65.9% accuracy -> 0.65 (35% noise).
        entry = estimate_noise_rate(self._instances(659, 1000), "PER", population=5000)
        assert entry.accuracy == pytest.approx(0.65)
        assert entry.population == 5000

    def test_on_grid(self):
        assert estimate_noise_rate(self._instances(1, 5), "PER").accuracy == pytest.approx(0.20)

    def test_half_away_from_zero(self):
        assert estimate_noise_rate(self._instances(7, 8), "PER").accuracy == pytest.approx(0.90)

    def test_population_defaults_to_dev_size(self):
        assert estimate_noise_rate(self._instances(3, 4), "PER").population == 4

    def test_no_instances(self):
        with pytest.raises(EstimationError):
            estimate_noise_rate(self._instances(1, 3), "ORG")

    def test_missing_gold(self):
        from hgl.corpus import Instance

        with pytest.raises(EstimationError):
            estimate_noise_rate([Instance(Sentence(("x",)), 0, Span(0, 1), "PER")], "PER")

    def test_grid_exhaustive(self):
        # Every rational c/n with n <= 60 snaps to the nearest grid point,
        # ties resolved upward.
        for n in range(1, 61):
            for c in range(n + 1):
                x = Fraction(c, n)
                snapped = Fraction(snap_to_grid(x)).limit_denominator(20)
                assert snapped.denominator in (1, 2, 4, 5, 10, 20)
                dist = abs(x - snapped)
                assert dist <= Fraction(1, 40)
                if dist == Fraction(1, 40):
                    assert snapped > x
                grid = [Fraction(g, 20) for g in range(21)]
                assert dist == min(abs(x - g) for g in grid)
