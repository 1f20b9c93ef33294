"""Corpus and dictionary data model, file formats and weak labeling.

Corpus files hold one token per line as ``token<TAB>tag`` where ``tag`` is a
BIO tag (``B-TYPE``, ``I-TYPE``, ``O``) or ``-`` when gold annotation is not
available.  An optional third column carries externally chunked candidate
spans as ``B``/``I``/``O``.  Blank lines separate sentences and a line
``-DOCSTART- <id>`` opens a new document.

Dictionary files are TSV, one ``TYPE<TAB>token1 token2 ...`` entry per line.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
import io
import math
from typing import NamedTuple, Optional

from .errors import EstimationError, ParseError

__all__ = [
    "Span",
    "Sentence",
    "Corpus",
    "Dictionary",
    "Instance",
    "NoiseEntry",
    "DICTIONARY_MATCH",
    "BLOCKED_CANDIDATE",
    "load_corpus",
    "read_corpus",
    "write_corpus",
    "format_corpus",
    "load_dictionary",
    "read_dictionary",
    "write_dictionary",
    "weak_label",
    "snap_to_grid",
    "estimate_noise_rate",
]

DICTIONARY_MATCH = "dictionary-match"
BLOCKED_CANDIDATE = "blocked-candidate"
DOCSTART = "-DOCSTART-"


class Span(NamedTuple):
    start: int
    end: int

    def overlaps(self, other):
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    doc_id: str = ""
    sent_id: int = 0
    # (start, end, type) triples, or None when gold is unavailable.
    gold: Optional[tuple] = None
    chunks: Optional[tuple] = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("sentence must contain at least one token")
        for tok in self.tokens:
            if not tok or any(c in tok for c in "\t\n\r"):
                raise ValueError(f"invalid token {tok!r}")

    def __len__(self):
        return len(self.tokens)

    def gold_set(self):
        return frozenset(self.gold or ())


@dataclass(frozen=True)
class Corpus:
    sentences: tuple = ()

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    @property
    def has_gold(self):
        return any(s.gold is not None for s in self.sentences)

    def gold_mentions(self):
        """All gold mentions as ``(sentence_index, start, end, type)``."""
        out = []
        for i, sent in enumerate(self.sentences):
            for start, end, etype in sent.gold or ():
                out.append((i, start, end, etype))
        return out


@dataclass
class Dictionary:
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = {t: set(map(tuple, ps)) for t, ps in self.entries.items()}
        self._index = None

    @property
    def types(self):
        return sorted(self.entries)

    def add(self, etype, phrase):
        phrase = tuple(phrase)
        if not phrase:
            raise ValueError("empty phrase")
        self.entries.setdefault(etype, set()).add(phrase)
        self._index = None

    def phrases(self, etype):
        return self.entries.get(etype, set())

    def __contains__(self, item):
        etype, phrase = item
        return tuple(phrase) in self.entries.get(etype, ())

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def by_first_token(self):
        """Map first token -> list of ``(phrase, sorted types)``, longest first."""
        if self._index is None:
            types_of = defaultdict(set)
            for etype, phrases in self.entries.items():
                for phrase in phrases:
                    types_of[phrase].add(etype)
            index = defaultdict(list)
            for phrase, ts in types_of.items():
                index[phrase[0]].append((phrase, tuple(sorted(ts))))
            for cands in index.values():
                cands.sort(key=lambda pt: (-len(pt[0]), pt[0]))
            self._index = dict(index)
        return self._index


@dataclass(frozen=True)
class Instance:
    sentence: Sentence
    sent_index: int
    span: Span
    entity_type: str
    source: str = DICTIONARY_MATCH
    gold: Optional[bool] = None

    @property
    def key(self):
        return (self.sentence.doc_id, self.sentence.sent_id, self.span.start, self.span.end, self.entity_type)

    @property
    def phrase(self):
        return self.sentence.tokens[self.span.start:self.span.end]


class NoiseEntry(NamedTuple):
    accuracy: float
    population: int


# --------------------------------------------------------------------------
# corpus files


def _bio_spans(tags, lineno, path=None):
    spans = []
    start = etype = None
    for i, tag in enumerate(tags + ["O"]):
        if tag == "O" or tag.startswith("B-"):
            if etype is not None:
                spans.append((start, i, etype))
                start = etype = None
            if tag.startswith("B-"):
                start, etype = i, tag[2:]
                if not etype:
                    raise ParseError(f"empty entity type in tag {tag!r}", lineno[i], path)
        elif tag.startswith("I-"):
            if etype != tag[2:]:
                raise ParseError(f"tag {tag!r} not preceded by B-{tag[2:]} or {tag}", lineno[i], path)
        else:
            raise ParseError(f"unknown tag {tag!r}", lineno[i], path)
    return tuple(spans)


def _chunk_spans(marks, lineno, path=None):
    spans = []
    start = None
    for i, m in enumerate(marks + ["O"]):
        if m in ("O", "B"):
            if start is not None:
                spans.append(Span(start, i))
                start = None
            if m == "B":
                start = i
        elif m == "I":
            if start is None:
                raise ParseError("chunk tag 'I' not preceded by 'B'", lineno[i], path)
        else:
            raise ParseError(f"unknown chunk tag {m!r}", lineno[i], path)
    return tuple(spans)


def read_corpus(lines, path=None):
    """Parse corpus lines (an iterable of strings) into a :class:`Corpus`."""
    sentences = []
    doc_id = ""
    sent_id = 0
    rows = []

    def flush():
        nonlocal rows, sent_id
        if not rows:
            return
        tokens = [r[1] for r in rows]
        tags = [r[2] for r in rows]
        linenos = [r[0] for r in rows]
        ncols = {len(r) for r in rows}
        if len(ncols) > 1:
            raise ParseError("inconsistent column count within sentence", linenos[0], path)
        if all(t == "-" for t in tags):
            gold = None
        elif "-" in tags:
            raise ParseError("mixed '-' and BIO tags within sentence", linenos[tags.index("-")], path)
        else:
            gold = _bio_spans(tags, linenos, path)
        chunks = _chunk_spans([r[3] for r in rows], linenos, path) if ncols == {4} else None
        sentences.append(Sentence(tuple(tokens), doc_id, sent_id, gold, chunks))
        sent_id += 1
        rows = []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith(DOCSTART):
            flush()
            rest = line[len(DOCSTART):]
            if rest and not rest.startswith(" "):
                raise ParseError(f"malformed document header {line!r}", lineno, path)
            doc_id = rest.strip()
            sent_id = 0
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3) or not cols[0] or not cols[1]:
            raise ParseError(f"expected 2 or 3 tab-separated columns, got {len(cols)}", lineno, path)
        rows.append((lineno, *cols))
    flush()
    return Corpus(tuple(sentences))


def load_corpus(path):
    with open(path, encoding="utf-8") as fh:
        return read_corpus(fh, path=str(path))


def _tags_for(sent):
    if sent.gold is None:
        return ["-"] * len(sent)
    tags = ["O"] * len(sent)
    for start, end, etype in sorted(sent.gold):
        tags[start] = "B-" + etype
        for i in range(start + 1, end):
            tags[i] = "I-" + etype
    return tags


def format_corpus(corpus):
    out = io.StringIO()
    write_corpus(corpus, out)
    return out.getvalue()


def write_corpus(corpus, dest):
    """Write ``corpus`` to a path or text stream in the corpus file format."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            return write_corpus(corpus, fh)
    doc_id = ""
    written = False
    for sent in corpus:
        if sent.doc_id != doc_id:
            if written:
                dest.write("\n")
            dest.write(f"{DOCSTART} {sent.doc_id}\n")
            doc_id = sent.doc_id
            written = False
        elif written:
            dest.write("\n")
        written = True
        tags = _tags_for(sent)
        chunk = None
        if sent.chunks is not None:
            chunk = ["O"] * len(sent)
            for start, end in sent.chunks:
                chunk[start] = "B"
                for i in range(start + 1, end):
                    chunk[i] = "I"
        for i, tok in enumerate(sent.tokens):
            cols = [tok, tags[i]] + ([chunk[i]] if chunk is not None else [])
            dest.write("\t".join(cols) + "\n")


# --------------------------------------------------------------------------
# dictionary files


def read_dictionary(lines, path=None):
    entries = defaultdict(set)
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ParseError("missing tab between type and phrase", lineno, path)
        etype, phrase = line.split("\t", 1)
        tokens = tuple(phrase.split())
        if not etype.strip():
            raise ParseError("empty entity type", lineno, path)
        if not tokens:
            raise ParseError("empty phrase", lineno, path)
        entries[etype.strip()].add(tokens)
    return Dictionary(dict(entries))


def load_dictionary(path):
    with open(path, encoding="utf-8") as fh:
        return read_dictionary(fh, path=str(path))


def write_dictionary(dictionary, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for etype in dictionary.types:
            for phrase in sorted(dictionary.phrases(etype)):
                fh.write(f"{etype}\t{' '.join(phrase)}\n")


# --------------------------------------------------------------------------
# weak labeling


def weak_label(corpus, dictionary):
    """Forward maximum matching of dictionary phrases over every sentence.

    At each position the longest phrase (over all types) wins and one instance
    is emitted per type owning that phrase; scanning resumes after the match.
    Matching is exact and case-sensitive.
    """
    index = dictionary.by_first_token()
    out = []
    for si, sent in enumerate(corpus):
        toks = sent.tokens
        gold = sent.gold_set() if sent.gold is not None else None
        i = 0
        while i < len(toks):
            match = None
            for phrase, types in index.get(toks[i], ()):
                if toks[i:i + len(phrase)] == phrase:
                    match = (phrase, types)
                    break
            if match is None:
                i += 1
                continue
            phrase, types = match
            span = Span(i, i + len(phrase))
            for etype in types:
                flag = None if gold is None else (span.start, span.end, etype) in gold
                out.append(Instance(sent, si, span, etype, DICTIONARY_MATCH, flag))
            i = span.end
    return out


# --------------------------------------------------------------------------
# noise-rate estimation


def snap_to_grid(value, step=Fraction(1, 20)):
    """Round ``value`` to the nearest multiple of ``step``, ties away from zero.

    Floats are read at their shortest decimal representation, so 0.975 is a tie.
    """
    if isinstance(value, float):
        value = Fraction(repr(value))
    x = Fraction(value) / Fraction(step)
    sign = -1 if x < 0 else 1
    return float(sign * math.floor(abs(x) + Fraction(1, 2)) * Fraction(step))


def estimate_noise_rate(instances, entity_type, population=None):
    """Dev-set accuracy of ``entity_type`` snapped to the 5% grid.

    Returns a :class:`NoiseEntry` whose ``population`` is the training-pool
    size when given (the dev pool size otherwise).
    """
    flags = [inst.gold for inst in instances if inst.entity_type == entity_type]
    if not flags:
        raise EstimationError(f"no instances of type {entity_type!r} to estimate from")
    if any(f is None for f in flags):
        raise EstimationError(f"instances of type {entity_type!r} lack gold flags")
    accuracy = snap_to_grid(Fraction(sum(flags), len(flags)))
    return NoiseEntry(accuracy, len(flags) if population is None else int(population))
