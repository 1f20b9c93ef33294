"""Seeded synthetic corpora with planted label noise and false negatives.

Each entity type owns a phrase inventory whose last token carries a
type-specific suffix, so phrase shape alone determines the type.  True
mentions sit between type cue words; false positives are occurrences of
ambiguous dictionary phrases between non-entity cue words.  A fraction of
each inventory is withheld from the dictionary to create false negatives,
and capitalized distractor phrases with no type supply blocking negatives.

Counts are exact by construction: every instance gets its own sentence and
phrases are assigned round-robin, so the realized noise rate of the weak
labels is within one instance of the configured rate.
"""

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, Dictionary, Sentence, write_corpus, write_dictionary
from .errors import ConfigError

__all__ = ["SynthConfig", "SynthData", "synth_generate", "load_synth_config", "parse_rates", "write_synth"]

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def parse_rates(value, types):
    """``0.3`` or ``PER=0.3,LOC=0.5`` -> {type: rate} covering ``types``."""
    if isinstance(value, dict):
        rates = {k: float(v) for k, v in value.items()}
    elif isinstance(value, (int, float)):
        rates = {t: float(value) for t in types}
    else:
        text = str(value).strip()
        if "=" not in text:
            rates = {t: float(text) for t in types}
        else:
            rates = {}
            for item in text.split(","):
                name, _, rate = item.partition("=")
                if not name.strip() or not rate.strip():
                    raise ConfigError(f"malformed rate entry {item!r}")
                rates[name.strip()] = float(rate)
    missing = [t for t in types if t not in rates]
    if missing:
        raise ConfigError(f"no rate given for types {missing}")
    return {t: rates[t] for t in types}


@dataclass
class SynthConfig:
    types: tuple = ("PER", "LOC", "ORG")
    # Weakly labeled instances per type in the training split.
    instances: int = 1000
    dev_instances: int = 200
    # Fraction of weak labels that are wrong, per type.
    noise: dict = field(default_factory=lambda: 0.3)
    # Fraction of each type's dictionary phrases that also have non-entity readings.
    ambiguity: float = 0.3
    # Fraction of gold mentions whose phrase is withheld from the dictionary.
    fn: float = 0.0
    phrases_per_type: int = 100
    cues_per_type: int = 3
    nonentity_cues: int = 3
    filler_words: int = 200
    distractors: int = 100
    distractor_rate: float = 0.3
    sentences_per_doc: int = 20

    def __post_init__(self):
        if isinstance(self.types, str):
            self.types = tuple(t.strip() for t in self.types.split(",") if t.strip())
        self.types = tuple(self.types)
        if not self.types or len(set(self.types)) != len(self.types):
            raise ConfigError("types must be a non-empty list of distinct labels")
        self.noise = parse_rates(self.noise, self.types)
        for name in ("instances", "dev_instances", "phrases_per_type", "cues_per_type", "nonentity_cues",
                     "filler_words", "distractors", "sentences_per_doc"):
            setattr(self, name, int(getattr(self, name)))
        for name in ("ambiguity", "fn", "distractor_rate"):
            setattr(self, name, float(getattr(self, name)))
        if self.instances < 1 or self.dev_instances < 0:
            raise ConfigError("instances must be >= 1 and dev_instances >= 0")
        for etype, rate in self.noise.items():
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"noise rate for {etype} must lie in [0, 1)")
            if rate > 0 and self.ambiguity == 0:
                raise ConfigError(f"noise rate {rate} for {etype} needs ambiguity > 0")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ConfigError("ambiguity must lie in [0, 1]")
        if not 0.0 <= self.fn < 1.0:
            raise ConfigError("fn must lie in [0, 1)")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ConfigError("distractor_rate must lie in [0, 1]")
        if self.phrases_per_type - round(self.fn * self.phrases_per_type) < 1:
            raise ConfigError("fn withholds every phrase; the dictionary would be empty")
        if min(self.cues_per_type, self.nonentity_cues, self.filler_words, self.sentences_per_doc) < 1:
            raise ConfigError("cue, filler and document sizes must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["types"] = list(self.types)
        return d


def load_synth_config(path, **overrides):
    """Read a flat ``key = value`` file; ``overrides`` win over file values."""
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[synth]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = dict(parser["synth"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = SynthConfig.__dataclass_fields__
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    try:
        return SynthConfig(**values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class SynthData:
    train: Corpus
    dev: Corpus
    dictionary: Dictionary
    # type -> phrases withheld from the dictionary (their mentions are false negatives).
    withheld: dict


class _Words:
    """Unique pseudo-words drawn from a seeded syllable generator."""

    def __init__(self, rng):
        self.rng = rng
        self.used = set()

    def stem(self, syllables):
        while True:
            word = "".join(
                _CONSONANTS[self.rng.integers(len(_CONSONANTS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                for _ in range(syllables)
            )
            if word not in self.used:
                self.used.add(word)
                return word

    def many(self, n, syllables, transform=str):
        return [transform(self.stem(syllables)) for _ in range(n)]


def _inventory(config, rng):
    words = _Words(rng)
    suffix_pool = words.many(2 * len(config.types) + 2, 2)
    suffixes = {t: suffix_pool[2 * i:2 * i + 2] for i, t in enumerate(config.types)}
    plain_suffixes = suffix_pool[-2:]

    def phrase(sfx):
        last = words.stem(2).capitalize() + sfx[rng.integers(len(sfx))]
        if rng.random() < 0.5:
            return (last,)
        return (words.stem(2).capitalize(), last)

    phrases = {t: [phrase(suffixes[t]) for _ in range(config.phrases_per_type)] for t in config.types}
    return {
        "phrases": phrases,
        "cues": {t: words.many(config.cues_per_type, 3) for t in config.types},
        "nonentity": words.many(config.nonentity_cues, 3),
        "filler": words.many(config.filler_words, 2),
        "distractors": [phrase(plain_suffixes) for _ in range(config.distractors)],
    }


def _round_robin(items, n, rng):
    """``n`` draws from ``items`` with counts differing by at most one."""
    if not items or n == 0:
        return []
    out = []
    while len(out) < n:
        perm = rng.permutation(len(items))
        out.extend(items[i] for i in perm)
    return out[:n]


def _sentence(inv, rng, config, left, phrase, right):
    pre = [inv["filler"][i] for i in rng.integers(len(inv["filler"]), size=rng.integers(0, 4))]
    post = [inv["filler"][i] for i in rng.integers(len(inv["filler"]), size=rng.integers(1, 4))]
    if inv["distractors"] and rng.random() < config.distractor_rate:
        # A filler word always separates the distractor from what follows.
        d = inv["distractors"][rng.integers(len(inv["distractors"]))]
        pre = list(d) + [inv["filler"][rng.integers(len(inv["filler"]))]] + pre
    start = len(pre) + 1
    tokens = tuple(pre) + (left,) + tuple(phrase) + (right,) + tuple(post)
    return tokens, start, start + len(phrase)


def _split(config, inv, dict_phrases, withheld, ambiguous, n_per_type, rng, prefix):
    items = []
    for etype in config.types:
        noise = config.noise[etype]
        matched = round(n_per_type * (1.0 - noise))
        n_noise = n_per_type - matched
        n_fn = round(matched * config.fn / (1.0 - config.fn)) if withheld[etype] else 0
        for phrase in _round_robin(dict_phrases[etype], matched, rng):
            items.append((etype, phrase, True))
        for phrase in _round_robin(withheld[etype], n_fn, rng):
            items.append((etype, phrase, True))
        for phrase in _round_robin(ambiguous[etype], n_noise, rng):
            items.append((etype, phrase, False))
    order = rng.permutation(len(items))
    sentences = []
    for pos, i in enumerate(order):
        etype, phrase, is_entity = items[i]
        cues = inv["cues"][etype] if is_entity else inv["nonentity"]
        left, right = (cues[j] for j in rng.integers(len(cues), size=2))
        tokens, start, end = _sentence(inv, rng, config, left, phrase, right)
        gold = ((start, end, etype),) if is_entity else ()
        doc, sent = divmod(pos, config.sentences_per_doc)
        sentences.append(Sentence(tokens, f"{prefix}-{doc:05d}", sent, gold))
    return Corpus(tuple(sentences))


def synth_generate(config, seed):
    """Generate ``SynthData`` (train and dev corpora with gold, and a dictionary)."""
    inv_rng, train_rng, dev_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    inv = _inventory(config, inv_rng)
    dictionary = Dictionary()
    dict_phrases, withheld, ambiguous = {}, {}, {}
    for etype in config.types:
        phrases = inv["phrases"][etype]
        n_withheld = round(config.fn * len(phrases))
        withheld[etype] = phrases[:n_withheld]
        dict_phrases[etype] = phrases[n_withheld:]
        n_amb = round(config.ambiguity * len(dict_phrases[etype]))
        if config.noise[etype] > 0:
            n_amb = max(n_amb, 1)
        ambiguous[etype] = dict_phrases[etype][:n_amb]
        for phrase in dict_phrases[etype]:
            dictionary.add(etype, phrase)
    train = _split(config, inv, dict_phrases, withheld, ambiguous, config.instances, train_rng, "train")
    dev = _split(config, inv, dict_phrases, withheld, ambiguous, config.dev_instances, dev_rng, "dev")
    return SynthData(train, dev, dictionary, {t: [tuple(p) for p in ps] for t, ps in withheld.items()})


def write_synth(data, outdir):
    outdir = Path(outdir)
    write_corpus(data.train, outdir / "train.tsv")
    write_corpus(data.dev, outdir / "dev.tsv")
    write_dictionary(data.dictionary, outdir / "dict.tsv")
