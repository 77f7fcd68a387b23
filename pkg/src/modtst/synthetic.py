"""Synthetic two-language formality-transfer task.

Sentences are realized from neutral templates
``PRON [AUX NEG] VERB DET [ADJ] NOUN [PREP DET NOUN]`` in one of three registers:

* generic: plain words, ends with ``.``
* formal: an opener word, plain words, ends with ``.``
* informal: optional interjection, slang substitutions, contracted negation,
  one of several end marks.

The two languages share no words except punctuation, so anything learned on
the auxiliary language only reaches the target language through the model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (EvalEntry, EvalSet, ParallelPair, TaggedSentence, Tokenizer, load_corpus,
                     save_corpus, split_words)
from .exceptions import ContractError, GenerationError

DEFAULT_RULES = "synthetic_task.json"


@dataclass(frozen=True)
class Template:
    pronoun: str
    negated: bool
    verb: str
    determiner: str
    adjective: str | None
    noun: str
    prep_phrase: tuple[str, str, str] | None = None  # (preposition, determiner, noun)

    def content_words(self) -> list[str]:
        words = [self.verb, self.noun] + ([self.adjective] if self.adjective else [])
        if self.prep_phrase:
            words.append(self.prep_phrase[2])
        return words


class Lexicon:
    """Rule tables for one language."""

    def __init__(self, language: str, table: dict, shared: dict):
        self.language = language
        self.t = table
        self.formal_end = shared["formal_end"]
        self.informal_ends = list(shared["informal_ends"])
        self.slang = {w: list(v) for w, v in table["slang"].items()}
        self.unslang = {s: w for w, variants in self.slang.items() for s in variants}
        self.aux, self.neg = table["negation"]
        self.contraction = table["contraction"]
        self.openers = list(table["openers"])
        self.interjections = list(table["interjections"])

    # -- vocabulary ---------------------------------------------------------

    @property
    def content_words(self) -> set[str]:
        t = self.t
        return set(t["verbs"]) | set(t["adjectives"]) | set(t["nouns"]) | set(self.unslang)

    @property
    def function_words(self) -> set[str]:
        t = self.t
        return (set(t["pronouns"]) | set(t["determiners"]) | set(t["prepositions"])
                | {self.aux, self.neg, self.contraction} | set(self.openers) | set(self.interjections))

    @property
    def vocabulary(self) -> set[str]:
        return self.content_words | self.function_words

    @property
    def informal_markers(self) -> set[str]:
        marks = {e for e in self.informal_ends if e}
        return set(self.interjections) | {self.contraction} | set(self.unslang) | marks

    # -- templates ----------------------------------------------------------

    def sample_template(self, rng: np.random.Generator, negation_rate: float = 0.3) -> Template:
        t = self.t
        pick = lambda xs: xs[int(rng.integers(len(xs)))]
        adjective = pick(t["adjectives"]) if rng.random() < 0.5 else None
        prep = (pick(t["prepositions"]), pick(t["determiners"]), pick(t["nouns"])) if rng.random() < 0.5 else None
        return Template(pick(t["pronouns"]), bool(rng.random() < negation_rate), pick(t["verbs"]),
                        pick(t["determiners"]), adjective, pick(t["nouns"]), prep)

    def _check(self, template: Template):
        t = self.t
        slots = [(template.pronoun, t["pronouns"]), (template.verb, t["verbs"]),
                 (template.determiner, t["determiners"]), (template.noun, t["nouns"])]
        if template.adjective is not None:
            slots.append((template.adjective, t["adjectives"]))
        if template.prep_phrase:
            p, d, n = template.prep_phrase
            slots += [(p, t["prepositions"]), (d, t["determiners"]), (n, t["nouns"])]
        for word, table in slots:
            if word not in table:
                raise GenerationError(f"{self.language}: rule tables have no entry for {word!r} in {template}")

    def _core(self, template: Template) -> list[str]:
        words = [template.pronoun]
        if template.negated:
            words += [self.aux, self.neg]
        words.append(template.verb)
        words.append(template.determiner)
        if template.adjective:
            words.append(template.adjective)
        words.append(template.noun)
        if template.prep_phrase:
            words += list(template.prep_phrase)
        return words

    # -- registers ----------------------------------------------------------

    def generic(self, template: Template) -> str:
        self._check(template)
        return " ".join(self._core(template) + [self.formal_end])

    def formal(self, template: Template, rng: np.random.Generator | None = None) -> str:
        self._check(template)
        opener = self.openers[int(rng.integers(len(self.openers)))] if rng is not None else self.openers[0]
        return " ".join([opener] + self._core(template) + [self.formal_end])

    def informal(self, template: Template, rng: np.random.Generator, slang_rate: float = 0.6,
                 contraction_rate: float = 0.8, interjection_rate: float = 0.4) -> str:
        self._check(template)
        words = []
        if rng.random() < interjection_rate:
            words.append(self.interjections[int(rng.integers(len(self.interjections)))])
        for w in self._core(template):
            if w in self.slang and rng.random() < slang_rate:
                variants = self.slang[w]
                w = variants[int(rng.integers(len(variants)))]
            words.append(w)
        if template.negated and rng.random() < contraction_rate:
            i = words.index(self.aux)
            words[i:i + 2] = [self.contraction]
        end = self.informal_ends[int(rng.integers(len(self.informal_ends)))]
        if end:
            words.append(end)
        return " ".join(words)

    # -- deterministic rewrite rules (rule-based oracle) ---------------------

    def _strip(self, words: list[str]) -> list[str]:
        words = [w for w in words if w not in self.interjections and w not in self.openers]
        while words and (words[-1] == self.formal_end or words[-1] in self.informal_ends):
            words.pop()
        return words

    def to_formal(self, text: str) -> str:
        out = []
        for w in self._strip(split_words(text)):
            if w == self.contraction:
                out += [self.aux, self.neg]
            else:
                out.append(self.unslang.get(w, w))
        return " ".join([self.openers[0]] + out + [self.formal_end])

    def to_informal(self, text: str) -> str:
        words = [self.slang[w][0] if w in self.slang else w for w in self._strip(split_words(text))]
        for i in range(len(words) - 1):
            if words[i] == self.aux and words[i + 1] == self.neg:
                words[i:i + 2] = [self.contraction]
                break
        return " ".join(words + [self.informal_ends[0]])

    def parse(self, text: str) -> Template:
        """Recover the neutral template of any register; raises on invalid sentences."""
        words = []
        for w in self._strip(split_words(text)):
            if w == self.contraction:
                words += [self.aux, self.neg]
            else:
                words.append(self.unslang.get(w, w))
        t = self.t
        it = iter(words)
        try:
            pron = next(it)
            nxt = next(it)
            negated = nxt == self.aux
            if negated:
                if next(it) != self.neg:
                    raise GenerationError(f"broken negation in {text!r}")
                nxt = next(it)
            verb, det = nxt, next(it)
            nxt = next(it)
            adjective = None
            if nxt in t["adjectives"]:
                adjective, nxt = nxt, next(it)
            noun = nxt
            rest = list(it)
        except StopIteration:
            raise GenerationError(f"{self.language}: sentence too short: {text!r}") from None
        prep = tuple(rest) if rest else None
        if prep is not None and len(prep) != 3:
            raise GenerationError(f"{self.language}: bad prepositional phrase in {text!r}")
        template = Template(pron, negated, verb, det, adjective, noun, prep)
        self._check(template)
        return template

    def register_markers(self, text: str) -> tuple[int, int]:
        """(formal marker count, informal marker count)."""
        words = split_words(text)
        formal = int(bool(words) and words[0] in self.openers) + int(bool(words) and words[-1] == self.formal_end)
        informal = sum(w in self.informal_markers for w in words)
        return formal, informal

    def formality_grade(self, text: str) -> float:
        """Marker-count formality rating used to train the toy style scorer."""
        words = split_words(text)
        opener = bool(words) and words[0] in self.openers
        period = bool(words) and words[-1] == self.formal_end
        informal = sum(w in self.informal_markers for w in words)
        return -0.3 + 0.9 * opener + 0.6 * period - 0.7 * informal

    def is_register(self, text: str, register: str) -> bool:
        try:
            self.parse(text)
        except GenerationError:
            return False
        f, i = self.register_markers(text)
        if register == "formal":
            return f == 2 and i == 0
        if register == "informal":
            return i > 0 and not split_words(text)[0] in self.openers
        return f == 1 and i == 0


class RuleTables:
    def __init__(self, data: dict):
        self.data = data
        self.shared = data["shared"]
        self.languages = {lang: Lexicon(lang, table, self.shared) for lang, table in data["languages"].items()}
        self._audit()

    @classmethod
    def load(cls, path=None) -> "RuleTables":
        if path is None:
            text = resources.files("modtst.data").joinpath(DEFAULT_RULES).read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(text))

    def __getitem__(self, language: str) -> Lexicon:
        try:
            return self.languages[language]
        except KeyError:
            raise ContractError(f"no rule tables for language {language!r}") from None

    def _audit(self):
        langs = list(self.languages.values())
        for i, a in enumerate(langs):
            for b in langs[i + 1:]:
                shared = a.vocabulary & b.vocabulary
                if shared:
                    raise GenerationError(f"languages {a.language}/{b.language} share words {sorted(shared)[:5]}")

    def vocabulary(self) -> set[str]:
        words = {self.shared["formal_end"]} | {e for e in self.shared["informal_ends"] if e}
        for lex in self.languages.values():
            words |= lex.vocabulary
        return words

    def tokenizer(self) -> Tokenizer:
        return Tokenizer(sorted(self.languages), self.vocabulary())


@dataclass
class SyntheticTaskSpec:
    target_language: str = "l1"
    aux_language: str = "l2"
    rules_path: str | None = None
    pseudo_noise: float = 0.2
    slang_rate: float = 0.6
    contraction_rate: float = 0.8
    interjection_rate: float = 0.4
    negation_rate: float = 0.3
    n_aux_parallel: int = 2000
    n_pseudo_parallel: int = 2000
    n_style_raw: int = 3000
    n_generic: int = 3000
    n_generic_dev: int = 200
    n_host_aux: int = 6000
    n_host_target: int = 100
    n_eval: int = 100
    k: int = 4

    def rules(self) -> RuleTables:
        return RuleTables.load(self.rules_path)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    seed: int
    aux_parallel: list = field(default_factory=list)
    pseudo_parallel: list = field(default_factory=list)
    target_gold_parallel: list = field(default_factory=list)
    style_raw: list = field(default_factory=list)
    style_informal: list = field(default_factory=list)
    style_formal: list = field(default_factory=list)
    generic: list = field(default_factory=list)
    generic_dev: list = field(default_factory=list)
    host_corpus: list = field(default_factory=list)
    scorer_train: list = field(default_factory=list)
    eval_sets: dict = field(default_factory=dict)
    aux_eval_sets: dict = field(default_factory=dict)

    @property
    def rules(self) -> RuleTables:
        return self.spec.rules()

    @property
    def tokenizer(self) -> Tokenizer:
        return self.rules.tokenizer()

    # the files written by ``gen-data``
    _MONO = ("style_raw", "style_informal", "style_formal", "generic", "generic_dev")
    _PARALLEL = ("aux_parallel", "pseudo_parallel")

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "task.json").write_text(json.dumps({"spec": self.spec.to_dict(), "seed": self.seed}, indent=2))
        for name in self._MONO:
            save_corpus(getattr(self, name), d / f"{name}.txt", "mono")
        for name in self._PARALLEL:
            save_corpus(getattr(self, name), d / f"{name}.tsv", "parallel")
        _save_mixed(self.host_corpus, d / "host_corpus.jsonl")
        _save_mixed(self.scorer_train, d / "scorer_train.jsonl")
        for key, es in self.eval_sets.items():
            es.save(d / f"eval_{_dir_slug(key)}.json")
        for key, es in self.aux_eval_sets.items():
            es.save(d / f"aux_eval_{_dir_slug(key)}.json")
        self.tokenizer.save(d / "vocab.json")
        return d

    @classmethod
    def load(cls, directory) -> "SyntheticTask":
        d = Path(directory)
        meta = json.loads((d / "task.json").read_text())
        task = cls(SyntheticTaskSpec(**meta["spec"]), meta["seed"])
        for name in cls._MONO:
            setattr(task, name, load_corpus(d / f"{name}.txt", "mono"))
        for name in cls._PARALLEL:
            setattr(task, name, load_corpus(d / f"{name}.tsv", "parallel"))
        task.host_corpus = _load_mixed(d / "host_corpus.jsonl")
        task.scorer_train = _load_mixed(d / "scorer_train.jsonl")
        for key in ("I→F", "F→I"):
            task.eval_sets[key] = EvalSet.load(d / f"eval_{_dir_slug(key)}.json")
            task.aux_eval_sets[key] = EvalSet.load(d / f"aux_eval_{_dir_slug(key)}.json")
        return task


def _dir_slug(direction: str) -> str:
    return {"I→F": "i2f", "F→I": "f2i"}[direction]


def _save_mixed(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus:
            fh.write(json.dumps(asdict(s), ensure_ascii=False, sort_keys=True) + "\n")


def _load_mixed(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [TaggedSentence(**json.loads(line)) for line in fh if line.strip()]


def apply_pseudo_noise(pair: ParallelPair, lex: Lexicon, rate: float, rng: np.random.Generator) -> ParallelPair:
    """Degrade the informal side: drop informal markers, leak formal register."""
    if rate <= 0:
        return ParallelPair(pair.source, pair.target, "pseudo")
    words = []
    for w in split_words(pair.source.text):
        if w in lex.informal_markers and rng.random() < rate:
            if w in lex.unslang:
                words.append(lex.unslang[w])
            elif w == lex.contraction:
                words += [lex.aux, lex.neg]
            continue
        words.append(w)
    if rng.random() < rate:
        while words and words[-1] in lex.informal_ends:
            words.pop()
        words.append(lex.formal_end)
    source = TaggedSentence(" ".join(words), pair.source.language, "informal")
    return ParallelPair(source, pair.target, "pseudo")


def generate_synthetic_task(spec: SyntheticTaskSpec, seed: int = 0) -> SyntheticTask:
    """Build corpora for every data regime plus evaluation sets."""
    rules = spec.rules()
    tl, al = rules[spec.target_language], rules[spec.aux_language]
    rng = np.random.default_rng(seed)
    task = SyntheticTask(spec, seed)
    held_out: set[Template] = set()

    def template(lex, exclude=True):
        while True:
            t = lex.sample_template(rng, spec.negation_rate)
            if not exclude or t not in held_out:
                return t

    def informal(lex, t):
        return lex.informal(t, rng, spec.slang_rate, spec.contraction_rate, spec.interjection_rate)

    # evaluation first, so no training template repeats an evaluation one
    for lex, target in ((tl, task.eval_sets), (al, task.aux_eval_sets)):
        i2f, f2i = [], []
        for _ in range(spec.n_eval):
            t = template(lex)
            held_out.add(t)
            i2f.append(EvalEntry((informal(lex, t),), tuple(lex.formal(t, rng) for _ in range(spec.k))))
        for _ in range(spec.n_eval):
            t = template(lex)
            held_out.add(t)
            f2i.append(EvalEntry(tuple(lex.formal(t, rng) for _ in range(spec.k)), (informal(lex, t),)))
        target["I→F"] = EvalSet("I→F", lex.language, i2f, spec.k)
        target["F→I"] = EvalSet("F→I", lex.language, f2i, spec.k)

    def pair(lex, provenance="gold"):
        t = template(lex)
        return ParallelPair(TaggedSentence(informal(lex, t), lex.language, "informal"),
                            TaggedSentence(lex.formal(t, rng), lex.language, "formal"), provenance)

    task.aux_parallel = [pair(al) for _ in range(spec.n_aux_parallel)]
    task.target_gold_parallel = [pair(tl) for _ in range(spec.n_pseudo_parallel)]
    noise_rng = np.random.default_rng([seed, 1])
    task.pseudo_parallel = [apply_pseudo_noise(p, tl, spec.pseudo_noise, noise_rng)
                            for p in task.target_gold_parallel]

    # unlabeled target-language forum text: mixed registers
    for _ in range(spec.n_style_raw):
        t = template(tl)
        u = rng.random()
        if u < 0.45:
            text, true = informal(tl, t), "informal"
        elif u < 0.8:
            text, true = tl.formal(t, rng), "formal"
        else:
            text, true = tl.generic(t), "generic"
        task.style_raw.append(TaggedSentence(text, tl.language, "generic"))
        if true == "informal":
            task.style_informal.append(TaggedSentence(text, tl.language, "informal"))
        elif true == "formal":
            task.style_formal.append(TaggedSentence(text, tl.language, "formal"))

    def generic_sentence(lex):
        while True:
            text = lex.generic(template(lex))
            if 5 <= len(split_words(text)) <= 30:
                return TaggedSentence(text, lex.language, "generic")

    task.generic = [generic_sentence(tl) for _ in range(spec.n_generic)]
    task.generic_dev = [generic_sentence(tl) for _ in range(spec.n_generic_dev)]

    # host pre-training text: plenty of the auxiliary language in all registers,
    # a sliver of the target language
    host = []
    for _ in range(spec.n_host_aux):
        t = template(al)
        u = rng.random()
        text = informal(al, t) if u < 1 / 3 else al.formal(t, rng) if u < 2 / 3 else al.generic(t)
        host.append(TaggedSentence(text, al.language, "generic"))
    for _ in range(spec.n_host_target):
        host.append(TaggedSentence(tl.generic(template(tl)), tl.language, "generic"))
    order = rng.permutation(len(host))
    task.host_corpus = [host[i] for i in order]

    graded = task.style_raw[: spec.n_style_raw // 2] + task.generic[:300]
    task.scorer_train = [TaggedSentence(s.text, s.language, "generic", tl.formality_grade(s.text)) for s in graded]
    return task


def rule_based_transfer(lex: Lexicon, texts: Sequence[str], direction: str) -> list[str]:
    fn = lex.to_formal if direction == "I→F" else lex.to_informal
    return [fn(t) for t in texts]
