"""Word-level tokenizer, tagged corpora, corpus files and style-score selection."""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import ContractError, FormatError
from .transformer import BOS_ID, EOS_ID, PAD_ID

STYLES = ("informal", "formal", "generic")
PROVENANCES = ("gold", "pseudo", "synthetic-MT")
DIRECTIONS = ("I→F", "F→I")
DIRECTION_STYLES = {"I→F": ("informal", "formal"), "F→I": ("formal", "informal")}

INFORMAL_MAX = -0.5
FORMAL_MIN = 1.0

SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<mask>", "<unk>")
MASK_TOKEN = "<mask>"
UNK_TOKEN = "<unk>"
DIRECTION_TAGS = {"formal": "<2formal>", "informal": "<2informal>"}

_WORD_RE = re.compile(r"\w+|[^\w\s]+")


def split_words(text: str) -> list[str]:
    """Case-sensitive split on whitespace; punctuation runs become their own words."""
    return _WORD_RE.findall(text)


def lang_tag(language: str) -> str:
    return f"<lang:{language}>"


class Tokenizer:
    """Closed word vocabulary with fixed special ids.

    ``<pad>``=0, ``<s>``=1, ``</s>``=2, ``<mask>``=3, ``<unk>``=4, then one tag per
    language, then the direction tags, then words in sorted order.
    """

    def __init__(self, languages: Sequence[str] = (), words: Iterable[str] = ()):
        self.languages = tuple(languages)
        specials = list(SPECIAL_TOKENS) + [lang_tag(l) for l in self.languages] + list(DIRECTION_TAGS.values())
        self.n_special = len(specials)
        vocab = specials + sorted(set(words) - set(specials))
        self.itos = vocab
        self.stoi = {w: i for i, w in enumerate(vocab)}
        assert self.stoi["<pad>"] == PAD_ID and self.stoi["<s>"] == BOS_ID and self.stoi["</s>"] == EOS_ID

    @classmethod
    def fit(cls, languages: Sequence[str], texts: Iterable[str]) -> "Tokenizer":
        words = set()
        for t in texts:
            words.update(split_words(t))
        return cls(languages, words)

    def __len__(self):
        return len(self.itos)

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def mask_id(self) -> int:
        return self.stoi[MASK_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK_TOKEN]

    def lang_id(self, language: str) -> int:
        try:
            return self.stoi[lang_tag(language)]
        except KeyError:
            raise ContractError(f"unknown language tag {language!r}") from None

    def direction_id(self, target_style: str) -> int:
        return self.stoi[DIRECTION_TAGS[target_style]]

    def is_special(self, token_id: int) -> bool:
        return token_id < self.n_special

    def word_ids(self, words: Iterable[str]) -> list[int]:
        unk = self.unk_id
        return [self.stoi.get(w, unk) for w in words]

    def tokenize(self, text: str, language: str) -> list[int]:
        return [self.lang_id(language)] + self.word_ids(split_words(text)) + [EOS_ID]

    def detokenize(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if i == EOS_ID:
                break
            if self.is_special(i) and i not in (self.mask_id, self.unk_id):
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def count_unknown(self, texts: Iterable[str]) -> int:
        return sum(w not in self.stoi for t in texts for w in split_words(t))

    def to_dict(self) -> dict:
        return {"languages": list(self.languages), "words": self.itos[self.n_special:]}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["languages"], d["words"])


def tokenize(tokenizer: Tokenizer, text: str, language: str) -> list[int]:
    return tokenizer.tokenize(text, language)


def normalize_spacing(text: str) -> str:
    return " ".join(split_words(text))


@dataclass(frozen=True)
class TaggedSentence:
    text: str
    language: str
    style: str = "generic"
    score: float | None = None

    def __post_init__(self):
        if self.style not in STYLES:
            raise ContractError(f"unknown style tag {self.style!r}")


@dataclass(frozen=True)
class ParallelPair:
    source: TaggedSentence
    target: TaggedSentence
    provenance: str = "gold"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ContractError(f"unknown provenance {self.provenance!r}")
        if self.source.style == self.target.style:
            raise ContractError("a parallel pair must change style")
        if self.source.language != self.target.language and self.provenance != "synthetic-MT":
            raise ContractError("cross-lingual pairs must be marked synthetic-MT")

    @property
    def direction(self) -> tuple[str, str]:
        return self.source.style, self.target.style

    def flipped(self) -> "ParallelPair":
        return ParallelPair(self.target, self.source, self.provenance)


@dataclass(frozen=True)
class EvalEntry:
    sources: tuple[str, ...]
    references: tuple[str, ...]


@dataclass
class EvalSet:
    """I→F entries carry one source and ``k`` references; F→I entries ``k`` sources and one reference."""

    direction: str
    language: str
    entries: list[EvalEntry] = field(default_factory=list)
    k: int = 4

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ContractError(f"unknown direction {self.direction!r}")
        self.validate()

    def validate(self):
        for i, e in enumerate(self.entries):
            n_src, n_ref = len(e.sources), len(e.references)
            ok = (n_src, n_ref) == (1, self.k) if self.direction == "I→F" else (n_src, n_ref) == (self.k, 1)
            if not ok:
                raise ContractError(
                    f"{self.direction} entry {i} has {n_src} sources / {n_ref} references (k={self.k})")

    @property
    def source_style(self) -> str:
        return DIRECTION_STYLES[self.direction][0]

    @property
    def target_style(self) -> str:
        return DIRECTION_STYLES[self.direction][1]

    def swapped(self) -> "EvalSet":
        """Test set of the opposite direction with sources and references exchanged."""
        other = "F→I" if self.direction == "I→F" else "I→F"
        return EvalSet(other, self.language, [EvalEntry(e.references, e.sources) for e in self.entries], self.k)

    def __len__(self):
        return len(self.entries)

    def to_dict(self) -> dict:
        return {"direction": self.direction, "language": self.language, "k": self.k,
                "entries": [{"sources": list(e.sources), "references": list(e.references)} for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSet":
        entries = [EvalEntry(tuple(e["sources"]), tuple(e["references"])) for e in d["entries"]]
        return cls(d["direction"], d["language"], entries, d.get("k", 4))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# style-score selection


def select_by_style_score(corpus: Iterable[TaggedSentence], scorer) -> tuple[list, list]:
    """Keep sentences scored strictly below -0.5 (informal) or strictly above 1.0 (formal).

    ``scorer`` is a callable ``text -> sigma`` or an object whose ``predict``
    maps a list of texts to scores.
    """
    corpus = list(corpus)
    if hasattr(scorer, "predict"):
        scores = [float(s) for s in scorer.predict([s.text for s in corpus])]
    else:
        scores = [float(scorer(s.text)) for s in corpus]
    informal, formal = [], []
    for sent, sigma in zip(corpus, scores):
        if sigma < INFORMAL_MAX:
            informal.append(dataclasses.replace(sent, style="informal", score=sigma))
        elif sigma > FORMAL_MIN:
            formal.append(dataclasses.replace(sent, style="formal", score=sigma))
    return informal, formal


# ---------------------------------------------------------------------------
# corpus files

_BOM = b"\xef\xbb\xbf"
HEADER_PREFIX = "#!"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t")


def _unescape(text: str, line: int) -> str:
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            nxt = text[i + 1: i + 2]
            if nxt == "t":
                out.append("\t")
            elif nxt == "\\":
                out.append("\\")
            else:
                raise FormatError(f"bad escape sequence {text[i:i + 2]!r}", line)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _uniform(values: list, what: str):
    distinct = set(values)
    if len(distinct) > 1:
        raise ContractError(f"corpus file needs a single {what}, got {sorted(map(str, distinct))}")
    return values[0] if values else None


def save_corpus(corpus: Sequence, path, format: str):
    """Write a mono or parallel corpus with a ``#!`` JSON header line."""
    corpus = list(corpus)
    lines = []
    if format == "mono":
        header = {"format": "mono",
                  "language": _uniform([s.language for s in corpus], "language"),
                  "style": _uniform([s.style for s in corpus], "style")}
        if any(s.score is not None for s in corpus):
            header["scores"] = [s.score for s in corpus]
        for s in corpus:
            if "\n" in s.text or "\r" in s.text:
                raise ContractError("sentences may not contain line breaks")
            lines.append(s.text)
    elif format == "parallel":
        header = {"format": "parallel",
                  "language": _uniform([p.source.language for p in corpus], "language"),
                  "target_language": _uniform([p.target.language for p in corpus], "target language"),
                  "source_style": _uniform([p.source.style for p in corpus], "source style"),
                  "target_style": _uniform([p.target.style for p in corpus], "target style"),
                  "provenance": _uniform([p.provenance for p in corpus], "provenance")}
        for p in corpus:
            if any(c in t for t in (p.source.text, p.target.text) for c in "\r\n"):
                raise ContractError("sentences may not contain line breaks")
            lines.append(f"{_escape(p.source.text)}\t{_escape(p.target.text)}")
    else:
        raise ContractError(f"unknown corpus format {format!r}")
    body = HEADER_PREFIX + json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n"
    body += "".join(line + "\n" for line in lines)
    Path(path).write_bytes(body.encode("utf-8"))


def load_corpus(path, format: str) -> list:
    raw = Path(path).read_bytes()
    if raw.startswith(_BOM):
        raise FormatError(f"{path}: byte-order mark is not allowed", 1)
    if not raw:
        return []
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 ({exc})") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header: dict = {}
    start = 0
    if lines and lines[0].startswith(HEADER_PREFIX):
        try:
            header = json.loads(lines[0][len(HEADER_PREFIX):])
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed header: {exc}", 1) from None
        start = 1
    if header.get("format", format) != format:
        raise FormatError(f"file holds a {header['format']!r} corpus, not {format!r}", 1)
    language = header.get("language") or "unk"
    body = lines[start:]
    if format == "mono":
        style = header.get("style") or "generic"
        scores = header.get("scores") or [None] * len(body)
        if len(scores) != len(body):
            raise FormatError("score list length does not match sentence count", 1)
        return [TaggedSentence(t, language, style, sc) for t, sc in zip(body, scores)]
    if format != "parallel":
        raise ContractError(f"unknown corpus format {format!r}")
    out = []
    src_style = header.get("source_style", "informal")
    tgt_style = header.get("target_style", "formal")
    tgt_lang = header.get("target_language") or language
    provenance = header.get("provenance", "gold")
    for n, line in enumerate(body, start=start + 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"expected one tab delimiter, found {len(parts) - 1}", n)
        out.append(ParallelPair(TaggedSentence(_unescape(parts[0], n), language, src_style),
                                TaggedSentence(_unescape(parts[1], n), tgt_lang, tgt_style), provenance))
    return out


def texts(corpus: Iterable) -> list[str]:
    out = []
    for item in corpus:
        if isinstance(item, ParallelPair):
            out.extend([item.source.text, item.target.text])
        else:
            out.append(item.text)
    return out


def require_single_language(corpus: Sequence[TaggedSentence]) -> str:
    langs = {s.language for s in corpus}
    if len(langs) != 1:
        raise ContractError(f"corpus must hold exactly one language, found {sorted(langs)}")
    return langs.pop()


