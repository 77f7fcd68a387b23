"""Style judges, per-direction evaluation and the swapped-test-set direction analysis."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from .autograd import Tensor, no_grad
from .corpus import DIRECTION_STYLES, EvalSet, ParallelPair, Tokenizer, split_words
from .exceptions import ContractError
from .metrics import corpus_bleu, harmonic_mean
from .transformer import GenerationConfig, Seq2SeqModel
from .validation import check_labels, check_texts

# ---------------------------------------------------------------------------
# bag-of-words judges


class _BowNet:
    """Embedding -> pooled -> ReLU hidden layer -> linear head."""

    def __init__(self, vocab: int, embed_dim: int, hidden_dim: int, out_dim: int, pooling: str, seed: int):
        rng = np.random.default_rng(seed)
        self.pooling = pooling
        self.params = {
            "embed": Tensor(rng.normal(0, 0.1, (vocab, embed_dim)), name="embed"),
            "w1": Tensor(rng.normal(0, 1 / np.sqrt(embed_dim), (embed_dim, hidden_dim)), name="w1"),
            "b1": Tensor(np.zeros(hidden_dim), name="b1"),
            "w2": Tensor(rng.normal(0, 1 / np.sqrt(hidden_dim), (hidden_dim, out_dim)), name="w2"),
            "b2": Tensor(np.zeros(out_dim), name="b2"),
        }

    def __call__(self, ids: np.ndarray) -> Tensor:
        P = self.params
        present = (ids != 0).astype(np.float64)
        if self.pooling == "mean":
            present /= np.maximum(present.sum(axis=1, keepdims=True), 1.0)
        emb = ag.embedding_lookup(P["embed"], ids)
        pooled = ag.reshape(ag.matmul(Tensor(present[:, None, :]), emb), (ids.shape[0], -1))
        hidden = ag.relu(ag.add(ag.matmul(pooled, P["w1"]), P["b1"]))
        return ag.add(ag.matmul(hidden, P["w2"]), P["b2"])


def _featurize(tokenizer: Tokenizer, texts: Sequence[str]) -> np.ndarray:
    rows = [tokenizer.word_ids(split_words(t)) or [tokenizer.unk_id] for t in texts]
    width = max(len(r) for r in rows)
    out = np.zeros((len(rows), width), dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def _fit_net(net: _BowNet, ids: np.ndarray, loss_fn, steps: int, lr: float, batch_size: int, seed: int):
    rng = np.random.default_rng(seed)
    state = ag.AdamState(lr=lr)
    for p in net.params.values():
        p.requires_grad = True
        p.zero_grad()
    for _ in range(steps):
        rows = rng.choice(len(ids), size=min(batch_size, len(ids)), replace=False)
        ag.backward(loss_fn(net(ids[rows]), rows))
        ag.adam_step(net.params, state)
    for p in net.params.values():
        p.requires_grad = False
        p.grad = None


class StyleClassifier(ClassifierMixin, BaseEstimator):
    """Binary informal/formal judge over the shared tokenizer."""

    def __init__(self, tokenizer: Tokenizer | None = None, embed_dim: int = 32, hidden_dim: int = 32,
                 steps: int = 800, lr: float = 1e-2, batch_size: int = 64, seed: int = 0):
        self.tokenizer = tokenizer
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = check_texts(X)
        y = check_labels(y, len(X))
        self.classes_ = np.array(sorted(set(y)))
        if len(self.classes_) != 2:
            raise ContractError(f"style classifier needs exactly two classes, got {list(self.classes_)}")
        self.tokenizer_ = self.tokenizer or Tokenizer.fit((), X)
        targets = np.searchsorted(self.classes_, y)
        ids = _featurize(self.tokenizer_, X)
        self.net_ = _BowNet(self.tokenizer_.vocab_size, self.embed_dim, self.hidden_dim, 2, "mean", self.seed)
        _fit_net(self.net_, ids, lambda logits, rows: ag.cross_entropy(logits, targets[rows], -1),
                 self.steps, self.lr, self.batch_size, self.seed)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_texts(X)
        if not X:
            return np.zeros((0, 2))
        with no_grad():
            z = self.net_(_featurize(self.tokenizer_, X)).data
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def confidence(self, X, style: str) -> np.ndarray:
        col = int(np.flatnonzero(self.classes_ == style)[0])
        return self.predict_proba(X)[:, col]


class StyleScorer(RegressorMixin, BaseEstimator):
    """Scalar formality score (sigma); sum pooling so marker counts add up."""

    def __init__(self, tokenizer: Tokenizer | None = None, embed_dim: int = 16, hidden_dim: int = 16,
                 steps: int = 800, lr: float = 1e-2, batch_size: int = 64, seed: int = 0):
        self.tokenizer = tokenizer
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = check_texts(X)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (len(X),):
            raise ContractError(f"expected {len(X)} scores, got shape {y.shape}")
        self.tokenizer_ = self.tokenizer or Tokenizer.fit((), X)
        ids = _featurize(self.tokenizer_, X)
        self.net_ = _BowNet(self.tokenizer_.vocab_size, self.embed_dim, self.hidden_dim, 1, "sum", self.seed)

        def mse(pred, rows):
            diff = ag.add(ag.reshape(pred, (len(rows),)), -y[rows])
            return ag.mean(ag.mul(diff, diff))

        _fit_net(self.net_, ids, mse, self.steps, self.lr, self.batch_size, self.seed)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_texts(X)
        if not X:
            return np.zeros(0)
        with no_grad():
            return self.net_(_featurize(self.tokenizer_, X)).data[:, 0].copy()

    def __call__(self, text: str) -> float:
        return float(self.predict([text])[0])


def pair_texts_and_labels(pairs: Sequence[ParallelPair]) -> tuple[list[str], list[str]]:
    X, y = [], []
    for p in pairs:
        X += [p.source.text, p.target.text]
        y += [p.source.style, p.target.style]
    return X, y


def train_style_classifier(pairs: Sequence[ParallelPair], seed: int = 0, tokenizer: Tokenizer | None = None,
                           heldout_fraction: float = 0.1, shuffle_labels: bool = False, **params) -> StyleClassifier:
    """Fit on both sides of (pseudo-)parallel pairs; held-out accuracy lands in ``heldout_accuracy_``."""
    X, y = pair_texts_and_labels(pairs)
    if len(set(y)) < 2:
        raise ContractError("style classifier needs both styles in the training pairs")
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    if shuffle_labels:
        y = rng.permutation(y)
    order = rng.permutation(len(X))
    n_held = int(round(heldout_fraction * len(X)))
    held, train = order[:n_held], order[n_held:]
    clf = StyleClassifier(tokenizer=tokenizer, seed=seed, **params)
    clf.fit([X[i] for i in train], y[train])
    clf.heldout_accuracy_ = float(clf.score([X[i] for i in held], y[held])) if n_held else float("nan")
    return clf


# ---------------------------------------------------------------------------
# systems under evaluation


class CopySystem:
    """The INPUT baseline: returns each source unchanged."""

    name = "INPUT"
    direction = None

    def transfer(self, texts: Sequence[str]) -> list[str]:
        return list(texts)


class RuleBasedSystem:
    def __init__(self, lexicon, direction: str, name: str = "rule-based"):
        self.lexicon = lexicon
        self.direction = direction
        self.name = name

    def transfer(self, texts: Sequence[str]) -> list[str]:
        fn = self.lexicon.to_formal if self.direction == "I→F" else self.lexicon.to_informal
        return [fn(t) for t in texts]


class ModelSystem:
    def __init__(self, model: Seq2SeqModel, tokenizer: Tokenizer, language: str, direction: str | None = None,
                 name: str = "model", gen: GenerationConfig = GenerationConfig(max_length=32),
                 direction_tag: bool = False):
        self.model = model
        self.tokenizer = tokenizer
        self.language = language
        self.direction = direction
        self.name = name
        self.gen = gen
        self.direction_tag = direction_tag

    def transfer(self, texts: Sequence[str]) -> list[str]:
        from .training import translate

        style = DIRECTION_STYLES[self.direction][1] if self.direction_tag else None
        return translate(self.model, list(texts), self.language, self.tokenizer, self.gen, style)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricsReport:
    system: str
    direction: str
    bleu: float
    acc: float
    hm: float
    mean_sigma: float
    n: int
    skipped: int = 0

    def __post_init__(self):
        if abs(harmonic_mean(self.acc, self.bleu) - self.hm) > 1e-12:
            raise ContractError("HM is inconsistent with ACC and BLEU")

    @classmethod
    def build(cls, system: str, direction: str, bleu: float, acc: float, mean_sigma: float, n: int,
              skipped: int = 0) -> "MetricsReport":
        return cls(system, direction, bleu, acc, harmonic_mean(acc, bleu), mean_sigma, n, skipped)

    TSV_FIELDS = ("system", "direction", "bleu", "acc", "hm", "mean_sigma", "n")

    def to_tsv(self) -> str:
        return "\t".join([self.system, self.direction, f"{self.bleu:.6f}", f"{self.acc:.6f}",
                          f"{self.hm:.6f}", f"{self.mean_sigma:.6f}", str(self.n)])

    @classmethod
    def from_tsv(cls, line: str) -> "MetricsReport":
        system, direction, bleu, acc, hm, sigma, n = line.rstrip("\n").split("\t")
        return cls.build(system, direction, float(bleu), float(acc), float(sigma), int(n))

    def to_dict(self) -> dict:
        return asdict(self)


def reports_to_tsv(reports: Sequence[MetricsReport]) -> str:
    return "\t".join(MetricsReport.TSV_FIELDS) + "\n" + "".join(r.to_tsv() + "\n" for r in reports)


def format_table(reports: Sequence[MetricsReport]) -> str:
    header = f"{'system':<28} {'dir':<4} {'BLEU':>7} {'ACC':>7} {'HM':>7} {'sigma':>7} {'n':>5}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.system:<28} {r.direction:<4} {r.bleu:7.3f} {r.acc:7.3f} {r.hm:7.3f} "
                     f"{r.mean_sigma:7.3f} {r.n:5d}")
    return "\n".join(lines)


def _judge(hyps, classifier: StyleClassifier, scorer: StyleScorer | None, target_style: str):
    acc_hits = classifier.confidence(hyps, target_style) > 0.5
    sigma = scorer.predict(hyps) if scorer is not None else np.zeros(len(hyps))
    return acc_hits.astype(np.float64), sigma


def evaluate_direction(system, eval_set: EvalSet, classifier: StyleClassifier,
                       scorer: StyleScorer | None = None) -> MetricsReport:
    """BLEU, ACC, HM and mean sigma of ``system`` on one direction's test set.

    For F→I each entry has several sources and one reference: each source
    position is scored as its own corpus and the results are averaged.
    """
    eval_set.validate()
    if getattr(system, "direction", None) not in (None, eval_set.direction):
        raise ContractError(f"system trained for {system.direction} evaluated on {eval_set.direction}")
    if not len(eval_set):
        raise ContractError("empty evaluation set")
    target = eval_set.target_style
    n_src = len(eval_set.entries[0].sources)
    flat_sources = [s for e in eval_set.entries for s in e.sources]
    flat_hyps = system.transfer(flat_sources)
    hyps = [flat_hyps[i::n_src] for i in range(n_src)]
    refs = [list(e.references) for e in eval_set.entries]
    bleu = float(np.mean([corpus_bleu(h, refs) for h in hyps]))
    hits, sigma = _judge(flat_hyps, classifier, scorer, target)
    skipped = sum(not h.strip() for h in flat_hyps)
    return MetricsReport.build(getattr(system, "name", "system"), eval_set.direction, bleu,
                               float(hits.mean()), float(sigma.mean()), len(flat_hyps), skipped)


@dataclass(frozen=True)
class AnalysisRow:
    system: str
    setting: str
    direction: str
    bleu: float
    acc: float
    hm: float


def direction_analysis(model_fwd, model_bwd, eval_sets: dict, classifier: StyleClassifier,
                       scorer: StyleScorer | None = None) -> list[AnalysisRow]:
    """Score INPUT and both direction systems on (a) each direction's own test set
    and (b) the opposite direction's test set with sources and references swapped."""
    missing = {"I→F", "F→I"} - set(eval_sets)
    if missing:
        raise ContractError(f"direction analysis needs eval sets for {sorted(missing)}")
    rows = []
    for direction, system in (("I→F", model_fwd), ("F→I", model_bwd)):
        opposite = "F→I" if direction == "I→F" else "I→F"
        settings = {"a": eval_sets[direction], "b": eval_sets[opposite].swapped()}
        for sys in (CopySystem(), system):
            for setting, es in settings.items():
                r = evaluate_direction(sys, es, classifier, scorer)
                rows.append(AnalysisRow(r.system, setting, direction, r.bleu, r.acc, r.hm))
    return rows


def format_analysis(rows: Sequence[AnalysisRow]) -> str:
    lines = [f"{'direction':<9} {'setting':<7} {'system':<24} {'BLEU':>7} {'ACC':>7} {'HM':>7}"]
    for r in rows:
        lines.append(f"{r.direction:<9} {r.setting:<7} {r.system:<24} {r.bleu:7.3f} {r.acc:7.3f} {r.hm:7.3f}")
    return "\n".join(lines)
