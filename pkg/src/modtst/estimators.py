"""scikit-learn shaped wrappers around the training regimes.

These make the pieces composable with ``get_params``/``set_params`` and
``clone``; the experiment runner uses the underlying functions directly.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .adapters import AdapterSet, extract_adapters, insert_adapters
from .corpus import ParallelPair, TaggedSentence, Tokenizer, split_words
from .metrics import corpus_bleu
from .training import (NoiseSpec, TrainingConfig, apply_noise, finetune_supervised, heldout_denoising_loss,
                       train_language_adaptation, train_task_adaptation, translate)
from .transformer import GenerationConfig, Seq2SeqModel
from .validation import check_pairs_match, check_positive, check_texts, check_unit_interval


class WordMasker(TransformerMixin, BaseEstimator):
    """Stateless transformer: masks ``floor(ratio * n)`` words of each sentence."""

    def __init__(self, mask_ratio: float = 0.3, seed: int = 0):
        self.mask_ratio = mask_ratio
        self.seed = seed

    def fit(self, X, y=None):
        check_unit_interval("mask_ratio", self.mask_ratio)
        return self

    def transform(self, X):
        X = check_texts(X)
        rng = np.random.default_rng(self.seed)
        spec = NoiseSpec(self.mask_ratio)
        return [" ".join(apply_noise(split_words(x), spec, rng)) for x in X]


class _Seq2SeqEstimator(BaseEstimator):
    def _config(self) -> TrainingConfig:
        return TrainingConfig(lr=self.lr, batch_size=check_positive("batch_size", self.batch_size),
                              max_steps=check_positive("steps", self.steps), seed=self.seed)

    def _start(self) -> Seq2SeqModel:
        if self.host is None:
            raise ValueError(f"{type(self).__name__} needs a host model")
        return self.host.copy()


class StyleTransferEstimator(_Seq2SeqEstimator):
    """Fit on (source, target) sentence lists of one language; predict rewrites.

    ``mode="full_finetune"`` updates every parameter, ``"task_adaptation"``
    only the decoder cross-attention.
    """

    def __init__(self, host: Seq2SeqModel | None = None, tokenizer: Tokenizer | None = None, language: str = "l1",
                 source_style: str = "informal", target_style: str = "formal", mode: str = "full_finetune",
                 steps: int = 300, lr: float = 1e-4, batch_size: int = 16, seed: int = 0, max_length: int = 32):
        self.host = host
        self.tokenizer = tokenizer
        self.language = language
        self.source_style = source_style
        self.target_style = target_style
        self.mode = mode
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.max_length = max_length

    def fit(self, X, y):
        X, y = check_texts(X), check_texts(y)
        check_pairs_match(X, y)
        pairs = [ParallelPair(TaggedSentence(s, self.language, self.source_style),
                              TaggedSentence(t, self.language, self.target_style), "gold") for s, t in zip(X, y)]
        model = self._start()
        if self.mode == "full_finetune":
            finetune_supervised(model, pairs, self._config(), (self.source_style, self.target_style), self.tokenizer)
        elif self.mode == "task_adaptation":
            train_task_adaptation(model, pairs, self._config(), self.tokenizer)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.model_ = model
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "model_")
        return translate(self.model_, check_texts(X), self.language, self.tokenizer,
                         GenerationConfig(max_length=self.max_length))

    def score(self, X, y) -> float:
        """Corpus BLEU of the predictions against single references."""
        return corpus_bleu(self.predict(X), [[t] for t in check_texts(y)])


class LanguageAdapterEstimator(_Seq2SeqEstimator):
    """Fit adapters on monolingual text by denoising; ``score`` is the negated held-out loss."""

    def __init__(self, host: Seq2SeqModel | None = None, tokenizer: Tokenizer | None = None, language: str = "l1",
                 style: str = "generic", mask_ratio: float = 0.3, bottleneck: int | None = None,
                 steps: int = 1000, lr: float = 1e-3, batch_size: int = 16, seed: int = 0):
        self.host = host
        self.tokenizer = tokenizer
        self.language = language
        self.style = style
        self.mask_ratio = mask_ratio
        self.bottleneck = bottleneck
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def _corpus(self, X) -> list[TaggedSentence]:
        return [TaggedSentence(x, self.language, self.style) for x in check_texts(X)]

    def fit(self, X, y=None):
        model = insert_adapters(self._start(), AdapterSet.init(self.host, self.bottleneck, self.seed))
        train_language_adaptation(model, self._corpus(X), self._config(), NoiseSpec(self.mask_ratio),
                                  self.tokenizer)
        self.model_ = model
        self.adapters_ = extract_adapters(model, provenance=f"{self.language}:{self.style}",
                                          language=self.language).seal()
        return self

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "model_")
        return -heldout_denoising_loss(self.model_, self._corpus(X), self.tokenizer,
                                       NoiseSpec(self.mask_ratio, seed=self.seed))
