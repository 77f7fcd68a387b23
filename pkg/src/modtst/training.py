"""Denoising language adaptation, cross-attention task adaptation, supervised fine-tuning and IBT."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .adapters import partition_parameters
from .autograd import no_grad
from .corpus import (MASK_TOKEN, ParallelPair, TaggedSentence, Tokenizer, require_single_language)
from .exceptions import ContractError
from .transformer import GenerationConfig, Seq2SeqModel, generate_batch, seq2seq_loss

MASK_ID = 3


@dataclass(frozen=True)
class NoiseSpec:
    mask_ratio: float = 0.30
    mask_id: int = MASK_ID
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ContractError("mask_ratio must lie in [0, 1]")


def mask_count(n_words: int, ratio: float) -> int:
    if n_words == 0 or ratio <= 0:
        return 0
    # epsilon guards products like 0.3 * 10 landing just under an integer
    return max(1, math.floor(ratio * n_words + 1e-9))


def apply_noise(sentence: Sequence, spec: NoiseSpec, rng: np.random.Generator | None = None) -> list:
    """Replace ``floor(ratio * n)`` (at least one) uniformly chosen words by the mask symbol.

    Integer sentences get ``spec.mask_id``; string sentences get ``"<mask>"``.
    """
    words = list(sentence)
    k = mask_count(len(words), spec.mask_ratio)
    if k == 0:
        return words
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    mask = MASK_TOKEN if isinstance(words[0], str) else spec.mask_id
    for i in rng.choice(len(words), size=k, replace=False):
        words[i] = mask
    return words


def _noisy_source(ids: Sequence[int], spec: NoiseSpec, rng) -> list[int]:
    # language tag and end-of-sequence stay intact
    return [ids[0]] + apply_noise(ids[1:-1], spec, rng) + [ids[-1]]


def denoising_batch_loss(model: Seq2SeqModel, batch: Sequence[Sequence[int]], spec: NoiseSpec, rng):
    srcs = [_noisy_source(ids, spec, rng) for ids in batch]
    return seq2seq_loss(model, srcs, batch)


def denoising_loss(model: Seq2SeqModel, sentence: Sequence[int], spec: NoiseSpec,
                   rng: np.random.Generator | None = None):
    """Reconstruction cross-entropy of ``sentence`` (``[lang, words..., eos]``) from its noised copy."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return denoising_batch_loss(model, [list(sentence)], spec, rng)


def heldout_denoising_loss(model: Seq2SeqModel, corpus: Sequence[TaggedSentence], tokenizer: Tokenizer,
                           spec: NoiseSpec = NoiseSpec(), batch_size: int = 64) -> float:
    """Mean per-sentence denoising loss with fixed noise draws and no dropout."""
    rng = np.random.default_rng(spec.seed)
    ids = [tokenizer.tokenize(s.text, s.language) for s in corpus]
    was_training = model.training
    model.eval()
    total = 0.0
    with no_grad():
        for i in range(0, len(ids), batch_size):
            chunk = ids[i:i + batch_size]
            total += denoising_batch_loss(model, chunk, spec, rng).item() * len(chunk)
    model.train(was_training)
    return total / len(ids)


# ---------------------------------------------------------------------------
# configuration and logs


@dataclass
class TrainingConfig:
    lr: float = 1e-5
    batch_size: int = 1
    grad_accum_steps: int = 1
    max_steps: int = 1000
    seed: int = 0
    eval_every: int = 0
    log_path: str | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        for name in ("batch_size", "grad_accum_steps", "max_steps"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if self.eval_every < 0:
            raise ContractError("eval_every must be non-negative")

    @classmethod
    def language_adaptation(cls, **overrides) -> "TrainingConfig":
        params = dict(batch_size=32, grad_accum_steps=8, max_steps=200_000)
        params.update(overrides)
        return cls(**params)

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accum_steps

    def replace(self, **changes) -> "TrainingConfig":
        return TrainingConfig(**{**asdict(self), **changes})


@dataclass
class TrainLog:
    mode: str
    trainable_params: int
    records: list = field(default_factory=list)
    checkpoint_path: str | None = None
    skipped: int = 0
    log_path: str | None = None

    def append(self, step: int, loss: float):
        if self.records and step <= self.records[-1]["step"]:
            raise ContractError("log steps must increase strictly")
        rec = {"step": step, "loss": loss, "mode": self.mode, "trainable_params": self.trainable_params}
        self.records.append(rec)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


class BatchSampler:
    """Endless epoch-shuffled batches over ``items``."""

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        if not len(items):
            raise ContractError("cannot sample batches from an empty corpus")
        self.items = items
        self.batch_size = batch_size
        self.rng = rng
        self._order: list[int] = []

    def next(self) -> list:
        out = []
        while len(out) < self.batch_size:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.items)))
            out.append(self.items[self._order.pop(0)])
        return out


class InterleavedSampler:
    """Alternate whole batches between several samplers."""

    def __init__(self, samplers: Sequence[BatchSampler]):
        self.samplers = list(samplers)
        self._turn = 0

    def next(self) -> list:
        s = self.samplers[self._turn % len(self.samplers)]
        self._turn += 1
        return s.next()


def run_training(model: Seq2SeqModel, mode: str, sampler, loss_fn: Callable, cfg: TrainingConfig,
                 rng: np.random.Generator) -> TrainLog:
    """Shared optimisation loop: only the partition's trainable groups receive updates."""
    partition = partition_parameters(model, mode)
    model.set_trainable(partition.trainable)
    params = model.parameters(partition.trainable)
    for p in params.values():
        p.zero_grad()
    n_trainable = sum(p.size for p in params.values())
    state = ag.AdamState(lr=cfg.lr)
    log = TrainLog(mode, n_trainable, log_path=cfg.log_path)
    model.reseed_dropout(cfg.seed + 1)
    model.train()
    window: list[float] = []
    try:
        for step in range(1, cfg.max_steps + 1):
            total = 0.0
            for _ in range(cfg.grad_accum_steps):
                loss = loss_fn(sampler.next(), rng)
                ag.backward(ag.mul(loss, 1.0 / cfg.grad_accum_steps))
                total += loss.item() / cfg.grad_accum_steps
            ag.adam_step(params, state)
            window.append(total)
            if (cfg.eval_every and step % cfg.eval_every == 0) or step == cfg.max_steps:
                log.append(step, float(np.mean(window)))
                window = []
                if cfg.checkpoint_dir:
                    log.checkpoint_path = str(model.save(Path(cfg.checkpoint_dir) / f"step{step}"))
    finally:
        model.eval()
        model.set_trainable(())
    return log


def _seq2seq_fn(model: Seq2SeqModel):
    def fn(batch, rng):
        return seq2seq_loss(model, [s for s, _ in batch], [t for _, t in batch])
    return fn


def _encode_pairs(pairs: Sequence[ParallelPair], tokenizer: Tokenizer, direction_tags: bool = False):
    out = []
    for p in pairs:
        src = tokenizer.tokenize(p.source.text, p.source.language)
        if direction_tags:
            src = src[:1] + [tokenizer.direction_id(p.target.style)] + src[1:]
        out.append((src, tokenizer.tokenize(p.target.text, p.target.language)))
    return out


# ---------------------------------------------------------------------------
# regimes


def train_language_adaptation(model: Seq2SeqModel, corpus: Sequence[TaggedSentence], cfg: TrainingConfig,
                              spec: NoiseSpec, tokenizer: Tokenizer) -> TrainLog:
    """Denoising training of the inserted adapters only."""
    if not len(corpus):
        raise ContractError("language adaptation needs a non-empty corpus")
    language = require_single_language(corpus)
    styles = {s.style for s in corpus}
    tag = styles.pop() if len(styles) == 1 else "generic"
    ids = [tokenizer.tokenize(s.text, language) for s in corpus]
    rng = np.random.default_rng(cfg.seed)
    sampler = BatchSampler(ids, cfg.batch_size, rng)
    log = run_training(model, "language_adaptation", sampler,
                       lambda batch, r: denoising_batch_loss(model, batch, spec, r), cfg, rng)
    model.provenance["adapter_enc"] = model.provenance["adapter_dec"] = tag
    model.provenance["adapter_language"] = language
    return log


def train_task_adaptation(model: Seq2SeqModel, parallel: Sequence[ParallelPair], cfg: TrainingConfig,
                          tokenizer: Tokenizer) -> TrainLog:
    """Sequence-to-sequence training that updates only the decoder cross-attention."""
    if not len(parallel):
        raise ContractError("task adaptation needs a non-empty parallel corpus")
    rng = np.random.default_rng(cfg.seed)
    sampler = BatchSampler(_encode_pairs(parallel, tokenizer), cfg.batch_size, rng)
    log = run_training(model, "task_adaptation", sampler, _seq2seq_fn(model), cfg, rng)
    first = parallel[0]
    model.provenance["task"] = f"{first.source.language}:{first.source.style}->{first.target.style}"
    return log


def finetune_supervised(model: Seq2SeqModel, parallel: Sequence[ParallelPair], cfg: TrainingConfig,
                        direction: tuple[str, str] | None, tokenizer: Tokenizer,
                        mix: Sequence[ParallelPair] | None = None) -> TrainLog:
    """Full fine-tuning on style pairs.

    ``direction=None`` trains one model for both directions, with a target-style
    tag inserted after the source language tag.  ``mix`` is a second corpus
    interleaved batch by batch (e.g. auxiliary-language gold pairs).
    """
    if not len(parallel):
        raise ContractError("fine-tuning needs a non-empty parallel corpus")
    corpora = [list(parallel)] + ([list(mix)] if mix else [])
    if direction is not None:
        for corpus in corpora:
            for p in corpus:
                if p.direction != tuple(direction):
                    raise ContractError(f"pair oriented {p.direction}, expected {tuple(direction)}")
    rng = np.random.default_rng(cfg.seed)
    tagged = direction is None
    samplers = [BatchSampler(_encode_pairs(c, tokenizer, tagged), cfg.batch_size, rng) for c in corpora]
    sampler = samplers[0] if len(samplers) == 1 else InterleavedSampler(samplers)
    log = run_training(model, "full_finetune", sampler, _seq2seq_fn(model), cfg, rng)
    model.provenance["direction"] = "both" if tagged else f"{direction[0]}->{direction[1]}"
    return log


def translate(model: Seq2SeqModel, texts: Sequence[str], language: str, tokenizer: Tokenizer,
              gen: GenerationConfig, target_style: str | None = None, batch_size: int = 64) -> list[str]:
    """Decode ``texts`` with ``model``; ``target_style`` adds a direction tag for tagged models."""
    out = []
    lang = tokenizer.lang_id(language)
    for i in range(0, len(texts), batch_size):
        srcs = []
        for t in texts[i:i + batch_size]:
            ids = tokenizer.tokenize(t, language)
            if target_style is not None:
                ids = ids[:1] + [tokenizer.direction_id(target_style)] + ids[1:]
            srcs.append(ids[: model.config.max_positions])
        out += [tokenizer.detokenize(ids[1:]) for ids in generate_batch(model, srcs, gen, lang)]
    return out


def ibt_round(model_fwd: Seq2SeqModel, model_bwd: Seq2SeqModel, mono_src: Sequence[TaggedSentence],
              mono_tgt: Sequence[TaggedSentence], cfg: TrainingConfig, tokenizer: Tokenizer,
              gen: GenerationConfig = GenerationConfig(max_length=32),
              aux: Sequence[ParallelPair] | None = None) -> tuple[TrainLog, TrainLog]:
    """One round of iterative back-translation between two direction models.

    Both synthetic corpora are produced before either model is updated.  Empty
    generations are dropped and counted in the returned logs' ``skipped``.
    ``aux`` gold pairs (any orientation) are mixed into both models' training,
    each flipped to the model's direction.
    """
    if not len(mono_src) or not len(mono_tgt):
        raise ContractError("IBT needs non-empty monolingual corpora on both sides")
    language = require_single_language(list(mono_src) + list(mono_tgt))
    src_style, tgt_style = mono_src[0].style, mono_tgt[0].style
    if src_style == tgt_style:
        raise ContractError("IBT corpora must carry different styles")

    def synthesize(model, corpus, new_style):
        outputs = translate(model, [s.text for s in corpus], language, tokenizer, gen)
        pairs, skipped = [], 0
        for real, fake in zip(corpus, outputs):
            if not fake.strip():
                skipped += 1
                continue
            pairs.append(ParallelPair(TaggedSentence(fake, language, new_style), real, "synthetic-MT"))
        return pairs, skipped

    fwd_pairs, fwd_skipped = synthesize(model_bwd, mono_tgt, src_style)
    bwd_pairs, bwd_skipped = synthesize(model_fwd, mono_src, tgt_style)
    def oriented(direction):
        if not aux:
            return None
        return [p if p.direction == direction else p.flipped() for p in aux]

    logs = []
    for model, pairs, skipped, direction, seed in (
            (model_fwd, fwd_pairs, fwd_skipped, (src_style, tgt_style), cfg.seed),
            (model_bwd, bwd_pairs, bwd_skipped, (tgt_style, src_style), cfg.seed + 1)):
        if pairs:
            log = finetune_supervised(model, pairs, cfg.replace(seed=seed), direction, tokenizer,
                                      mix=oriented(direction))
        else:
            log = TrainLog("full_finetune", 0)
        log.skipped = skipped
        logs.append(log)
    return logs[0], logs[1]
