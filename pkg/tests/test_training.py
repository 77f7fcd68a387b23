import json

import numpy as np
import pytest

from modtst.corpus import TaggedSentence
from modtst.exceptions import ContractError
from modtst.training import (NoiseSpec, TrainingConfig, apply_noise, denoising_loss, finetune_supervised,
                             ibt_round, mask_count, run_training)
from modtst.transformer import ModelConfig, Seq2SeqModel, seq2seq_loss

from conftest import tiny_config


class FixedSampler:
    def __init__(self, batches):
        self.batches = list(batches)

    def next(self):
        return self.batches.pop(0)


def _loss_fn(model):
    return lambda batch, rng: seq2seq_loss(model, [s for s, _ in batch], [t for _, t in batch])


def small_model(tokenizer, seed=0):
    return Seq2SeqModel(ModelConfig(vocab_size=tokenizer.vocab_size, num_encoder_layers=1, num_decoder_layers=1,
                                    hidden_dim=16, num_heads=2, ffn_dim=32, max_positions=48, dropout=0.0),
                        seed=seed)


@pytest.mark.parametrize("n,ratio,k", [(10, 0.3, 3), (1, 0.3, 1), (3, 0.3, 1), (7, 0.5, 3), (4, 0.0, 0)])
def test_mask_counts(n, ratio, k):
    assert mask_count(n, ratio) == k
    out = apply_noise(list(range(10, 10 + n)), NoiseSpec(ratio), np.random.default_rng(0))
    assert sum(t == 3 for t in out) == k


def test_noise_edge_cases():
    assert apply_noise([], NoiseSpec(0.3)) == []
    words = "a b c d".split()
    assert apply_noise(words, NoiseSpec(0.0)) == words
    assert apply_noise(words, NoiseSpec(0.5), np.random.default_rng(1)).count("<mask>") == 2
    with pytest.raises(ContractError):
        NoiseSpec(1.5)


def test_untrained_denoising_loss_is_near_uniform(tiny_model):
    loss = denoising_loss(tiny_model.copy(), [5, 6, 7, 8, 9, 2], NoiseSpec(0.3)).item()
    small = Seq2SeqModel(tiny_config(init_std=0.001), seed=0)
    near = denoising_loss(small, [5, 6, 7, 8, 9, 2], NoiseSpec(0.3)).item()
    assert near == pytest.approx(np.log(10), abs=0.01)
    assert np.isfinite(loss)


def test_zero_ratio_is_plain_reconstruction(tiny_model):
    s = [5, 6, 7, 8, 2]
    assert denoising_loss(tiny_model, s, NoiseSpec(0.0)).item() == seq2seq_loss(tiny_model, [s], [s]).item()


def test_gradient_accumulation_matches_full_batch():
    pairs = [([5, 6, 2], [5, 7, 2]), ([5, 8, 9, 2], [5, 6, 2]), ([5, 7, 2], [5, 9, 8, 7, 2]), ([5, 2], [5, 6, 2])]
    a = Seq2SeqModel(tiny_config(), seed=0)
    b = a.copy()
    rng = np.random.default_rng(0)
    run_training(a, "full_finetune", FixedSampler([pairs]), _loss_fn(a),
                 TrainingConfig(lr=1e-2, batch_size=4, max_steps=1), rng)
    run_training(b, "full_finetune", FixedSampler([pairs[:2], pairs[2:]]), _loss_fn(b),
                 TrainingConfig(lr=1e-2, batch_size=2, grad_accum_steps=2, max_steps=1), rng)
    for path, t in a.params.items():
        np.testing.assert_allclose(t.data, b.params[path].data, atol=1e-10, rtol=0)


def _pairs(task, n=40):
    return [p for p in task.pseudo_parallel[:n]]


def test_training_log_and_loss_decrease(small_task, tmp_path):
    tok = small_task.tokenizer
    model = small_model(tok)
    log_path = tmp_path / "log.jsonl"
    log = finetune_supervised(model, _pairs(small_task), TrainingConfig(
        lr=3e-3, batch_size=8, max_steps=60, eval_every=10, log_path=str(log_path)), ("informal", "formal"), tok)
    steps = [r["step"] for r in log.records]
    assert steps == [10, 20, 30, 40, 50, 60]
    assert log.losses[-1] < log.losses[0]
    lines = [json.loads(x) for x in log_path.read_text().splitlines()]
    assert [r["step"] for r in lines] == steps
    assert all(r["mode"] == "full_finetune" and r["trainable_params"] == log.trainable_params for r in lines)
    with pytest.raises(ContractError, match="increase"):
        log.append(60, 0.0)


def test_training_is_deterministic(small_task):
    tok = small_task.tokenizer
    cfg = TrainingConfig(lr=1e-3, batch_size=4, max_steps=5, seed=3)
    models = [small_model(tok) for _ in range(2)]
    for m in models:
        finetune_supervised(m, _pairs(small_task), cfg, ("informal", "formal"), tok)
    for path, t in models[0].params.items():
        assert np.array_equal(t.data, models[1].params[path].data)


def test_direction_mismatch_is_rejected(small_task):
    tok = small_task.tokenizer
    with pytest.raises(ContractError, match="oriented"):
        finetune_supervised(small_model(tok), _pairs(small_task), TrainingConfig(max_steps=1),
                            ("formal", "informal"), tok)


def test_ibt_counts_empty_generations(small_task):
    tok = small_task.tokenizer
    fwd, bwd = small_model(tok), small_model(tok, seed=1)
    for m in (fwd, bwd):
        m.params["output_proj.bias"].data[m.config.eos_id] = 1e3  # always stop immediately
    src = [TaggedSentence("ciao", "l1", "informal")] * 3
    tgt = [TaggedSentence("salve", "l1", "formal")] * 2
    log_f, log_b = ibt_round(fwd, bwd, src, tgt, TrainingConfig(max_steps=1), tok)
    assert (log_f.skipped, log_b.skipped) == (2, 3)


def test_ibt_rejects_mixed_languages(small_task):
    tok = small_task.tokenizer
    src = [TaggedSentence("a", "l1", "informal")]
    tgt = [TaggedSentence("b", "l2", "formal")]
    with pytest.raises(ContractError, match="one language"):
        ibt_round(small_model(tok), small_model(tok), src, tgt, TrainingConfig(max_steps=1), tok)
