import numpy as np
import pytest
from sklearn.base import clone

from modtst.estimators import LanguageAdapterEstimator, StyleTransferEstimator, WordMasker
from modtst.transformer import ModelConfig, Seq2SeqModel


@pytest.fixture(scope="module")
def host(small_task):
    config = ModelConfig(vocab_size=small_task.tokenizer.vocab_size, num_encoder_layers=1, num_decoder_layers=1,
                         hidden_dim=16, num_heads=2, ffn_dim=32, max_positions=48)
    return Seq2SeqModel(config, seed=0)


def test_word_masker():
    masker = WordMasker(mask_ratio=0.3, seed=1).fit(["x"])
    out = masker.transform(["a b c d e f g h i j", "one two"])
    assert out[0].split().count("<mask>") == 3
    assert out[1].split().count("<mask>") == 1
    assert masker.transform(["a b c d e f g h i j"]) == out[:1]
    assert clone(masker).get_params() == {"mask_ratio": 0.3, "seed": 1}


@pytest.mark.parametrize("mode", ["full_finetune", "task_adaptation"])
def test_style_transfer_estimator(small_task, host, mode):
    pairs = small_task.pseudo_parallel[:20]
    X, y = [p.source.text for p in pairs], [p.target.text for p in pairs]
    est = StyleTransferEstimator(host=host, tokenizer=small_task.tokenizer, mode=mode, steps=3, lr=1e-3,
                                 max_length=8)
    assert clone(est).get_params()["mode"] == mode
    est.fit(X, y)
    assert len(est.predict(X[:3])) == 3
    assert 0.0 <= est.score(X[:3], y[:3]) <= 1.0
    # the host itself is never modified
    assert est.model_ is not host


def test_style_transfer_rejects_bad_input(small_task, host):
    est = StyleTransferEstimator(host=host, tokenizer=small_task.tokenizer, steps=1)
    with pytest.raises(ValueError):
        est.fit(["a", "b"], ["c"])
    with pytest.raises(ValueError):
        StyleTransferEstimator(host=host, tokenizer=small_task.tokenizer, mode="lora", steps=1).fit(["a"], ["b"])


def test_language_adapter_estimator(small_task, host):
    texts = [s.text for s in small_task.generic]
    est = LanguageAdapterEstimator(host=host, tokenizer=small_task.tokenizer, steps=15, lr=1e-2, batch_size=8)
    before = -LanguageAdapterEstimator(host=host, tokenizer=small_task.tokenizer, steps=1, lr=1e-12).fit(
        texts).score(texts)
    est.fit(texts)
    assert est.adapters_.sealed and est.adapters_.provenance == "l1:generic"
    assert -est.score(texts) < before
    host_params = {k: v.data.copy() for k, v in host.params.items()}
    est.fit(texts)
    assert all(np.array_equal(host.params[k].data, v) for k, v in host_params.items())
