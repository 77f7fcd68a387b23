import numpy as np
import pytest

from modtst.adapters import (AdapterModule, AdapterSet, adapter_forward, adapter_parameter_count,
                             compose_adapters, extract_adapters, insert_adapters, partition_parameters,
                             remove_adapters, transplant_cross_attention)
from modtst.exceptions import ContractError
from modtst.training import BatchSampler, TrainingConfig, run_training
from modtst.transformer import ADAPTER_GROUPS, HOST_GROUPS, Seq2SeqModel, count_parameters, forward_logits, seq2seq_loss

from conftest import random_adapters, tiny_config

SRC, TGT = [5, 6, 7, 2], [5, 8, 9, 2]


def test_hand_computed_forward():
    # LN([1, 3]) = [-1, 1]; down-projection picks the second unit -> 1; up adds it to the second coordinate
    mod = AdapterModule(ln_gain=np.ones(2), ln_bias=np.zeros(2), w_down=np.array([[0.0], [1.0]]),
                        b_down=np.zeros(1), w_up=np.array([[0.0, 1.0]]), b_up=np.zeros(2))
    np.testing.assert_allclose(adapter_forward(mod, np.array([1.0, 3.0])).data, [1.0, 4.0], atol=1e-5)


def test_zero_up_projection_is_identity():
    mod = AdapterModule.init(6, 3, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 6))
    assert np.array_equal(adapter_forward(mod, x).data, x)


def test_output_is_shift_invariant_up_to_the_residual():
    mod = AdapterModule.init(5, 2, np.random.default_rng(0))
    mod.w_up = np.random.default_rng(2).normal(size=(2, 5))
    x = np.random.default_rng(3).normal(size=(3, 5))
    delta = adapter_forward(mod, x).data - x
    delta_shifted = adapter_forward(mod, x + 7.0).data - (x + 7.0)
    np.testing.assert_allclose(delta, delta_shifted, atol=1e-9)


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ContractError, match="last dimension"):
        adapter_forward(AdapterModule.init(4), np.ones(5))


def test_fresh_adapters_leave_logits_unchanged(tiny_model):
    before = forward_logits(tiny_model, SRC, TGT).data
    insert_adapters(tiny_model, AdapterSet.init(tiny_model, seed=3))
    assert np.array_equal(forward_logits(tiny_model, SRC, TGT).data, before)


def test_insert_remove_round_trip(tiny_model):
    before = tiny_model.state_dict()
    insert_adapters(tiny_model, random_adapters(tiny_model, 0))
    assert tiny_model.has_adapters
    remove_adapters(tiny_model)
    after = tiny_model.state_dict()
    assert before.keys() == after.keys()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_size_mismatch(tiny_model):
    other = Seq2SeqModel(tiny_config(hidden_dim=8), seed=0)
    with pytest.raises(ContractError, match="hidden size"):
        insert_adapters(tiny_model, AdapterSet.init(other))
    with pytest.raises(ContractError, match="layers"):
        insert_adapters(tiny_model, AdapterSet.init(Seq2SeqModel(tiny_config(num_decoder_layers=2))))


def test_partition_modes(tiny_model_with_adapters, tiny_model):
    la = partition_parameters(tiny_model_with_adapters, "language_adaptation")
    assert la.trainable == frozenset(ADAPTER_GROUPS)
    ta = partition_parameters(tiny_model, "task_adaptation")
    assert ta.trainable == frozenset({"dec_cross_attn"})
    assert partition_parameters(tiny_model, "full_finetune").frozen == frozenset()
    with pytest.raises(ContractError):
        partition_parameters(tiny_model, "language_adaptation")
    with pytest.raises(ContractError):
        partition_parameters(tiny_model, "lora")


@pytest.mark.parametrize("mode", ["language_adaptation", "task_adaptation"])
def test_frozen_parameters_stay_bit_identical(tiny_model_with_adapters, mode):
    model = tiny_model_with_adapters
    part = partition_parameters(model, mode)
    frozen = {p: model.params[p].data.copy() for p in model.paths(part.frozen)}
    trainable = {p: model.params[p].data.copy() for p in model.paths(part.trainable)}
    rng = np.random.default_rng(0)
    log = run_training(model, mode, BatchSampler([(SRC, TGT)], 1, rng),
                       lambda batch, r: seq2seq_loss(model, [s for s, _ in batch], [t for _, t in batch]),
                       TrainingConfig(lr=1e-2, max_steps=100), rng)
    assert all(np.array_equal(model.params[p].data, a) for p, a in frozen.items())
    assert any(not np.array_equal(model.params[p].data, a) for p, a in trainable.items())
    assert log.trainable_params == count_parameters(model, part.trainable)


def test_transplant(tiny_model):
    donor = Seq2SeqModel(tiny_config(), seed=5)
    transplant_cross_attention(tiny_model, donor)
    for p in tiny_model.paths(["dec_cross_attn"]):
        assert np.array_equal(tiny_model.params[p].data, donor.params[p].data)
        assert tiny_model.params[p].data is not donor.params[p].data
    for p in tiny_model.paths(["dec_self_attn"]):
        if ".w" in p:
            assert not np.array_equal(tiny_model.params[p].data, donor.params[p].data)
    before = tiny_model.state_dict()
    transplant_cross_attention(tiny_model, tiny_model)
    assert all(np.array_equal(before[k], v.data) for k, v in tiny_model.params.items())
    with pytest.raises(ContractError, match="identical"):
        transplant_cross_attention(tiny_model, Seq2SeqModel(tiny_config(ffn_dim=16)))


def test_compose_takes_encoder_and_decoder_from_different_sets(tiny_model):
    a, b = random_adapters(tiny_model, 1), random_adapters(tiny_model, 2)
    a.provenance, b.provenance = "l1:informal", "l1:formal"
    model = compose_adapters(tiny_model, a, b)
    got = extract_adapters(model)
    assert np.array_equal(got.encoder[0].w_up, a.encoder[0].w_up)
    assert np.array_equal(got.decoder[0].w_up, b.decoder[0].w_up)
    assert model.provenance["adapter_enc"] == "l1:informal"
    assert model.provenance["adapter_dec"] == "l1:formal"
    assert not tiny_model.has_adapters


def test_sealed_provenance_is_immutable(tiny_model, tmp_path):
    aset = AdapterSet.init(tiny_model, provenance="l1:generic").seal()
    with pytest.raises(ContractError, match="immutable"):
        aset.provenance = "l2:generic"
    aset.save(tmp_path / "a.npz")
    loaded = AdapterSet.load(tmp_path / "a.npz")
    assert loaded.provenance == "l1:generic" and loaded.sealed


@pytest.mark.parametrize("h,b,layers", [(4, 2, 1), (64, 32, 2), (16, 5, 3)])
def test_parameter_count_closed_form(h, b, layers):
    model = Seq2SeqModel(tiny_config(hidden_dim=h, num_heads=2, num_encoder_layers=layers,
                                     num_decoder_layers=layers), seed=0)
    insert_adapters(model, AdapterSet.init(model, bottleneck=b))
    assert count_parameters(model, ADAPTER_GROUPS) == adapter_parameter_count(h, b, layers)
    assert count_parameters(model) == count_parameters(model, HOST_GROUPS) + adapter_parameter_count(h, b, layers)
