import numpy as np
import pytest

from modtst.adapters import AdapterSet, insert_adapters
from modtst.synthetic import SyntheticTaskSpec, generate_synthetic_task
from modtst.transformer import ModelConfig, Seq2SeqModel


def numeric_grad(f, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    out = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        keep = array[i]
        array[i] = keep + eps
        up = f()
        array[i] = keep - eps
        down = f()
        array[i] = keep
        out[i] = (up - down) / (2 * eps)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def tiny_config(**overrides) -> ModelConfig:
    params = dict(vocab_size=10, num_encoder_layers=1, num_decoder_layers=1, hidden_dim=4, num_heads=2,
                  ffn_dim=8, max_positions=12, dropout=0.0, init_std=0.5)
    params.update(overrides)
    return ModelConfig(**params)


def random_adapters(model, seed: int, scale: float = 0.5) -> AdapterSet:
    """Adapters with non-zero up-projections so every adapter weight gets a gradient."""
    rng = np.random.default_rng(seed)
    aset = AdapterSet.init(model, seed=seed)
    for mod in aset.encoder + aset.decoder:
        mod.w_up = rng.normal(0, scale, mod.w_up.shape)
        mod.w_down = rng.normal(0, scale, mod.w_down.shape)
    return aset


@pytest.fixture
def tiny_model():
    return Seq2SeqModel(tiny_config(), seed=0)


@pytest.fixture
def tiny_model_with_adapters():
    model = Seq2SeqModel(tiny_config(), seed=0)
    return insert_adapters(model, random_adapters(model, 1))


@pytest.fixture(scope="session")
def small_task():
    spec = SyntheticTaskSpec(n_aux_parallel=60, n_pseudo_parallel=60, n_style_raw=200, n_generic=80,
                             n_generic_dev=20, n_host_aux=100, n_host_target=20, n_eval=12)
    return generate_synthetic_task(spec, seed=0)
