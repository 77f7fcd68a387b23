"""Bottleneck adapters, trainable partitions, cross-attention transplant and adapter composition."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ContractError
from .transformer import ADAPTER_GROUPS, ALL_GROUPS, Seq2SeqModel

ADAPTER_FIELDS = ("ln_gain", "ln_bias", "w_down", "b_down", "w_up", "b_up")

MODES = ("language_adaptation", "task_adaptation", "full_finetune")


@dataclass
class AdapterModule:
    """``W_up . relu(W_down . LN(x) + b_down) + b_up + x`` applied row-wise."""

    ln_gain: np.ndarray
    ln_bias: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray

    @classmethod
    def init(cls, hidden_dim: int, bottleneck: int | None = None, rng: np.random.Generator | None = None,
             std: float = 0.02) -> "AdapterModule":
        # zero up-projection: the block starts as the exact identity
        b = bottleneck or hidden_dim // 2
        rng = rng or np.random.default_rng(0)
        return cls(
            ln_gain=np.ones(hidden_dim),
            ln_bias=np.zeros(hidden_dim),
            w_down=rng.normal(0.0, std, size=(hidden_dim, b)),
            b_down=np.zeros(b),
            w_up=np.zeros((b, hidden_dim)),
            b_up=np.zeros(hidden_dim),
        )

    @property
    def hidden_dim(self) -> int:
        return self.w_down.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.w_down.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ADAPTER_FIELDS}

    def copy(self) -> "AdapterModule":
        return AdapterModule(**{k: v.copy() for k, v in self.arrays().items()})

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


def _adapter_graph(ln_gain, ln_bias, w_down, b_down, w_up, b_up, x: Tensor) -> Tensor:
    hidden = ag.relu(ag.add(ag.matmul(ag.layer_norm(x, ln_gain, ln_bias), w_down), b_down))
    return ag.add(ag.add(ag.matmul(hidden, w_up), b_up), x)


def adapter_forward(adapter: AdapterModule, x) -> Tensor:
    x = ag.as_tensor(x)
    if x.shape[-1] != adapter.hidden_dim:
        raise ContractError(f"adapter expects last dimension {adapter.hidden_dim}, got input {x.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = ag.reshape(x, (1, x.shape[0]))
    out = _adapter_graph(*(Tensor(a) for a in adapter.arrays().values()), x)
    return ag.reshape(out, (out.shape[-1],)) if squeeze else out


def adapter_forward_params(params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return _adapter_graph(*(params[f"{prefix}.{name}"] for name in ADAPTER_FIELDS), x)


class AdapterSet:
    """One adapter per encoder layer and per decoder layer, tagged with where it came from.

    The provenance tag is fixed once :meth:`seal` is called (after training).
    """

    def __init__(self, encoder: list[AdapterModule], decoder: list[AdapterModule],
                 provenance: str = "untrained", language: str | None = None):
        self.encoder = list(encoder)
        self.decoder = list(decoder)
        self._provenance = provenance
        self.language = language
        self.sealed = False

    @classmethod
    def init(cls, model_or_config, bottleneck: int | None = None, seed: int = 0,
             provenance: str = "untrained") -> "AdapterSet":
        config = getattr(model_or_config, "config", model_or_config)
        rng = np.random.default_rng(seed)
        enc = [AdapterModule.init(config.hidden_dim, bottleneck, rng) for _ in range(config.num_encoder_layers)]
        dec = [AdapterModule.init(config.hidden_dim, bottleneck, rng) for _ in range(config.num_decoder_layers)]
        return cls(enc, dec, provenance)

    @property
    def provenance(self) -> str:
        return self._provenance

    @provenance.setter
    def provenance(self, tag: str):
        if self.sealed:
            raise ContractError("provenance of a trained adapter set is immutable")
        self._provenance = tag

    def seal(self) -> "AdapterSet":
        self.sealed = True
        return self

    def copy(self) -> "AdapterSet":
        out = AdapterSet([a.copy() for a in self.encoder], [a.copy() for a in self.decoder],
                         self._provenance, self.language)
        out.sealed = self.sealed
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for side, mods in (("enc", self.encoder), ("dec", self.decoder)):
            for k, mod in enumerate(mods):
                for name, a in mod.arrays().items():
                    out[f"adapter.{side}.layer{k}.{name}"] = a
        return out

    def save(self, path) -> Path:
        path = Path(path)
        tag = ag.config_hash({"enc": len(self.encoder), "dec": len(self.decoder),
                              "h": self.encoder[0].hidden_dim if self.encoder else 0})
        ag.save_checkpoint(path, self.arrays(), tag, provenance=self._provenance, language=self.language)
        return path

    @classmethod
    def load(cls, path) -> "AdapterSet":
        arrays, header = ag.load_checkpoint(path)
        sides = {"enc": {}, "dec": {}}
        for key, a in arrays.items():
            _, side, layer, name = key.split(".")
            sides[side].setdefault(int(layer[len("layer"):]), {})[name] = a
        build = lambda d: [AdapterModule(**d[k]) for k in sorted(d)]
        out = cls(build(sides["enc"]), build(sides["dec"]), header["provenance"], header.get("language"))
        return out.seal()


def _check_sizes(model: Seq2SeqModel, encoder: list, decoder: list):
    c = model.config
    if len(encoder) != c.num_encoder_layers or len(decoder) != c.num_decoder_layers:
        raise ContractError(
            f"adapter set has {len(encoder)}+{len(decoder)} modules; host has "
            f"{c.num_encoder_layers}+{c.num_decoder_layers} layers")
    for mod in encoder + decoder:
        if mod.hidden_dim != c.hidden_dim:
            raise ContractError(f"adapter hidden size {mod.hidden_dim} != host hidden size {c.hidden_dim}")


def remove_adapters(model: Seq2SeqModel) -> Seq2SeqModel:
    for path in model.paths(ADAPTER_GROUPS):
        del model.params[path]
        del model.groups[path]
    model.provenance.pop("adapter_enc", None)
    model.provenance.pop("adapter_dec", None)
    return model


def _insert_side(model: Seq2SeqModel, side: str, modules: list[AdapterModule]):
    group = f"adapter_{side}"
    for k, mod in enumerate(modules):
        for name, a in mod.arrays().items():
            model._register(f"adapter.{side}.layer{k}.{name}", group, a.copy())


def insert_adapters(model: Seq2SeqModel, adapters: AdapterSet) -> Seq2SeqModel:
    """Place a copy of ``adapters`` after every feed-forward block (in place; returns ``model``)."""
    _check_sizes(model, adapters.encoder, adapters.decoder)
    remove_adapters(model)
    _insert_side(model, "enc", adapters.encoder)
    _insert_side(model, "dec", adapters.decoder)
    model.provenance["adapter_enc"] = adapters.provenance
    model.provenance["adapter_dec"] = adapters.provenance
    return model


def extract_adapters(model: Seq2SeqModel, provenance: str | None = None,
                     language: str | None = None) -> AdapterSet:
    """Copy the model's current adapters out into an :class:`AdapterSet`."""
    if not model.has_adapters:
        raise ContractError("model has no adapters")
    c = model.config

    def side(name, n):
        return [AdapterModule(**{f: model.params[f"adapter.{name}.layer{k}.{f}"].data.copy()
                                 for f in ADAPTER_FIELDS}) for k in range(n)]

    tag = provenance or model.provenance.get("adapter_enc", "untrained")
    return AdapterSet(side("enc", c.num_encoder_layers), side("dec", c.num_decoder_layers), tag, language)


@dataclass(frozen=True)
class TrainablePartition:
    mode: str
    trainable: frozenset = field(default_factory=frozenset)
    frozen: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.trainable & self.frozen:
            raise ContractError("trainable and frozen groups overlap")
        if self.trainable | self.frozen != frozenset(ALL_GROUPS):
            raise ContractError("partition does not cover every parameter group")


def partition_parameters(model: Seq2SeqModel, mode: str) -> TrainablePartition:
    if mode == "language_adaptation":
        if not model.has_adapters:
            raise ContractError("language_adaptation requires inserted adapters")
        trainable = frozenset(ADAPTER_GROUPS)
    elif mode == "task_adaptation":
        trainable = frozenset({"dec_cross_attn"})
    elif mode == "full_finetune":
        trainable = frozenset(ALL_GROUPS)
    else:
        raise ContractError(f"unknown partition mode {mode!r}; expected one of {MODES}")
    return TrainablePartition(mode, trainable, frozenset(ALL_GROUPS) - trainable)


def transplant_cross_attention(target: Seq2SeqModel, donor: Seq2SeqModel):
    """Overwrite ``target``'s decoder cross-attention with a copy of ``donor``'s."""
    if target.config != donor.config:
        raise ContractError("cross-attention transplant needs identical model configs")
    if target is donor:
        return
    for path in donor.paths(["dec_cross_attn"]):
        target.params[path].data = donor.params[path].data.copy()
    target.provenance["dec_cross_attn"] = donor.provenance.get("task", "donor")


def compose_adapters(host: Seq2SeqModel, encoder_source: AdapterSet, decoder_source: AdapterSet) -> Seq2SeqModel:
    """New model: ``host`` weights, encoder adapters from one set and decoder adapters from another."""
    _check_sizes(host, encoder_source.encoder, decoder_source.decoder)
    model = remove_adapters(host.copy())
    _insert_side(model, "enc", encoder_source.encoder)
    _insert_side(model, "dec", decoder_source.decoder)
    model.provenance["adapter_enc"] = encoder_source.provenance
    model.provenance["adapter_dec"] = decoder_source.provenance
    return model


def adapter_parameter_count(hidden_dim: int, bottleneck: int, layers_per_side: int) -> int:
    """Closed form for both sides: ``2 L (h b + b h + 2h + b + h)``."""
    h, b = hidden_dim, bottleneck
    return 2 * layers_per_side * (h * b + b * h + 2 * h + (b + h))
