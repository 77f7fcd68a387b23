"""Pre-LN encoder-decoder transformer with a grouped parameter registry."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, no_grad
from .exceptions import ConfigError, ContractError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2

HOST_GROUPS = (
    "embedding",
    "enc_self_attn",
    "enc_ffn",
    "dec_self_attn",
    "dec_cross_attn",
    "dec_ffn",
    "layernorm",
    "output_proj",
)
ADAPTER_GROUPS = ("adapter_enc", "adapter_dec")
ALL_GROUPS = HOST_GROUPS + ADAPTER_GROUPS

_NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_positions: int = 128
    dropout: float = 0.1
    init_std: float = 0.02
    pad_id: int = PAD_ID
    eos_id: int = EOS_ID

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        for name in ("vocab_size", "num_encoder_layers", "num_decoder_layers", "hidden_dim",
                     "num_heads", "ffn_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if max(self.pad_id, self.eos_id) >= self.vocab_size:
            raise ConfigError("vocab_size must include the special tokens")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        return ag.config_hash(self.to_dict())


@dataclass(frozen=True)
class GenerationConfig:
    strategy: str = "greedy"
    beam_size: int = 4
    max_length: int = 32
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ConfigError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.max_length < 2:
            raise ConfigError("max_length must be >= 2")


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


class Seq2SeqModel:
    """Toy host model.

    Parameters live in ``self.params`` (path -> Tensor) and every path carries
    exactly one group tag in ``self.groups``.  Adapters, when inserted, are
    registered under ``adapter.enc.layerK.*`` / ``adapter.dec.layerK.*``.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, str] = {}
        self.provenance: dict[str, str] = {}
        self.training = False
        self._rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng(seed + 1)
        self._build()

    # -- registry -----------------------------------------------------------

    def _register(self, path: str, group: str, data: np.ndarray):
        if path in self.params:
            raise ContractError(f"duplicate parameter path {path!r}")
        self.params[path] = Tensor(data, name=path)
        self.groups[path] = group

    def _normal(self, *shape):
        return self._rng.normal(0.0, self.config.init_std, size=shape)

    def _attn_params(self, prefix: str, group: str):
        h = self.config.hidden_dim
        for name in ("q", "k", "v", "o"):
            self._register(f"{prefix}.w{name}", group, self._normal(h, h))
            self._register(f"{prefix}.b{name}", group, np.zeros(h))

    def _ffn_params(self, prefix: str, group: str):
        h, f = self.config.hidden_dim, self.config.ffn_dim
        self._register(f"{prefix}.w1", group, self._normal(h, f))
        self._register(f"{prefix}.b1", group, np.zeros(f))
        self._register(f"{prefix}.w2", group, self._normal(f, h))
        self._register(f"{prefix}.b2", group, np.zeros(h))

    def _ln_params(self, prefix: str):
        h = self.config.hidden_dim
        self._register(f"{prefix}.gain", "layernorm", np.ones(h))
        self._register(f"{prefix}.bias", "layernorm", np.zeros(h))

    def _build(self):
        c = self.config
        self._register("embed.tokens", "embedding", self._normal(c.vocab_size, c.hidden_dim))
        self._register("embed.positions", "embedding", self._normal(c.max_positions, c.hidden_dim))
        for k in range(c.num_encoder_layers):
            p = f"encoder.layer{k}"
            self._ln_params(f"{p}.ln_attn")
            self._attn_params(f"{p}.self_attn", "enc_self_attn")
            self._ln_params(f"{p}.ln_ffn")
            self._ffn_params(f"{p}.ffn", "enc_ffn")
        self._ln_params("encoder.ln_final")
        for k in range(c.num_decoder_layers):
            p = f"decoder.layer{k}"
            self._ln_params(f"{p}.ln_self")
            self._attn_params(f"{p}.self_attn", "dec_self_attn")
            self._ln_params(f"{p}.ln_cross")
            self._attn_params(f"{p}.cross_attn", "dec_cross_attn")
            self._ln_params(f"{p}.ln_ffn")
            self._ffn_params(f"{p}.ffn", "dec_ffn")
        self._ln_params("decoder.ln_final")
        self._register("output_proj.bias", "output_proj", np.zeros(c.vocab_size))

    def paths(self, groups: Iterable[str] | None = None) -> list[str]:
        if groups is None:
            return list(self.params)
        groups = set(groups)
        unknown = groups - set(ALL_GROUPS)
        if unknown:
            raise ContractError(f"unknown parameter group(s) {sorted(unknown)}")
        return [p for p, g in self.groups.items() if g in groups]

    def parameters(self, groups: Iterable[str] | None = None) -> dict[str, Tensor]:
        return {p: self.params[p] for p in self.paths(groups)}

    def set_trainable(self, groups: Iterable[str]):
        groups = set(groups)
        for path, t in self.params.items():
            t.requires_grad = self.groups[path] in groups
            t.grad = None

    @property
    def has_adapters(self) -> bool:
        return any(g in ADAPTER_GROUPS for g in self.groups.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray], strict: bool = True):
        if strict and set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ContractError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for path, a in arrays.items():
            t = self.params[path]
            if a.shape != t.shape:
                raise ContractError(f"{path}: shape {a.shape} != {t.shape}")
            t.data = np.array(a, dtype=np.float64, copy=True)

    def copy(self) -> "Seq2SeqModel":
        clone = copy.copy(self)
        clone.params = {p: Tensor(t.data.copy(), name=p) for p, t in self.params.items()}
        clone.groups = dict(self.groups)
        clone.provenance = dict(self.provenance)
        clone._rng = copy.deepcopy(self._rng)
        clone._dropout_rng = copy.deepcopy(self._dropout_rng)
        return clone

    def train(self, mode: bool = True) -> "Seq2SeqModel":
        self.training = mode
        return self

    def eval(self) -> "Seq2SeqModel":
        return self.train(False)

    def reseed_dropout(self, seed: int):
        self._dropout_rng = np.random.default_rng(seed)

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> Path:
        """Write ``model.npz`` plus ``config.json`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))
        meta = {"groups": self.groups, "provenance": self.provenance}
        path = directory / "model.npz"
        ag.save_checkpoint(path, self.state_dict(), self.config.hash, **meta)
        return path

    @classmethod
    def load(cls, directory) -> "Seq2SeqModel":
        directory = Path(directory)
        config = ModelConfig(**json.loads((directory / "config.json").read_text()))
        arrays, header = ag.load_checkpoint(directory / "model.npz")
        if header["config_hash"] != config.hash:
            raise ContractError(f"{directory}: checkpoint was written for a different model config")
        model = cls(config)
        model.params, model.groups = {}, {}
        for path, a in arrays.items():
            model._register(path, header["groups"][path], a)
        model.provenance = dict(header.get("provenance", {}))
        return model

    # -- forward ------------------------------------------------------------

    def _drop(self, x: Tensor) -> Tensor:
        if self.training and self.config.dropout > 0:
            return ag.dropout(x, self.config.dropout, self._dropout_rng)
        return x

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ag.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def _attention(self, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray) -> Tensor:
        P = self.params
        c = self.config
        B, T, h = xq.shape
        S = xkv.shape[1]
        H = c.num_heads
        d = h // H

        def heads(x, n, name):
            y = _linear(x, P[f"{prefix}.w{name}"], P[f"{prefix}.b{name}"])
            return ag.transpose(ag.reshape(y, (B, n, H, d)), (0, 2, 1, 3))

        q = heads(xq, T, "q")
        k = heads(xkv, S, "k")
        v = heads(xkv, S, "v")
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
        weights = ag.softmax(ag.add(scores, mask))
        ctx = ag.reshape(ag.transpose(ag.matmul(weights, v), (0, 2, 1, 3)), (B, T, h))
        return _linear(ctx, P[f"{prefix}.wo"], P[f"{prefix}.bo"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        P = self.params
        hidden = ag.relu(_linear(x, P[f"{prefix}.w1"], P[f"{prefix}.b1"]))
        return _linear(hidden, P[f"{prefix}.w2"], P[f"{prefix}.b2"])

    def _adapter(self, side: str, k: int, x: Tensor) -> Tensor:
        prefix = f"adapter.{side}.layer{k}"
        if f"{prefix}.w_up" not in self.params:
            return x
        from .adapters import adapter_forward_params

        return adapter_forward_params(self.params, prefix, x)

    def _embed(self, ids: np.ndarray) -> Tensor:
        n = ids.shape[1]
        if n > self.config.max_positions:
            raise ContractError(
                f"sequence length {n} exceeds max_positions {self.config.max_positions}; truncate first")
        tok = ag.embedding_lookup(self.params["embed.tokens"], ids)
        pos = ag.slice_(self.params["embed.positions"], (slice(0, n),))
        return self._drop(ag.add(ag.mul(tok, np.sqrt(self.config.hidden_dim)), pos))

    def encode_batch(self, src: np.ndarray) -> Tensor:
        """Contextual states ``[B, S, h]`` for a padded id matrix."""
        src = np.asarray(src, dtype=np.int64)
        key_mask = np.where(src == self.config.pad_id, _NEG_INF, 0.0)[:, None, None, :]
        x = self._embed(src)
        for k in range(self.config.num_encoder_layers):
            p = f"encoder.layer{k}"
            h = self._ln(x, f"{p}.ln_attn")
            x = ag.add(x, self._drop(self._attention(f"{p}.self_attn", h, h, key_mask)))
            x = ag.add(x, self._drop(self._ffn(f"{p}.ffn", self._ln(x, f"{p}.ln_ffn"))))
            x = self._adapter("enc", k, x)
        return self._ln(x, "encoder.ln_final")

    def decode_batch(self, memory: Tensor, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        """Next-token logits ``[B, T, V]`` under teacher forcing."""
        src = np.asarray(src, dtype=np.int64)
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        T = tgt_in.shape[1]
        causal = np.triu(np.full((T, T), _NEG_INF), k=1)
        # position 0 is always a language tag, so every query row keeps one open key
        self_mask = causal[None, None] + np.where(tgt_in == self.config.pad_id, _NEG_INF, 0.0)[:, None, None, :]
        cross_mask = np.where(src == self.config.pad_id, _NEG_INF, 0.0)[:, None, None, :]
        x = self._embed(tgt_in)
        for k in range(self.config.num_decoder_layers):
            p = f"decoder.layer{k}"
            h = self._ln(x, f"{p}.ln_self")
            x = ag.add(x, self._drop(self._attention(f"{p}.self_attn", h, h, self_mask)))
            x = ag.add(x, self._drop(self._attention(f"{p}.cross_attn", self._ln(x, f"{p}.ln_cross"),
                                                     memory, cross_mask)))
            x = ag.add(x, self._drop(self._ffn(f"{p}.ffn", self._ln(x, f"{p}.ln_ffn"))))
            x = self._adapter("dec", k, x)
        x = self._ln(x, "decoder.ln_final")
        return ag.add(ag.matmul(x, ag.transpose(self.params["embed.tokens"], (1, 0))),
                      self.params["output_proj.bias"])

    def logits_batch(self, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        return self.decode_batch(self.encode_batch(src), src, tgt_in)


# ---------------------------------------------------------------------------
# batching helpers


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def seq2seq_loss(model: Seq2SeqModel, srcs: Sequence[Sequence[int]], tgts: Sequence[Sequence[int]]) -> Tensor:
    """Teacher-forced cross-entropy; each target is ``[lang, w1..wn, eos]``."""
    pad = model.config.pad_id
    src = pad_batch(srcs, pad)
    tgt = pad_batch(tgts, pad)
    logits = model.logits_batch(src, tgt[:, :-1])
    return ag.cross_entropy(logits, tgt[:, 1:], pad)


# ---------------------------------------------------------------------------
# public single-sequence operations


def _check_tokens(model: Seq2SeqModel, tokens: Sequence[int], what: str):
    if len(tokens) == 0:
        raise ContractError(f"{what} is empty")
    if len(tokens) > model.config.max_positions:
        raise ContractError(
            f"{what} has {len(tokens)} tokens, over max_positions={model.config.max_positions}; truncate first")


def encode(model: Seq2SeqModel, tokens: Sequence[int]) -> Tensor:
    _check_tokens(model, tokens, "source")
    states = model.encode_batch(np.asarray([tokens]))
    return ag.reshape(states, states.shape[1:])


def forward_logits(model: Seq2SeqModel, src_tokens: Sequence[int], tgt_tokens: Sequence[int]) -> Tensor:
    """Logits ``[len(tgt), vocab]``; row ``i`` predicts the token after ``tgt_tokens[i]``."""
    _check_tokens(model, src_tokens, "source")
    _check_tokens(model, tgt_tokens, "target")
    out = model.logits_batch(np.asarray([src_tokens]), np.asarray([tgt_tokens]))
    return ag.reshape(out, out.shape[1:])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def generate_batch(model: Seq2SeqModel, srcs: Sequence[Sequence[int]], gen: GenerationConfig,
                   tgt_lang: int | Sequence[int] | None = None) -> list[list[int]]:
    """Decode many sources at once.  Greedy is batched; beam runs per source."""
    if gen.max_length > model.config.max_positions:
        raise ContractError("max_length exceeds max_positions")
    if not len(srcs):
        return []
    for s in srcs:
        _check_tokens(model, s, "source")
    if tgt_lang is None:
        starts = [s[0] for s in srcs]
    elif np.ndim(tgt_lang) == 0:
        starts = [int(tgt_lang)] * len(srcs)
    else:
        starts = [int(t) for t in tgt_lang]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            if gen.strategy == "beam" and gen.beam_size > 1:
                return [_beam(model, s, start, gen) for s, start in zip(srcs, starts)]
            return _greedy(model, srcs, starts, gen)
    finally:
        model.train(was_training)


def generate(model: Seq2SeqModel, src_tokens: Sequence[int], gen: GenerationConfig,
             tgt_lang: int | None = None) -> list[int]:
    return generate_batch(model, [src_tokens], gen, tgt_lang)[0]


def _greedy(model, srcs, starts, gen) -> list[list[int]]:
    eos = model.config.eos_id
    src = pad_batch(srcs, model.config.pad_id)
    memory = model.encode_batch(src)
    out = [[s] for s in starts]
    done = np.zeros(len(srcs), dtype=bool)
    for _ in range(gen.max_length - 1):
        if done.all():
            break
        active = np.flatnonzero(~done)
        prefix = np.asarray([out[i] for i in active])
        logits = model.decode_batch(_take(memory, active), src[active], prefix).data[:, -1]
        nxt = logits.argmax(axis=-1)
        for i, tok in zip(active, nxt):
            out[i].append(int(tok))
            done[i] = tok == eos
    return out


def _take(t: Tensor, rows) -> Tensor:
    return Tensor(t.data[rows])


def _beam(model, src_tokens, start, gen) -> list[int]:
    eos = model.config.eos_id
    src = np.asarray([src_tokens])
    memory = model.encode_batch(src)
    beams = [([start], 0.0)]
    finished: list[tuple[list[int], float]] = []

    def normalized(tokens, logp):
        return logp / (max(len(tokens) - 1, 1) ** gen.length_penalty)

    while beams and len(beams[0][0]) < gen.max_length:
        prefix = np.asarray([b[0] for b in beams])
        n = len(beams)
        mem = Tensor(np.repeat(memory.data, n, axis=0))
        logp = _log_softmax(model.decode_batch(mem, np.repeat(src, n, axis=0), prefix).data[:, -1])
        totals = np.asarray([b[1] for b in beams])[:, None] + logp
        flat = totals.reshape(-1)
        order = np.argsort(-flat, kind="stable")[: gen.beam_size]
        V = logp.shape[1]
        nxt = []
        for idx in order:
            b, tok = divmod(int(idx), V)
            tokens = beams[b][0] + [tok]
            if tok == eos:
                finished.append((tokens, float(flat[idx])))
            else:
                nxt.append((tokens, float(flat[idx])))
        beams = nxt
        if len(finished) >= gen.beam_size:
            break
    pool = finished or beams
    best = max(pool, key=lambda b: normalized(*b)) if len(pool) > 1 else pool[0]
    return best[0]


def count_parameters(model: Seq2SeqModel, group_filter: str | Iterable[str] | None = None) -> int:
    if isinstance(group_filter, str):
        group_filter = [group_filter]
    return int(sum(model.params[p].size for p in model.paths(group_filter)))
