"""Experiment runner: data regimes D1-D4, the variant catalog, manifests and comparison reports.

Variant ids follow the appendix numbering (M2.1-M2.4); the main results
table uses M2.1-M2.3 for the last three of those.  :data:`TABLE1_ALIASES`
maps one onto the other.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapters import AdapterSet, compose_adapters, extract_adapters, insert_adapters, transplant_cross_attention
from .autograd import config_hash, file_digest
from .corpus import DIRECTION_STYLES, DIRECTIONS, ParallelPair
from .evaluation import (AnalysisRow, MetricsReport, ModelSystem, StyleClassifier, StyleScorer,
                         direction_analysis, evaluate_direction, format_table, reports_to_tsv,
                         train_style_classifier)
from .exceptions import ConfigError, ContractError
from .synthetic import SyntheticTask, SyntheticTaskSpec, generate_synthetic_task
from .training import (BatchSampler, NoiseSpec, TrainingConfig, denoising_batch_loss, finetune_supervised,
                       heldout_denoising_loss, ibt_round, run_training, train_language_adaptation,
                       train_task_adaptation)
from .transformer import GenerationConfig, ModelConfig, Seq2SeqModel

# ---------------------------------------------------------------------------
# regimes and the variant catalog

DATA_KINDS = ("aux_parallel", "pseudo_parallel", "target_parallel", "style_corpora", "generic")
PARALLEL_KINDS = frozenset({"aux_parallel", "pseudo_parallel", "target_parallel"})

REGIME_DATA = {
    "D1": frozenset({"aux_parallel", "pseudo_parallel", "style_corpora", "generic"}),
    "D2": frozenset({"aux_parallel", "style_corpora", "generic"}),
    "D3": frozenset({"aux_parallel", "generic"}),
    "D4": frozenset({"generic"}),
}

# (regime, forbidden data kinds, reason) per variant family
FAMILY_RULES = {
    "M1": ("D1", frozenset({"target_parallel"}), "M1.x trains on pseudo-parallel, not gold target-language pairs"),
    "M2": ("D2", frozenset({"target_parallel", "pseudo_parallel"}),
           "M2.x rejects target-language parallel inputs"),
    "M3": ("D3", frozenset({"target_parallel", "pseudo_parallel", "style_corpora"}),
           "M3.x forbids target-language style data"),
    "M4": ("D4", PARALLEL_KINDS, "M4.x forbids all parallel data"),
}


@dataclass(frozen=True)
class Variant:
    id: str
    title: str
    requires: frozenset

    @property
    def family(self) -> str:
        return self.id.split(".")[0]

    @property
    def regime(self) -> str:
        return FAMILY_RULES[self.family][0]


def _v(id, title, *requires):
    return Variant(id, title, frozenset(requires))


VARIANTS = {v.id: v for v in (
    _v("M1.1", "pseudo-parallel fine-tuning", "pseudo_parallel"),
    _v("M1.2", "M1.1 + EN data", "pseudo_parallel", "aux_parallel"),
    _v("M1.3", "all data (one model)", "pseudo_parallel", "aux_parallel"),
    _v("M2.1", "IBT training", "style_corpora"),
    _v("M2.2", "M2.1 + EN data", "style_corpora", "aux_parallel"),
    _v("M2.3", "ADAPT + EN cross-attn", "style_corpora", "aux_parallel"),
    _v("M2.4", "ADAPT + EN data", "style_corpora", "aux_parallel"),
    _v("M3.1", "EN data", "aux_parallel"),
    _v("M3.2", "ADAPT + EN cross-attn", "generic", "aux_parallel"),
    _v("M3.3", "ADAPT + EN data", "generic", "aux_parallel"),
    _v("M4.1", "original host", ),
    _v("M4.2", "ADAPT (generic data)", "generic"),
)}

# main-table id -> appendix id, where they differ
TABLE1_ALIASES = {"M2.1": "M2.2", "M2.2": "M2.3", "M2.3": "M2.4", "M4.2": "M4.2", "M4.3": "M4.2"}


def resolve_variant(variant_id: str, naming: str = "appendix") -> Variant:
    """Look up a variant; ``naming="table1"`` reads ids in the main-table numbering."""
    if naming == "table1":
        variant_id = TABLE1_ALIASES.get(variant_id, variant_id)
    elif naming != "appendix":
        raise ConfigError(f"unknown variant naming {naming!r}")
    if variant_id == "M4.3":
        variant_id = "M4.2"
    try:
        return VARIANTS[variant_id]
    except KeyError:
        raise ConfigError(f"unknown variant {variant_id!r}; known: {sorted(VARIANTS)}") from None


# ---------------------------------------------------------------------------
# budgets


@dataclass(frozen=True)
class StageBudget:
    steps: int
    lr: float
    batch_size: int = 16

    def training_config(self, seed: int, **extra) -> TrainingConfig:
        return TrainingConfig(lr=self.lr, batch_size=self.batch_size, max_steps=self.steps, seed=seed, **extra)


@dataclass(frozen=True)
class Budgets:
    """Per-stage step budgets scaled down for a single workstation core."""

    pretrain: StageBudget = StageBudget(3000, 1e-3)
    language_adaptation: StageBudget = StageBudget(1000, 1e-3)
    task_adaptation: StageBudget = StageBudget(300, 1e-4)
    finetune: StageBudget = StageBudget(300, 1e-4)
    ibt: StageBudget = StageBudget(300, 1e-4)
    judge_steps: int = 800

    def with_steps(self, steps: int) -> "Budgets":
        """Override every post-pretraining stage's step count."""
        return replace(self, **{name: replace(getattr(self, name), steps=steps)
                                for name in ("language_adaptation", "task_adaptation", "finetune", "ibt")})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Budgets":
        return cls(**{k: StageBudget(**v) if isinstance(v, dict) else v for k, v in d.items()})


# ---------------------------------------------------------------------------
# config + manifest


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str
    variant: str
    seed: int = 0
    directions: tuple = DIRECTIONS
    data: tuple | None = None          # defaults to everything the regime provides
    task_dir: str | None = None        # generated in memory when absent
    task_spec: dict = field(default_factory=dict)
    budgets: Budgets = field(default_factory=Budgets)
    out_dir: str = "runs"
    cache_dir: str | None = None
    mask_ratio: float = 0.3
    max_length: int = 32

    def __post_init__(self):
        if self.regime not in REGIME_DATA:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {sorted(REGIME_DATA)}")
        variant = resolve_variant(self.variant)
        object.__setattr__(self, "variant", variant.id)
        object.__setattr__(self, "directions", tuple(self.directions))
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ConfigError(f"unknown direction {d!r}")
        data = frozenset(self.data) if self.data is not None else REGIME_DATA[self.regime]
        unknown = data - set(DATA_KINDS)
        if unknown:
            raise ConfigError(f"unknown data kinds {sorted(unknown)}")
        object.__setattr__(self, "data", tuple(sorted(data)))
        regime, forbidden, reason = FAMILY_RULES[variant.family]
        if regime != self.regime:
            raise ConfigError(f"{variant.id} belongs to regime {regime}, not {self.regime}")
        if data & forbidden:
            raise ConfigError(f"{reason}; got {sorted(data & forbidden)}")
        missing = variant.requires - data
        if missing:
            raise ConfigError(f"{variant.id} requires {sorted(missing)}, not available under the given data")

    @property
    def variant_info(self) -> Variant:
        return VARIANTS[self.variant]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["directions"] = list(self.directions)
        d["data"] = list(self.data)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "budgets" in d and isinstance(d["budgets"], dict):
            d["budgets"] = Budgets.from_dict(d["budgets"])
        for key in ("directions", "data"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

    @property
    def cache_root(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out_dir) / "cache"


@dataclass
class RunManifest:
    config: dict
    seed: int
    provenance: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)       # name -> sha256 of model.npz
    reports: list = field(default_factory=list)           # MetricsReport dicts
    report_paths: dict = field(default_factory=dict)
    eval_digest: str = ""
    extras: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ContractError(f"{path}: not a run manifest ({exc})") from None

    @property
    def metrics(self) -> list[MetricsReport]:
        return [MetricsReport(**r) for r in self.reports]

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)


# ---------------------------------------------------------------------------
# shared stages (cached)


def load_task(config: ExperimentConfig) -> SyntheticTask:
    if config.task_dir:
        return SyntheticTask.load(config.task_dir)
    return generate_synthetic_task(SyntheticTaskSpec(**config.task_spec), seed=config.seed)


def eval_digest(task: SyntheticTask) -> str:
    return config_hash({d: es.to_dict() for d, es in sorted(task.eval_sets.items())})


class StageCache:
    """Content-addressed store for pretrained hosts and adapter sets.

    Keys hash everything that determines the artifact, so a hit returns
    exactly the arrays a rebuild would produce.
    """

    def __init__(self, root):
        self.root = Path(root)

    def model(self, key: dict, build: Callable[[], Seq2SeqModel]) -> Seq2SeqModel:
        path = self.root / f"{key['stage']}-{config_hash(key)}"
        if (path / "model.npz").exists():
            return Seq2SeqModel.load(path)
        model = build()
        model.save(path)
        return Seq2SeqModel.load(path)

    def adapters(self, key: dict, build: Callable[[], AdapterSet]) -> AdapterSet:
        path = self.root / f"{key['stage']}-{config_hash(key)}.npz"
        if path.exists():
            return AdapterSet.load(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        build().save(path)
        return AdapterSet.load(path)


def pretrain_host(task: SyntheticTask, budget: StageBudget, seed: int, mask_ratio: float = 0.3,
                  log_path=None) -> Seq2SeqModel:
    """Denoising pretraining of the multilingual host on the host corpus (all parameters)."""
    tok = task.tokenizer
    model = Seq2SeqModel(ModelConfig(vocab_size=tok.vocab_size), seed=seed)
    ids = [tok.tokenize(s.text, s.language) for s in task.host_corpus]
    rng = np.random.default_rng(seed)
    spec = NoiseSpec(mask_ratio, tok.mask_id)
    run_training(model, "full_finetune", BatchSampler(ids, budget.batch_size, rng),
                 lambda batch, r: denoising_batch_loss(model, batch, spec, r),
                 budget.training_config(seed, log_path=log_path), rng)
    model.provenance["host"] = f"denoising-pretrained:{budget.steps}"
    return model


def task_digest(task: SyntheticTask) -> str:
    """Content hash of every training corpus a stage can read."""
    mono = lambda c: [(s.text, s.language, s.style) for s in c]
    pairs = lambda c: [(p.source.text, p.target.text) for p in c]
    return config_hash({"host": mono(task.host_corpus), "generic": mono(task.generic),
                        "informal": mono(task.style_informal), "formal": mono(task.style_formal),
                        "aux": pairs(task.aux_parallel), "pseudo": pairs(task.pseudo_parallel),
                        "vocab": task.tokenizer.to_dict()})


class Pipeline:
    """Builds the pieces a variant needs, memoising within a run."""

    def __init__(self, config: ExperimentConfig, task: SyntheticTask | None = None, log_dir=None):
        self.config = config
        self.task = task or load_task(config)
        self.tokenizer = self.task.tokenizer
        self.language = self.task.spec.target_language
        self.cache = StageCache(config.cache_root)
        self.budgets = config.budgets
        self.seed = config.seed
        self.gen = GenerationConfig(max_length=config.max_length)
        self.noise = NoiseSpec(config.mask_ratio, self.tokenizer.mask_id)
        self.log_dir = Path(log_dir) if log_dir else None
        self._memo: dict = {}
        self.provenance: dict = {}
        self._digest = task_digest(self.task)

    def _log(self, name: str):
        if self.log_dir is None:
            return None
        self.log_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_dir / f"{name}.jsonl"
        path.unlink(missing_ok=True)
        return str(path)

    def _once(self, key, build):
        if key not in self._memo:
            self._memo[key] = build()
        return self._memo[key]

    # -- components -----------------------------------------------------

    def host(self) -> Seq2SeqModel:
        def build():
            key = {"stage": "host", "task": self._digest, "seed": self.seed,
                   "budget": asdict(self.budgets.pretrain), "mask": self.config.mask_ratio}
            return self.cache.model(key, lambda: pretrain_host(self.task, self.budgets.pretrain, self.seed,
                                                               self.config.mask_ratio, self._log("pretrain")))
        return self._once("host", build)

    def language_adapters(self, corpus_name: str) -> AdapterSet:
        """Adapters trained by denoising on one target-language corpus: generic, informal or formal."""
        corpora = {"generic": self.task.generic, "informal": self.task.style_informal,
                   "formal": self.task.style_formal}
        if corpus_name not in corpora:
            raise ContractError(f"unknown adaptation corpus {corpus_name!r}")

        def build_set():
            host = self.host()
            model = insert_adapters(host.copy(), AdapterSet.init(host, seed=self.seed))
            cfg = self.budgets.language_adaptation.training_config(self.seed + 11,
                                                                   log_path=self._log(f"adapt-{corpus_name}"))
            train_language_adaptation(model, corpora[corpus_name], cfg, self.noise, self.tokenizer)
            return extract_adapters(model, provenance=f"{self.language}:{corpus_name}", language=self.language)

        def build():
            key = {"stage": f"adapters-{corpus_name}", "task": self._digest, "seed": self.seed,
                   "pretrain": asdict(self.budgets.pretrain),
                   "budget": asdict(self.budgets.language_adaptation), "mask": self.config.mask_ratio}
            return self.cache.adapters(key, build_set)
        return self._once(("adapters", corpus_name), build)

    def aux_pairs(self, direction: str) -> list[ParallelPair]:
        wanted = DIRECTION_STYLES[direction]
        return [p if p.direction == wanted else p.flipped() for p in self.task.aux_parallel]

    def pseudo_pairs(self, direction: str) -> list[ParallelPair]:
        wanted = DIRECTION_STYLES[direction]
        return [p if p.direction == wanted else p.flipped() for p in self.task.pseudo_parallel]

    def en_task_model(self, direction: str) -> Seq2SeqModel:
        """The auxiliary-language model: host with cross-attention trained on auxiliary pairs."""
        def build():
            model = self.host().copy()
            cfg = self.budgets.task_adaptation.training_config(self.seed + 21, log_path=self._log(
                f"en-task-{_slug(direction)}"))
            train_task_adaptation(model, self.aux_pairs(direction), cfg, self.tokenizer)
            return model
        return self._once(("en_task", direction), build)

    def composed(self, direction: str, setting: str) -> Seq2SeqModel:
        """Host plus language adapters: ``style`` uses source-style encoder / target-style
        decoder adapters, ``generic`` uses the generic set on both sides."""
        if setting == "style":
            src, tgt = DIRECTION_STYLES[direction]
            enc, dec = self.language_adapters(src), self.language_adapters(tgt)
        else:
            enc = dec = self.language_adapters("generic")
        return compose_adapters(self.host(), enc, dec)

    def ibt_models(self, with_aux: bool) -> dict[str, Seq2SeqModel]:
        def build():
            fwd, bwd = self.host().copy(), self.host().copy()
            cfg = self.budgets.ibt.training_config(self.seed + 31)
            log_f, log_b = ibt_round(fwd, bwd, self.task.style_informal, self.task.style_formal, cfg,
                                     self.tokenizer, self.gen, aux=self.task.aux_parallel if with_aux else None)
            self.provenance["ibt_skipped"] = {"I→F": log_f.skipped, "F→I": log_b.skipped}
            return {"I→F": fwd, "F→I": bwd}
        return self._once(("ibt", with_aux), build)

    def judges(self) -> tuple[StyleClassifier, StyleScorer]:
        def build():
            clf = train_style_classifier(self.task.pseudo_parallel, seed=self.seed, tokenizer=self.tokenizer,
                                         steps=self.budgets.judge_steps)
            scorer = StyleScorer(tokenizer=self.tokenizer, seed=self.seed, steps=self.budgets.judge_steps)
            scorer.fit([s.text for s in self.task.scorer_train], [s.score for s in self.task.scorer_train])
            self.provenance["classifier_heldout_accuracy"] = clf.heldout_accuracy_
            return clf, scorer
        return self._once("judges", build)

    # -- variants -------------------------------------------------------

    def build(self, variant: str, direction: str) -> ModelSystem:
        """The trained system for one variant and direction."""
        tok, lang = self.tokenizer, self.language
        src, tgt = DIRECTION_STYLES[direction]
        tagged = False
        log = self._log(f"{variant}-{_slug(direction)}")
        ft_cfg = self.budgets.finetune.training_config(self.seed + 41, log_path=log)
        ta_cfg = self.budgets.task_adaptation.training_config(self.seed + 51, log_path=log)

        if variant in ("M1.1", "M1.2"):
            model = self.host().copy()
            mix = self.aux_pairs(direction) if variant == "M1.2" else None
            finetune_supervised(model, self.pseudo_pairs(direction), ft_cfg, (src, tgt), tok, mix=mix)
        elif variant == "M1.3":
            def both():
                m = self.host().copy()
                pseudo = self.pseudo_pairs("I→F") + self.pseudo_pairs("F→I")
                aux = self.aux_pairs("I→F") + self.aux_pairs("F→I")
                finetune_supervised(m, pseudo, ft_cfg, None, tok, mix=aux)
                return m
            model, tagged = self._once("M1.3", both), True
        elif variant in ("M2.1", "M2.2"):
            model = self.ibt_models(with_aux=variant == "M2.2")[direction]
        elif variant in ("M2.3", "M3.2"):
            model = self.composed(direction, "style" if variant == "M2.3" else "generic")
            transplant_cross_attention(model, self.en_task_model(direction))
        elif variant in ("M2.4", "M3.3"):
            model = self.composed(direction, "style" if variant == "M2.4" else "generic")
            train_task_adaptation(model, self.aux_pairs(direction), ta_cfg, tok)
        elif variant == "M3.1":
            model = self.host().copy()
            finetune_supervised(model, self.aux_pairs(direction), ft_cfg, (src, tgt), tok)
        elif variant == "M4.1":
            model = self.host()
        elif variant == "M4.2":
            model = self.composed(direction, "generic")
        else:
            raise ConfigError(f"no recipe for variant {variant!r}")
        return ModelSystem(model, tok, lang, direction, name=f"{variant}: {VARIANTS[variant].title}",
                           gen=self.gen, direction_tag=tagged)

    def language_adaptation_gain(self) -> dict:
        """Held-out denoising loss on generic target-language text, before and after generic adapters."""
        host = self.host()
        adapted = compose_adapters(host, self.language_adapters("generic"), self.language_adapters("generic"))
        dev = self.task.generic_dev
        before = heldout_denoising_loss(host, dev, self.tokenizer, NoiseSpec(self.config.mask_ratio,
                                                                             self.tokenizer.mask_id, seed=7))
        after = heldout_denoising_loss(adapted, dev, self.tokenizer, NoiseSpec(self.config.mask_ratio,
                                                                               self.tokenizer.mask_id, seed=7))
        return {"before": before, "after": after, "reduction": (before - after) / before}


def _slug(direction: str) -> str:
    return {"I→F": "i2f", "F→I": "f2i"}[direction]


# ---------------------------------------------------------------------------
# runs


def run_experiment(config: ExperimentConfig, task: SyntheticTask | None = None) -> RunManifest:
    """Train the variant for each requested direction, evaluate, write checkpoints, reports and manifest."""
    start = time.perf_counter()
    out = Path(config.out_dir) / f"{config.variant}-seed{config.seed}"
    pipe = Pipeline(config, task, log_dir=out / "logs")
    clf, scorer = pipe.judges()
    manifest = RunManifest(config=config.to_dict(), seed=config.seed, eval_digest=eval_digest(pipe.task))
    reports = []
    for direction in config.directions:
        system = pipe.build(config.variant, direction)
        report = evaluate_direction(system, pipe.task.eval_sets[direction], clf, scorer)
        reports.append(report)
        ckpt = system.model.save(out / "checkpoints" / _slug(direction))
        manifest.checkpoints[f"{config.variant}/{direction}"] = file_digest(ckpt)
        manifest.provenance[direction] = dict(sorted(system.model.provenance.items()))
    host_ckpt = pipe.host().save(out / "checkpoints" / "host")
    manifest.checkpoints["host"] = file_digest(host_ckpt)
    manifest.provenance.update({k: v for k, v in pipe.provenance.items()})
    manifest.reports = [r.to_dict() for r in reports]
    (out / "report.tsv").write_text(reports_to_tsv(reports), encoding="utf-8")
    (out / "report.txt").write_text(format_table(reports) + "\n", encoding="utf-8")
    manifest.report_paths = {"tsv": str(out / "report.tsv"), "table": str(out / "report.txt")}
    manifest.wall_clock = time.perf_counter() - start
    manifest.save(out / "manifest.json")
    return manifest


def rerun(manifest: RunManifest) -> RunManifest:
    """Re-execute a manifest's experiment from its config snapshot."""
    return run_experiment(manifest.experiment_config())


def run_direction_analysis(config: ExperimentConfig, task: SyntheticTask | None = None) -> list[AnalysisRow]:
    pipe = Pipeline(config, task)
    clf, scorer = pipe.judges()
    fwd = pipe.build(config.variant, "I→F")
    bwd = pipe.build(config.variant, "F→I")
    return direction_analysis(fwd, bwd, pipe.task.eval_sets, clf, scorer)


# ---------------------------------------------------------------------------
# comparison report


@dataclass(frozen=True)
class ReportRow:
    regime: str
    variant: str
    seed: int
    report: MetricsReport
    best: bool = False


def emit_report(manifests: Sequence[RunManifest]) -> tuple[list[ReportRow], str]:
    """One row per (manifest, direction); the highest HM within each (direction, regime) block is starred."""
    if not manifests:
        raise ContractError("emit_report needs at least one manifest")
    digests = {m.eval_digest for m in manifests}
    if len(digests) != 1:
        raise ContractError("manifests were evaluated on different eval sets")
    rows = []
    for m in manifests:
        for r in m.metrics:
            if abs(r.hm - 2 * r.acc * r.bleu / (r.acc + r.bleu or 1.0)) > 1e-9:
                raise ContractError(f"{r.system}: stored HM disagrees with BLEU/ACC")
            rows.append(ReportRow(m.config["regime"], m.config["variant"], m.seed, r))
    top: dict = {}
    for row in rows:
        block = (row.report.direction, row.regime)
        top[block] = max(top.get(block, -1.0), row.report.hm)
    rows = [replace(row, best=row.report.hm == top[(row.report.direction, row.regime)]) for row in rows]
    order = sorted(range(len(rows)), key=lambda i: (DIRECTIONS.index(rows[i].report.direction),
                                                     rows[i].regime, rows[i].variant, rows[i].seed))
    rows = [rows[i] for i in order]
    header = f"{'dir':<4} {'regime':<6} {'system':<34} {'seed':>4} {'BLEU':>7} {'ACC':>7} {'HM':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        r = row.report
        mark = "*" if row.best else " "
        lines.append(f"{r.direction:<4} {row.regime:<6} {r.system:<34} {row.seed:>4} {r.bleu:7.3f} "
                     f"{r.acc:7.3f} {r.hm:7.3f}{mark}")
    lines.append("* best HM in its (direction, regime) block")
    return rows, "\n".join(lines)
