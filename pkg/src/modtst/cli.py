"""Command-line entry point: ``modtst <verb> [options]``.

Every verb accepts ``--seed``, ``--steps`` and ``--out-dir``.  Contract
violations print a one-line diagnostic to stderr and exit with status 2;
missing files exit with status 1.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .adapters import (AdapterSet, compose_adapters, extract_adapters, insert_adapters,
                       transplant_cross_attention)
from .corpus import DIRECTION_STYLES, DIRECTIONS
from .evaluation import (CopySystem, ModelSystem, RuleBasedSystem, direction_analysis, evaluate_direction,
                         format_analysis, format_table, reports_to_tsv)
from .exceptions import ContractError
from .experiments import (Budgets, ExperimentConfig, Pipeline, RunManifest, StageBudget, emit_report,
                          pretrain_host, resolve_variant, run_experiment)
from .synthetic import SyntheticTask, SyntheticTaskSpec, generate_synthetic_task
from .training import (NoiseSpec, TrainingConfig, finetune_supervised, heldout_denoising_loss, ibt_round,
                       train_language_adaptation, train_task_adaptation)
from .transformer import GenerationConfig, Seq2SeqModel

_DIRECTION_NAMES = {"i2f": "I→F", "f2i": "F→I", "I→F": "I→F", "F→I": "F→I"}


def _direction(value: str) -> str:
    try:
        return _DIRECTION_NAMES[value]
    except KeyError:
        raise argparse.ArgumentTypeError(f"direction must be one of i2f, f2i (got {value!r})") from None


def _common(p: argparse.ArgumentParser, steps_help: str = "training steps for this verb's stage"):
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--steps", type=int, default=None, help=steps_help)
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default: out)")


def _task_arg(p: argparse.ArgumentParser):
    p.add_argument("--task-dir", type=Path, default=None,
                   help="corpora written by gen-data (default: generate in memory from --seed)")


def _load_task(args) -> SyntheticTask:
    if args.task_dir is not None:
        if not (args.task_dir / "task.json").exists():
            raise FileNotFoundError(f"{args.task_dir}: no task.json (run gen-data first)")
        return SyntheticTask.load(args.task_dir)
    return generate_synthetic_task(SyntheticTaskSpec(), seed=args.seed)


def _train_cfg(args, stage: StageBudget, name: str) -> TrainingConfig:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    log = args.out_dir / f"{name}.jsonl"
    log.unlink(missing_ok=True)
    steps = args.steps if args.steps is not None else stage.steps
    lr = args.lr if getattr(args, "lr", None) is not None else stage.lr
    return TrainingConfig(lr=lr, batch_size=stage.batch_size, max_steps=steps, seed=args.seed, log_path=str(log))


def _load_model(path: Path) -> Seq2SeqModel:
    if not (path / "model.npz").exists():
        raise FileNotFoundError(f"{path}: no model.npz")
    return Seq2SeqModel.load(path)


# ---------------------------------------------------------------------------
# verbs


def cmd_gen_data(args) -> int:
    overrides = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = SyntheticTaskSpec(**overrides)
    task = generate_synthetic_task(spec, seed=args.seed)
    out = task.save(args.out_dir)
    tok = task.tokenizer
    print(f"wrote synthetic task to {out}")
    for name in ("aux_parallel", "pseudo_parallel", "style_informal", "style_formal", "generic", "host_corpus"):
        corpus = getattr(task, name)
        print(f"  {name:<16} {len(corpus):6d}")
    unknown = tok.count_unknown([e.sources[0] for es in task.eval_sets.values() for e in es.entries])
    print(f"  vocabulary       {tok.vocab_size:6d}  (unknown words in eval sources: {unknown})")
    return 0


def cmd_pretrain(args) -> int:
    task = _load_task(args)
    budget = Budgets().pretrain
    cfg = _train_cfg(args, budget, "pretrain")
    model = pretrain_host(task, replace(budget, steps=cfg.max_steps, lr=cfg.lr), args.seed, log_path=cfg.log_path)
    path = model.save(args.out_dir / "host")
    print(f"host checkpoint: {path}")
    return 0


def cmd_adapt_lang(args) -> int:
    task = _load_task(args)
    host = _load_model(args.host)
    tok = task.tokenizer
    corpora = {"generic": task.generic, "informal": task.style_informal, "formal": task.style_formal}
    cfg = _train_cfg(args, Budgets().language_adaptation, f"adapt-{args.corpus}")
    model = insert_adapters(host.copy(), AdapterSet.init(host, args.bottleneck, seed=args.seed))
    spec = NoiseSpec(args.mask_ratio, tok.mask_id)
    train_language_adaptation(model, corpora[args.corpus], cfg, spec, tok)
    language = task.spec.target_language
    adapters = extract_adapters(model, provenance=f"{language}:{args.corpus}", language=language)
    path = adapters.save(args.out_dir / f"adapters-{args.corpus}.npz")
    probe = NoiseSpec(args.mask_ratio, tok.mask_id, seed=7)
    before = heldout_denoising_loss(host, task.generic_dev, tok, probe)
    after = heldout_denoising_loss(model, task.generic_dev, tok, probe)
    print(f"adapters: {path}")
    print(f"held-out denoising loss: {before:.4f} -> {after:.4f} ({(before - after) / before:+.1%} reduction)")
    return 0


def cmd_adapt_task(args) -> int:
    task = _load_task(args)
    model = _load_model(args.host)
    if args.enc_adapters or args.dec_adapters:
        if not (args.enc_adapters and args.dec_adapters):
            raise ContractError("--enc-adapters and --dec-adapters must be given together")
        model = compose_adapters(model, AdapterSet.load(args.enc_adapters), AdapterSet.load(args.dec_adapters))
    if args.transplant_from:
        transplant_cross_attention(model, _load_model(args.transplant_from))
        print(f"transplanted cross-attention from {args.transplant_from}")
    else:
        wanted = DIRECTION_STYLES[args.direction]
        pairs = [p if p.direction == wanted else p.flipped() for p in task.aux_parallel]
        train_task_adaptation(model, pairs, _train_cfg(args, Budgets().task_adaptation, "adapt-task"),
                              task.tokenizer)
    print(f"model: {model.save(args.out_dir / 'model')}")
    return 0


def cmd_finetune(args) -> int:
    task = _load_task(args)
    model = _load_model(args.host)
    source = {"pseudo": task.pseudo_parallel, "aux": task.aux_parallel}[args.data]
    cfg = _train_cfg(args, Budgets().finetune, "finetune")
    if args.direction == "both":
        pairs = list(source) + [p.flipped() for p in source]
        mix = (list(task.aux_parallel) + [p.flipped() for p in task.aux_parallel]) if args.mix_aux else None
        finetune_supervised(model, pairs, cfg, None, task.tokenizer, mix=mix)
    else:
        direction = _direction(args.direction)
        wanted = DIRECTION_STYLES[direction]
        orient = lambda ps: [p if p.direction == wanted else p.flipped() for p in ps]
        mix = orient(task.aux_parallel) if args.mix_aux else None
        finetune_supervised(model, orient(source), cfg, wanted, task.tokenizer, mix=mix)
    print(f"model: {model.save(args.out_dir / 'model')}")
    return 0


def cmd_ibt(args) -> int:
    task = _load_task(args)
    fwd, bwd = _load_model(args.fwd), _load_model(args.bwd)
    cfg = _train_cfg(args, Budgets().ibt, "ibt")
    gen = GenerationConfig(max_length=args.max_length)
    for r in range(args.rounds):
        log_f, log_b = ibt_round(fwd, bwd, task.style_informal, task.style_formal, cfg.replace(seed=args.seed + r),
                                 task.tokenizer, gen, aux=task.aux_parallel if args.aux else None)
        print(f"round {r + 1}: skipped {log_f.skipped} (I→F) / {log_b.skipped} (F→I) empty generations")
    print(f"models: {fwd.save(args.out_dir / 'fwd')}, {bwd.save(args.out_dir / 'bwd')}")
    return 0


def cmd_eval(args) -> int:
    task = _load_task(args)
    config = ExperimentConfig("D4", "M4.1", seed=args.seed, out_dir=str(args.out_dir),
                              budgets=replace(Budgets(), judge_steps=args.steps or Budgets().judge_steps))
    pipe = Pipeline(config, task)
    clf, scorer = pipe.judges()
    language = task.spec.target_language
    gen = GenerationConfig(max_length=args.max_length)

    def system(path, direction):
        if args.system == "copy":
            return CopySystem()
        if args.system == "rule":
            return RuleBasedSystem(task.rules[language], direction)
        return ModelSystem(_load_model(path), task.tokenizer, language, direction, name=path.name, gen=gen,
                           direction_tag=args.tagged)

    if args.analysis:
        if args.bwd_model is None and args.system == "model":
            raise ContractError("--analysis needs --bwd-model for the F→I system")
        rows = direction_analysis(system(args.model, "I→F"), system(args.bwd_model or args.model, "F→I"),
                                  task.eval_sets, clf, scorer)
        text = format_analysis(rows)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "direction_analysis.txt").write_text(text + "\n", encoding="utf-8")
        print(text)
        return 0
    if args.system == "model" and args.model is None:
        raise ContractError("eval needs --model (or --system copy/rule)")
    reports = [evaluate_direction(system(args.model, d), task.eval_sets[d], clf, scorer) for d in args.direction]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "report.tsv").write_text(reports_to_tsv(reports), encoding="utf-8")
    (args.out_dir / "report.txt").write_text(format_table(reports) + "\n", encoding="utf-8")
    print(format_table(reports))
    return 0


def cmd_run(args) -> int:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        if not args.variant:
            raise ContractError("run needs --variant (or --config)")
        variant = resolve_variant(args.variant, args.naming)
        config = ExperimentConfig(args.regime or variant.regime, variant.id)
    budgets = config.budgets
    if args.steps is not None:
        budgets = budgets.with_steps(args.steps)
    if args.pretrain_steps is not None:
        budgets = replace(budgets, pretrain=replace(budgets.pretrain, steps=args.pretrain_steps))
    changes = dict(seed=args.seed, out_dir=str(args.out_dir), budgets=budgets)
    if args.task_dir is not None:
        changes["task_dir"] = str(args.task_dir)
    if args.cache_dir is not None:
        changes["cache_dir"] = str(args.cache_dir)
    if args.directions:
        changes["directions"] = tuple(args.directions)
    config = ExperimentConfig.from_dict({**config.to_dict(), **changes, "budgets": budgets})
    manifest = run_experiment(config)
    print(format_table(manifest.metrics))
    out = Path(manifest.report_paths["tsv"]).parent
    print(f"manifest: {out / 'manifest.json'}  ({manifest.wall_clock:.1f}s)")
    return 0


def cmd_report(args) -> int:
    paths = []
    for p in args.manifests:
        paths += sorted(p.glob("**/manifest.json")) if p.is_dir() else [p]
    if not paths:
        raise ContractError("no manifests found")
    _, table = emit_report([RunManifest.load(p) for p in paths])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modtst", description="Modular multilingual formality transfer (toy scale).")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic bilingual formality task")
    _common(p, "accepted for uniformity; generation has no training steps")
    p.add_argument("--spec", help="JSON file of SyntheticTaskSpec overrides")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="denoising-pretrain the multilingual host model")
    _common(p)
    _task_arg(p)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt-lang", help="train language adapters on a target-language corpus")
    _common(p)
    _task_arg(p)
    p.add_argument("--host", type=Path, required=True, help="host model directory")
    p.add_argument("--corpus", choices=("generic", "informal", "formal"), default="generic")
    p.add_argument("--bottleneck", type=int, default=None, help="adapter width (default: hidden/2)")
    p.add_argument("--mask-ratio", type=float, default=0.3)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_adapt_lang)

    p = sub.add_parser("adapt-task", help="train (or transplant) decoder cross-attention on auxiliary pairs")
    _common(p)
    _task_arg(p)
    p.add_argument("--host", type=Path, required=True)
    p.add_argument("--direction", type=_direction, default="I→F")
    p.add_argument("--enc-adapters", type=Path)
    p.add_argument("--dec-adapters", type=Path)
    p.add_argument("--transplant-from", type=Path, help="copy cross-attention from this model instead of training")
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_adapt_task)

    p = sub.add_parser("finetune", help="supervised fine-tuning of every parameter")
    _common(p)
    _task_arg(p)
    p.add_argument("--host", type=Path, required=True)
    p.add_argument("--data", choices=("pseudo", "aux"), default="pseudo")
    p.add_argument("--direction", choices=("i2f", "f2i", "I→F", "F→I", "both"), default="i2f")
    p.add_argument("--mix-aux", action="store_true", help="interleave auxiliary-language gold pairs")
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("ibt", help="iterative back-translation between two direction models")
    _common(p)
    _task_arg(p)
    p.add_argument("--fwd", type=Path, required=True, help="I→F model directory")
    p.add_argument("--bwd", type=Path, required=True, help="F→I model directory")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--aux", action="store_true", help="mix auxiliary-language pairs into each round")
    p.add_argument("--max-length", type=int, default=32)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_ibt)

    p = sub.add_parser("eval", help="BLEU / ACC / HM of a system on the target-language test sets")
    _common(p, "training steps for the style judges")
    _task_arg(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--bwd-model", type=Path, help="F→I model for --analysis")
    p.add_argument("--system", choices=("model", "copy", "rule"), default="model")
    p.add_argument("--direction", type=_direction, nargs="+", default=list(DIRECTIONS))
    p.add_argument("--tagged", action="store_true", help="model expects a target-style tag (one-model variants)")
    p.add_argument("--analysis", action="store_true", help="original vs swapped test sets, both directions")
    p.add_argument("--max-length", type=int, default=32)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full variant pipeline with manifest and reports")
    _common(p, "override every post-pretraining stage's step budget")
    _task_arg(p)
    p.add_argument("--variant", help="variant id, e.g. M2.4")
    p.add_argument("--regime", choices=("D1", "D2", "D3", "D4"), help="default: the variant's own regime")
    p.add_argument("--naming", choices=("appendix", "table1"), default="appendix",
                   help="which numbering --variant uses")
    p.add_argument("--config", type=Path, help="JSON ExperimentConfig")
    p.add_argument("--pretrain-steps", type=int, default=None)
    p.add_argument("--cache-dir", type=Path, default=None)
    p.add_argument("--directions", type=_direction, nargs="+")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="comparison table over run manifests")
    _common(p, "accepted for uniformity; reporting trains nothing")
    p.add_argument("manifests", type=Path, nargs="+", help="manifest files or run directories")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"modtst {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"modtst {args.verb}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
