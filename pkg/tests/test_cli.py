import json

import pytest

from modtst.cli import build_parser, main

TINY_SPEC = dict(n_aux_parallel=40, n_pseudo_parallel=40, n_style_raw=60, n_generic=40, n_generic_dev=10,
                 n_host_aux=60, n_host_target=10, n_eval=4)
VERBS = ("gen-data", "pretrain", "adapt-lang", "adapt-task", "finetune", "ibt", "eval", "run", "report")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(TINY_SPEC))
    assert main(["gen-data", "--spec", str(root / "spec.json"), "--out-dir", str(root / "task")]) == 0
    assert main(["pretrain", "--task-dir", str(root / "task"), "--steps", "3", "--out-dir", str(root)]) == 0
    return root


def common(ws, out):
    return ["--task-dir", str(ws / "task"), "--steps", "2", "--seed", "1", "--out-dir", str(ws / out)]


@pytest.mark.parametrize("verb", VERBS)
def test_every_verb_takes_the_shared_options(verb):
    parser = build_parser()
    action = next(a for a in parser._actions if a.dest == "verb")
    options = {s for a in action.choices[verb]._actions for s in a.option_strings}
    assert {"--seed", "--steps", "--out-dir"} <= options


def test_gen_data_writes_corpora(workspace):
    for name in ("task.json", "aux_parallel.tsv", "style_informal.txt", "eval_i2f.json", "vocab.json"):
        assert (workspace / "task" / name).exists()


def test_training_verbs(workspace, capsys):
    ws, host = workspace, str(workspace / "host")
    assert main(["adapt-lang", "--host", host, "--corpus", "informal"] + common(ws, "lang")) == 0
    assert main(["adapt-lang", "--host", host, "--corpus", "formal"] + common(ws, "lang")) == 0
    assert "reduction" in capsys.readouterr().out
    lang = ws / "lang"
    assert main(["adapt-task", "--host", host, "--enc-adapters", str(lang / "adapters-informal.npz"),
                 "--dec-adapters", str(lang / "adapters-formal.npz")] + common(ws, "task-ad")) == 0
    assert main(["adapt-task", "--host", host, "--transplant-from", str(ws / "task-ad" / "model")]
                + common(ws, "transplant")) == 0
    assert main(["finetune", "--host", host, "--data", "pseudo", "--mix-aux"] + common(ws, "ft")) == 0
    assert main(["finetune", "--host", host, "--direction", "both"] + common(ws, "ft-both")) == 0
    assert main(["ibt", "--fwd", host, "--bwd", host, "--aux", "--max-length", "8"] + common(ws, "ibt")) == 0
    assert (ws / "ibt" / "fwd" / "model.npz").exists()
    assert (ws / "ft" / "finetune.jsonl").read_text().strip()


def test_eval_verb(workspace, capsys):
    ws = workspace
    assert main(["eval", "--system", "copy"] + common(ws, "eval-copy")) == 0
    assert "INPUT" in (ws / "eval-copy" / "report.txt").read_text()
    assert main(["eval", "--model", str(ws / "host"), "--direction", "i2f", "--max-length", "8"]
                + common(ws, "eval-model")) == 0
    assert main(["eval", "--system", "rule", "--analysis"] + common(ws, "eval-rule")) == 0
    assert len((ws / "eval-rule" / "direction_analysis.txt").read_text().splitlines()) == 9


def test_run_and_report(workspace, capsys):
    ws = workspace
    for variant in ("M4.1", "M2.3"):
        argv = ["run", "--variant", variant, "--naming", "table1", "--pretrain-steps", "3", "--directions", "i2f",
                "--cache-dir", str(ws / "cache")] + common(ws, "runs")
        assert main(argv) == 0
    manifest = json.loads((ws / "runs" / "M2.4-seed1" / "manifest.json").read_text())
    assert manifest["config"]["variant"] == "M2.4" and manifest["seed"] == 1
    assert main(["report", str(ws / "runs"), "--out-dir", str(ws / "cmp")]) == 0
    table = (ws / "cmp" / "comparison.txt").read_text()
    assert "M4.1" in table and "M2.4" in table


def test_error_exit_codes(workspace, capsys):
    ws = workspace
    assert main(["adapt-lang", "--host", str(ws / "missing")] + common(ws, "x")) == 1
    assert main(["run", "--variant", "M9.9"] + common(ws, "x")) == 2
    assert main(["run", "--variant", "M2.4", "--regime", "D3"] + common(ws, "x")) == 2
    assert "belongs to regime D2" in capsys.readouterr().err
    assert main(["report", str(ws / "nothing-here")]) == 1
    (ws / "empty").mkdir()
    assert main(["report", str(ws / "empty")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "--direction", "sideways", "--host", "h"])
    assert exc.value.code == 2
