import json
import re
import shutil
from importlib.resources import files
from pathlib import Path

import pytest

from simtrans.cli import build_parser, run

FIXTURE = Path(str(files("simtrans") / "fixtures" / "copy"))
SUBCOMMANDS = ["learn-bpe", "apply-bpe", "build-vocab", "preprocess", "train",
               "translate", "backtranslate", "score", "analyze"]


def subparsers():
    parser = build_parser()
    (action,) = [a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction"]
    return action.choices


def test_score_self_reference(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a b c d e\nf g h i j\n")
    assert run(["score", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "h.txt")]) == 0
    assert capsys.readouterr().out.startswith("BLEU = 100.00")


def test_score_json_and_closed_form(tmp_path, capsys):
    (tmp_path / "h").write_text("a b c d e f\n")
    (tmp_path / "r").write_text("a b c d e f g\n")
    assert run(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r"), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["score"] == pytest.approx(84.65, abs=0.01)


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "missing.cfg"
    assert run(["train", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand(capsys):
    assert run([]) == 1


def test_bad_flag(capsys):
    assert run(["score", "--hyp", "x"]) == 1


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "h").write_text("a\nb\n")
    (tmp_path / "r").write_text("a\n")
    assert run(["score", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == 2
    assert run(["score", "--hyp", str(tmp_path / "nope"), "--ref", str(tmp_path / "r")]) == 2


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_documents_every_flag(name, capsys):
    assert run([name, "--help"]) == 0
    text = capsys.readouterr().out
    for action in subparsers()[name]._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.dest != "help":
            assert action.help, f"{name} {action.option_strings} lacks help text"


def test_help_covers_every_attribute_read():
    """Every ``args.<name>`` read by a subcommand exists as a documented flag."""
    source = (Path(__file__).parents[1] / "src" / "simtrans" / "cli.py").read_text()
    read = set(re.findall(r"args\.([a-z_0-9]+)", source)) | set(
        re.findall(r'getattr\(args, "([a-z_]+)"\)', source))
    dests = {a.dest for p in subparsers().values() for a in p._actions}
    dests |= {a.dest for a in build_parser()._actions}
    for key in ("num_layers", "max_steps", "threads"):
        assert key in dests
    assert read - {"func"} <= dests


def test_bpe_and_vocab_commands_idempotent(tmp_path):
    out1, out2 = tmp_path / "1", tmp_path / "2"
    for out in (out1, out2):
        out.mkdir()
        assert run(["learn-bpe", "--input", str(FIXTURE / "train.src"), "--merges", "30",
                    "--output", str(out / "codes")]) == 0
        assert run(["apply-bpe", "--codes", str(out / "codes"), "--input", str(FIXTURE / "dev.src"),
                    "--output", str(out / "dev.bpe")]) == 0
        assert run(["build-vocab", "--input", str(out / "dev.bpe"), "--tag", "<2xx>",
                    "--output", str(out / "vocab")]) == 0
    for name in ("codes", "dev.bpe", "vocab"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    assert (out1 / "vocab").read_text().splitlines()[4] == "<2xx>\t4"


def test_preprocess_multilingual(tmp_path):
    for lang, lines in (("a", "uno dos\ntres\n"), ("b", "one two\nthree\n"), ("c", "un deux\ntrois\n")):
        (tmp_path / f"t.{lang}").write_text(lines)
    out = tmp_path / "prep"
    assert run(["preprocess", "--train", str(tmp_path / "t.a"), str(tmp_path / "t.b"),
                "--train", str(tmp_path / "t.a"), str(tmp_path / "t.c"),
                "--tag", "<2en>", "--tag", "<2fr>", "--merges", "5",
                "--output-dir", str(out)]) == 0
    src = (out / "train.src").read_text().splitlines()
    assert len(src) == 4
    assert src[0].startswith("<2en> ") and src[2].startswith("<2fr> ")
    vocab = (out / "vocab.txt").read_text().splitlines()
    assert vocab[4:6] == ["<2en>\t4", "<2fr>\t5"]


def test_analyze(tmp_path, capsys):
    for pair, a, b in (("aa-bb", "x y z", "x y w"), ("cc-dd", "x y z", "p q r")):
        d = tmp_path / pair
        d.mkdir()
        la, lb = pair.split("-")
        (d / f"train.{la}").write_text(a + "\n")
        (d / f"train.{lb}").write_text(b + "\n")
    res = tmp_path / "res.csv"
    res.write_text("pair,direction,family,bleu\naa-bb,aa-bb,bilingual,40\ncc-dd,cc-dd,bilingual,10\n")
    out = tmp_path / "out.csv"
    assert run(["analyze", "--results", str(res), "--corpora", str(tmp_path), "--output", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "bilingual,1.000000"
    assert out.read_text().splitlines()[0] == "pair,jaccard_x100,bleu,family"


@pytest.mark.slow
def test_full_pipeline_on_copy_fixture(tmp_path, capsys):
    work = tmp_path / "work"
    shutil.copytree(FIXTURE, work)
    w = lambda name: str(work / name)  # noqa: E731
    assert run(["learn-bpe", "--input", w("train.src"), w("train.tgt"), "--output", w("codes")]) == 0
    assert run(["preprocess", "--train", w("train.src"), w("train.tgt"), "--dev", w("dev.src"), w("dev.tgt"),
                "--codes", w("codes"), "--output-dir", w("data")]) == 0
    assert run(["train", "--config", w("desk.cfg"), "--data-dir", w("data"), "--output-dir", w("run")]) == 0
    assert run(["translate", "--checkpoint", w("run/checkpoint_best.bin"), "--vocab", w("data/vocab.txt"),
                "--codes", w("codes"), "--input", w("dev.src"), "--output", w("hyp.txt")]) == 0
    capsys.readouterr()
    assert run(["score", "--hyp", w("hyp.txt"), "--ref", w("dev.tgt"), "--json"]) == 0
    bleu = json.loads(capsys.readouterr().out)["score"]
    print(f"copy fixture pipeline BLEU {bleu:.2f}")
    assert bleu >= 95
