import json

import pytest

from mtconf.cli import main
from mtconf.annotator import ARROW, NO_ERRORS_SENTINEL


@pytest.fixture(scope="module")
def corpus_file(copy_corpus, tmp_path_factory):
    train_lines, _ = copy_corpus
    path = tmp_path_factory.mktemp("cli") / "corpus.tsv"
    path.write_text("\n".join(f"{line}\t{line}" for line in train_lines[:300]) + "\n")
    return path


@pytest.fixture(scope="module")
def trained_dir(corpus_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-checkpoint")
    code = main([
        "train", "--corpus", str(corpus_file), "--out", str(out),
        "--vocab-size", "250", "--epochs", "12", "--max-len", "48", "--lr", "3e-3",
        "--seed", "1",
    ])
    assert code == 0
    return out


def test_train_writes_checkpoint(trained_dir):
    assert (trained_dir / "weights.mtcf").exists()
    assert (trained_dir / "config.json").exists()
    assert (trained_dir / "subwords.json").exists()


def test_build_index_and_reload(trained_dir, copy_corpus, tmp_path):
    train_lines, _ = copy_corpus
    corpus_path = tmp_path / "mono.txt"
    corpus_path.write_text("\n".join(train_lines[:300]) + "\n")
    out = tmp_path / "index.mtcf"
    code = main(["build-index", "--corpus", str(corpus_path), "--checkpoint", str(trained_dir),
                 "--out", str(out), "--min-frequency", "5"])
    assert code == 0
    from mtconf.suggestions import SuggestionIndex

    index = SuggestionIndex.load(out)
    assert len(index) > 0


@pytest.fixture(scope="module")
def eval_inputs(copy_corpus, copy_words, tmp_path_factory):
    _, held = copy_corpus
    base = tmp_path_factory.mktemp("cli-eval")
    testset = base / "test.jsonl"
    entries = [{"source": line, "reference": line} for line in held[:4]]
    testset.write_text("\n".join(json.dumps(e) for e in entries) + "\n")

    # one scripted response per sentence: first flags the first source word,
    # the rest report no errors
    first_word = held[0].split()[0]
    responses = [f"{first_word} {ARROW} wrong {ARROW} right"]
    responses += [NO_ERRORS_SENTINEL] * 3
    mock = base / "mock.json"
    mock.write_text(json.dumps(responses))
    return testset, mock


def test_annotate_verb(trained_dir, eval_inputs, tmp_path):
    testset, mock = eval_inputs
    cache = tmp_path / "cache.jsonl"
    code = main(["annotate", "--testset", str(testset), "--checkpoint", str(trained_dir),
                 "--cache", str(cache), "--backend", "mock", "--mock-responses", str(mock)])
    assert code == 0
    assert cache.exists() and len(cache.read_text().splitlines()) == 4


def test_evaluate_and_curves(trained_dir, eval_inputs, tmp_path):
    testset, mock = eval_inputs
    cache = tmp_path / "cache.jsonl"
    out = tmp_path / "metrics"
    code = main(["evaluate", "--testset", str(testset), "--checkpoint", str(trained_dir),
                 "--cache", str(cache), "--backend", "mock", "--mock-responses", str(mock),
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"gradient", "attention"}
    assert len(list(out.glob("*.csv"))) == 4

    code = main(["curves", "--csv-dir", str(out)])
    assert code == 0
    assert (out / "pr_curves.png").exists()
    assert (out / "roc_curves.png").exists()


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--corpus"])  # missing value
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-verb"])
    assert exc.value.code == 1


def test_data_errors_exit_2(tmp_path):
    code = main(["train", "--corpus", str(tmp_path / "missing.tsv"),
                 "--out", str(tmp_path / "out")])
    assert code == 2

    bad = tmp_path / "bad.tsv"
    bad.write_text("only one column\n")
    code = main(["train", "--corpus", str(bad), "--out", str(tmp_path / "out")])
    assert code == 2


def test_curves_on_empty_dir_exits_2(tmp_path):
    assert main(["curves", "--csv-dir", str(tmp_path)]) == 2
