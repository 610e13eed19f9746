import json

import pytest

from tooldraft.cli import check_adherence_file, main, run_bench
from tooldraft.corpus import CorpusError, gen_corpus, read_corpus, write_corpus


@pytest.fixture()
def files(tmp_path):
    doc, records = gen_corpus(3, 4, seed=1)
    corpus = tmp_path / "corpus.jsonl"
    schema = tmp_path / "schema.json"
    write_corpus(records, corpus)
    schema.write_text(json.dumps(doc))
    return schema, corpus, tmp_path


def test_gen_corpus_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen-corpus", "--tools", "2", "--reps", "3", "--out", str(a), "--schema-out", str(tmp_path / "s.json")]) == 0
    assert main(["gen-corpus", "--tools", "2", "--reps", "3", "--out", str(b), "--schema-out", str(tmp_path / "s2.json")]) == 0
    assert a.read_text() == b.read_text()
    assert len(read_corpus(a)) == 6


def test_read_corpus_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"session_id": "s", "turn": 0, "query": "q", "gold": null}\nnot json\n')
    with pytest.raises(CorpusError) as err:
        read_corpus(p)
    assert str(err.value).startswith(f"{p}:2:")


def test_bench_writes_report(files, capsys):
    schema, corpus, tmp = files
    out = tmp / "report.json"
    rc = main(["bench", "--schema", str(schema), "--corpus", str(corpus), "--ablate", "all",
               "--dump-trees", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["format_version"] == 1
    assert set(report["configs"]) == {"vanilla", "full", "w/o SAD", "w/o RAS", "w/o both"}
    assert report["configs"]["vanilla"]["mat"] == 1.0
    assert all(v == 1.0 for v in report["exact_match"].values())
    assert out.with_suffix(".txt").exists() and out.with_suffix(".trees.txt").exists()
    steps = [json.loads(x) for x in out.with_suffix(".steps.jsonl").read_text().splitlines()]
    assert {s["config"] for s in steps} == {"full", "w/o SAD", "w/o RAS", "w/o both"}
    assert "#MAT" in capsys.readouterr().out


def test_bench_ngram_sampled(files):
    schema, corpus, tmp = files
    texts = tmp / "lines.txt"
    records = read_corpus(corpus)
    texts.write_text("\n".join(r.query + " " + r.gold for r in records))
    report, lossless = run_bench(str(schema), str(corpus), f"ngram:{texts}", mode="sampled", seed=3,
                                 ablate="no-ras", max_tokens=40)
    assert lossless
    assert set(report["configs"]) == {"vanilla", "full", "w/o RAS"}


def test_bench_missing_file_exit_code(files, capsys):
    schema, _, tmp = files
    assert main(["bench", "--schema", str(schema), "--corpus", str(tmp / "none.jsonl")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bench_bad_list_flag(files):
    schema, corpus, _ = files
    with pytest.raises(SystemExit):
        main(["bench", "--schema", str(schema), "--corpus", str(corpus), "--cont-lens", "a,b"])


def test_check_adherence(tmp_path, capsys):
    p = tmp_path / "outs.txt"
    p.write_text('{"name": "A", "parameters": {}}\nSure! {"name": "A", "parameters": {}}\n')
    assert main(["check-adherence", str(p)]) == 0
    text = capsys.readouterr().out
    assert "extraneous_text" in text and "adherence rate: 0.5000 (1/2)" in text


def test_report_is_reproducible_and_mat_matches_step_log(files):
    schema, corpus, tmp = files
    a, b = tmp / "a.json", tmp / "b.json"
    for out in (a, b):
        assert main(["bench", "--schema", str(schema), "--corpus", str(corpus), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    steps = [json.loads(x) for x in a.with_suffix(".steps.jsonl").read_text().splitlines()]
    full = [s for s in steps if s["config"] == "full"]
    assert report["configs"]["full"]["mat"] == round(sum(s["emitted"] for s in full) / len(full), 6)


def test_adherence_rate_matches_independent_parse(tmp_path):
    lines = ['{"name": "A", "parameters": {"x": 1}}', '```json\n', '{"name": "B", "parameters": {}} ok',
             '{"name": "C", "parameters": {"q": "a, }"}}', "plain text"]
    p = tmp_path / "outs.txt"
    p.write_text("\n".join(lines) + "\n")

    def oracle(line):
        try:
            obj = json.loads(line)
        except ValueError:
            return False
        return isinstance(obj, dict) and set(obj) == {"name", "parameters"} and isinstance(obj["parameters"], dict)

    summary = check_adherence_file(p)
    assert summary["rate"] == sum(map(oracle, p.read_text().splitlines())) / summary["total"]
