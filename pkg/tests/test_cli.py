from __future__ import annotations

import json
import pytest

from elf_fixtures import STT_FUNC, build_elf
from evofind.cli import main


@pytest.fixture()
def pipeline_dirs(tmp_path):
    """Small corpus taken through synth -> align -> build-index."""
    corpus = tmp_path / "corpus"
    anchors = tmp_path / "anchors.csv"
    index = tmp_path / "index"
    assert main(["synth", "--out", str(corpus), "--seed", "3",
                 "--identities", "60", "--versions", "3",
                 "--arches", "arm,mips", "--layout-jitter", "0.1"]) == 0
    assert main(["align", "--corpus", str(corpus), "--out", str(anchors),
                 "--workers", "2"]) == 0
    assert main(["build-index", "--corpus", str(corpus), "--anchors",
                 str(anchors), "--cutoff", "1.2.0", "--out", str(index)]) == 0
    return corpus, anchors, index


def test_end_to_end_eval_and_report(pipeline_dirs, tmp_path, capsys):
    corpus, anchors, index = pipeline_dirs
    eval_dir = tmp_path / "eval"
    assert main(["eval", "--corpus", str(corpus), "--index", str(index),
                 "--out", str(eval_dir)]) == 0
    out = capsys.readouterr().out
    assert "hit@10=" in out
    summary = json.loads((eval_dir / "summary.json").read_text())
    assert set(summary["scorers"]) == {"evo", "shape", "size"}
    for name in ("evo", "shape", "size"):
        assert (eval_dir / f"pairs_{name}.csv").exists()
        s = summary["scorers"][name]
        assert 0.0 <= s["hit_at_10"] <= 1.0
        assert s["query_count"] > 0

    report_dir = tmp_path / "report"
    assert main(["report", "--eval", str(eval_dir), "--out", str(report_dir),
                 "--no-plot"]) == 0
    assert (report_dir / "summary.csv").exists()
    trend = (report_dir / "version_trend.csv").read_text().splitlines()
    assert trend[0] == "version,evo,shape,size"
    assert any(line.startswith("1.2.0,") for line in trend[1:])


def test_eval_is_idempotent(pipeline_dirs, tmp_path):
    corpus, anchors, index = pipeline_dirs
    eval_dir = tmp_path / "eval"
    main(["eval", "--corpus", str(corpus), "--index", str(index),
          "--out", str(eval_dir)])
    first = {p.name: p.read_bytes()
             for p in eval_dir.iterdir() if p.is_file()}
    main(["eval", "--corpus", str(corpus), "--index", str(index),
          "--out", str(eval_dir)])
    second = {p.name: p.read_bytes()
              for p in eval_dir.iterdir() if p.is_file()}
    assert first == second


def test_rebuild_index_idempotent(pipeline_dirs, tmp_path):
    corpus, anchors, index = pipeline_dirs
    again = tmp_path / "index2"
    assert main(["build-index", "--corpus", str(corpus), "--anchors",
                 str(anchors), "--cutoff", "1.2.0", "--out", str(again)]) == 0
    for path in sorted((tmp_path / "index").rglob("*")):
        if path.is_file():
            twin = again / path.relative_to(tmp_path / "index")
            assert twin.read_bytes() == path.read_bytes(), path.name


def test_eval_refuses_leaking_cutoff(pipeline_dirs, tmp_path, capsys):
    corpus, anchors, index = pipeline_dirs
    leaky = tmp_path / "leaky_index"
    assert main(["build-index", "--corpus", str(corpus), "--anchors",
                 str(anchors), "--cutoff", "9.0.0", "--out", str(leaky)]) == 0
    rc = main(["eval", "--corpus", str(corpus), "--index", str(leaky),
               "--out", str(tmp_path / "nope")])
    assert rc == 1
    err = capsys.readouterr().err
    record = json.loads(err.strip().splitlines()[-1])
    assert record["error"] == "LeakageError"


def test_query_identity_mode(pipeline_dirs, tmp_path):
    corpus, anchors, index = pipeline_dirs
    # pick an identity that is anchored in training
    anchor_rows = (tmp_path / "anchors.csv").read_text().splitlines()[1:]
    identity = next(row.split(",")[4] for row in anchor_rows
                    if row.startswith("1.0.0,"))
    evidence = tmp_path / "evidence.json"
    rc = main(["query", "--index", str(index), "--corpus", str(corpus),
               "--target", str(corpus / "exports" / "1.2.0__mips.json"),
               "--identity", identity, "--top", "10",
               "--out", str(evidence)])
    assert rc == 0
    doc = json.loads(evidence.read_text())
    assert doc["query"]["identity"] == identity
    assert doc["pool"]["size"] > 0
    assert len(doc["candidates"]) == 10
    ranks = [c["rank"] for c in doc["candidates"]]
    assert ranks == list(range(1, 11))
    scores = [c["score"] for c in doc["candidates"]]
    assert scores == sorted(scores, reverse=True)
    for c in doc["candidates"]:
        blended = 0.70 * c["geometry"] + 0.10 * c["fusion"] \
            + 0.20 * c["prototype"]
        assert abs(blended - c["score"]) < 1e-12


def test_query_reference_mode(pipeline_dirs, tmp_path):
    corpus, anchors, index = pipeline_dirs
    target = corpus / "exports" / "1.2.0__mips.json"
    source = corpus / "exports" / "1.2.0__arm.json"
    first_addr = json.loads(source.read_text())["functions"][0]["address"]
    rc = main(["query", "--index", str(index),
               "--target", str(target),
               "--reference-export", str(source),
               "--reference-address", first_addr,
               "--top", "5", "--out", str(tmp_path / "ev.json")])
    assert rc == 0
    doc = json.loads((tmp_path / "ev.json").read_text())
    assert doc["query"]["identity"] is None
    assert all(c["prototype"] == 0.0 for c in doc["candidates"])


def test_extract_symbols_and_ingest_validate(tmp_path, capsys):
    elf = tmp_path / "toy.elf"
    elf.write_bytes(build_elf([("main", 0x1000, 42, STT_FUNC),
                               ("_start", 0x800, 30, STT_FUNC)],
                              extra_sections=(".debug_info",)))
    out_dir = tmp_path / "syms"
    assert main(["extract-symbols", str(elf), "--out", str(out_dir)]) == 0
    text = (out_dir / "toy.sym").read_text()
    assert "main\t0x1000\t42" in text
    meta = json.loads((out_dir / "toy.meta.json").read_text())
    assert meta["n_debug_sections"] == 1
    assert meta["file_size_bytes"] == elf.stat().st_size

    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": "1"}')
    rc = main(["ingest", str(bad), "--corpus", str(tmp_path / "corpus")])
    assert rc == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "SchemaViolation"


def test_ingest_accepts_valid_export(pipeline_dirs, tmp_path):
    corpus, _, _ = pipeline_dirs
    source = corpus / "exports" / "1.0.0__arm.json"
    new_corpus = tmp_path / "fresh"
    assert main(["ingest", str(source), "--corpus", str(new_corpus)]) == 0
    copied = new_corpus / "exports" / "1.0.0__arm.json"
    assert copied.read_bytes() == source.read_bytes()


def test_patch_proxy_command(pipeline_dirs, tmp_path, capsys):
    corpus, _, _ = pipeline_dirs
    out = tmp_path / "proxy.csv"
    rc = main(["patch-proxy", "--corpus", str(corpus),
               "--boundary", "1.1.0", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("held_out_arch,")
    assert len(lines) == 2 + 2   # two arches + header + mean row


def test_synth_determinism_via_cli(tmp_path):
    args = ["synth", "--seed", "9", "--identities", "30", "--versions", "2",
            "--arches", "arm,mips"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for path in sorted(a.rglob("*")):
        if path.is_file():
            assert (b / path.relative_to(a)).read_bytes() == path.read_bytes()


def test_unknown_scorer_rejected(pipeline_dirs, tmp_path, capsys):
    corpus, _, index = pipeline_dirs
    rc = main(["eval", "--corpus", str(corpus), "--index", str(index),
               "--out", str(tmp_path / "x"), "--scorers", "magic"])
    assert rc == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "InvalidConfig"


def test_config_file_and_flag_override(pipeline_dirs, tmp_path):
    corpus, anchors, _ = pipeline_dirs
    from evofind.config import PipelineConfig

    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(PipelineConfig(window=32).to_json())
    out = tmp_path / "anchors2.csv"
    assert main(["align", "--corpus", str(corpus), "--out", str(out),
                 "--config", str(cfg_path), "--threshold", "0.05"]) == 0
    # tighter threshold accepts no more than the default run
    assert len(out.read_text().splitlines()) <= \
        len(anchors.read_text().splitlines())
