"""Smoke test for the pyblendfilter extension module.

Build and run from the repository root:

    cargo build -p pyblendfilter --features extension-module
    cp target/debug/libpyblendfilter.so python/pyblendfilter.so
    python3 python/smoke_test.py

or install with `pip install --no-build-isolation ./crates/python` (maturin).
"""

import json
import pathlib
import sys
import tempfile

import pyblendfilter as bf

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOY = ROOT / "crates" / "core" / "tests" / "fixtures" / "toy"


def check_text_helpers():
    assert bf.tokenize("Hello, World-42!") == ["hello", "world", "42"]
    assert bf.normalize_answer("The  Eiffel Tower.") == "eiffel tower"
    assert bf.exact_match("the Eiffel Tower", ["Eiffel Tower"]) == 1.0
    assert abs(bf.token_f1("william crookes", ["Sir William Crookes"]) - 0.8) < 1e-12
    assert bf.aggregate_best_of_n(["x", "Jillian Belk", "y"], ["Jillian Belk"]) == (1.0, 1.0)
    assert bf.parse_kept_ids("knowledge 1 and knowledge 3 are relevant", 5) == ([1, 3], False)
    assert bf.parse_kept_ids("They all seem plausible.", 3) == ([0, 1, 2], True)
    assert bf.extract_yes_no("Yes, both are.") == "yes"
    assert bf.concat_query("ctx", "q?") == "ctx\nq?"
    scores = bf.retrieval_metrics(["A", "B"], ["A", "B"])
    assert scores == {"recall": 1.0, "precision": 1.0, "s_precision": 1.0}
    prompt = bf.render_prompt("hotpotqa_like", "internal_augment", {"question": "Who?"})
    assert "Who?" in prompt
    try:
        bf.parse_kept_ids("0", 0)
    except ValueError:
        pass
    else:
        raise AssertionError("m=0 accepted")


def check_index(tmp):
    idx = bf.Index.from_corpus(str(TOY / "corpus.jsonl"))
    assert len(idx) == 12
    hits = idx.search("Jillian Bell comedian", k=3)
    assert hits and hits[0]["rank"] == 0
    assert all(a["score"] >= b["score"] for a, b in zip(hits, hits[1:]))
    idx.save(str(tmp / "index"))
    again = bf.Index.load(str(tmp / "index"))
    assert again.search("Jillian Bell comedian", k=3) == hits
    small = bf.Index.from_documents([("a", "Alpha", "red cat"), ("b", "Beta", "blue dog")])
    assert [h["doc_id"] for h in small.search("cat")] == ["a"]


def check_pipeline(tmp):
    out = tmp / "records.jsonl"
    summary = bf.run(str(TOY / "config.json"), str(out))
    assert summary["ok"] == 4, summary
    report = bf.evaluate(str(out), str(TOY / "dataset.jsonl"))
    assert report["n"] == 4 and report["em"] == 1.0, report
    json.dumps(report)
    return report


def main():
    check_text_helpers()
    with tempfile.TemporaryDirectory() as d:
        tmp = pathlib.Path(d)
        check_index(tmp)
        report = check_pipeline(tmp)
    print(f"pyblendfilter {bf.__version__}: ok (toy EM {report['em']:.2f}, S-Precision {report['s_precision']:.2f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
