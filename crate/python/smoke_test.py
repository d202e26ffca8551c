"""Smoke test for the _replytopic extension.

Build and install the extension first:

    pip install maturin
    maturin develop -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import _replytopic as rt


def main():
    assert rt.tokenize("The router keeps dropping!") == ["router", "keeps", "dropping"]
    assert len(rt.segment_sentences("Hello there. Is it on? Yes.")) == 3
    assert math.isclose(rt.bhattacharyya([0.25] * 4, [1, 0, 0, 0]), 0.5, abs_tol=1e-12)
    assert rt.dominant_topic([0.5, 0.5]) == (0, False)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        corpus = tmp / "chain.jsonl"
        n = rt.synthesize("chain", str(corpus), seed=3, params='{"emails": 300, "topics": 6}')
        assert n == 300 and corpus.exists()

        out = tmp / "out"
        pipe = rt.Pipeline(str(out), corpus=str(corpus), topics=[6], sweeps=50)
        try:
            pipe.run("evaluate")
            raise AssertionError("evaluate must need earlier stages")
        except FileNotFoundError:
            pass
        stages = pipe.run_all()
        assert [s for s, _ in stages] == rt.STAGES
        assert all(o == "ran" for _, o in stages)
        assert all(o == "up_to_date" for _, o in pipe.run_all())

        summary = pipe.eval_summary()
        assert summary["config_hash"] == pipe.config_hash
        systems = {row["system"] for row in summary["t2"]["rows"]}
        assert {"uniform", "average", "proposed"} <= systems
        print("T2 rows:", [(r["system"], r.get("feature_set"), round(r["dta"]["1"], 3)) for r in summary["t2"]["rows"]])

        model = rt.TopicModel.load(str(pipe.model_path(6, "S")))
        tau = model.infer(rt.segment_sentences(corpus.read_text().splitlines()[0])[0])
        assert model.num_topics == 6 and math.isclose(sum(tau), 1.0, abs_tol=1e-9)
        assert len(model.top_words(0, 5)) == 5

        s = rt.Suggester.load(str(out))
        assert s.health()["status"] == "ok"
        reply = s.suggest_reply("My router keeps dropping the connection.", k=3)
        assert len(reply["topics"]) == 3
        nxt = s.suggest_next("My router keeps dropping.", ["Thanks for writing."], k=6)
        assert nxt["position"] == 1
        assert math.isclose(sum(t["probability"] for t in nxt["topics"]), 1.0, abs_tol=1e-9)
        assert len(s.topics("S")) == 6
        try:
            s.suggest_reply("", k=3)
            raise AssertionError("empty query must be rejected")
        except ValueError:
            pass
    print("smoke test passed")


if __name__ == "__main__":
    main()
