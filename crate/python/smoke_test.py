"""Smoke test for the fairaudit Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import json
import math
import tempfile
from pathlib import Path

import fairaudit


def main() -> None:
    assert fairaudit.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert fairaudit.ece([0.25, 0.75, 0.25, 0.75], [0, 1, 0, 1], 2) == 0.25

    erm = fairaudit.PredictionSet.from_profile("erm", seed=42)
    dro = fairaudit.PredictionSet.from_profile("dro", seed=42)
    assert len(erm) == len(dro) == 20644
    assert sum(g["total"] for g in erm.census().values()) == len(erm)

    gap = fairaudit.calib_gap(erm, "white")
    assert gap > 0.05, gap
    t = fairaudit.fit_temperature(dro)
    scaled = fairaudit.apply_temperature(dro, t)
    assert math.isclose(fairaudit.bpsn_auc(scaled, "white"), fairaudit.bpsn_auc(dro, "white"), abs_tol=1e-12)

    curve = fairaudit.risk_coverage(erm, [1.0, 0.7], ["white"])
    assert curve[1]["risk"] < curve[0]["risk"]

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "erm.jsonl"
        erm.save(str(path))
        again = fairaudit.PredictionSet.load(str(path), name="erm")
        assert again.p == erm.p

        report = fairaudit.audit([erm, dro], iterations=50, out=str(Path(tmp) / "rep"))
        assert (Path(tmp) / "rep" / "report.md").exists()
    assert [m["method"] for m in report["methods"]] == ["erm", "dro"]
    summary = {m["method"]: m["summary"] for m in report["methods"]}
    assert summary["dro"]["calibration"].startswith("uniform miscalibration"), summary
    assert fairaudit.render_markdown(json.dumps(report)).startswith("# Fairness audit")

    preds, info = fairaudit.train("dro", n=2000)
    assert len(preds) == 2000 and len(info["weights"]) == 5
    assert 0.0 <= info["average_error"] <= info["worst_group_error"] <= 1.0

    try:
        fairaudit.PredictionSet("m", ["a"], [1.5], [0])
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range probability accepted")

    print("fairaudit", fairaudit.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
