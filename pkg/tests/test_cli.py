import json

import pytest

from sgreason.cli import main


def run(args):
    return main([str(a) for a in args])


@pytest.fixture()
def dataset(tmp_path):
    data = tmp_path / "data.jsonl"
    code = run([
        "gen", "--out", data, "--seed", 5, "--scenes", 8, "--questions", 2,
        "--noise-sd", 2.0, "--flip-rate", 0.2,
        "--vocab-out", tmp_path / "vocab.json",
    ])
    assert code == 0
    return data


class TestGen:
    def test_writes_dataset_and_manifest(self, dataset, tmp_path):
        assert dataset.exists()
        manifest = json.loads((tmp_path / "data.jsonl.manifest.json").read_text())
        assert manifest["num_questions"] == len(dataset.read_text().splitlines())
        assert json.loads((tmp_path / "vocab.json").read_text())["objects"][1] == "person"

    def test_deterministic(self, dataset, tmp_path):
        other = tmp_path / "again.jsonl"
        run(["gen", "--out", other, "--seed", 5, "--scenes", 8, "--questions", 2,
             "--noise-sd", 2.0, "--flip-rate", 0.2])
        assert other.read_bytes() == dataset.read_bytes()


class TestValidate:
    def test_ok(self, dataset):
        assert run(["validate", "--data", dataset]) == 0

    def test_detects_corruption(self, dataset, tmp_path):
        lines = [json.loads(l) for l in dataset.read_text().splitlines()]
        lines[0]["program"]["answer"] = "definitely-wrong"
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        assert run(["validate", "--data", bad]) == 1

    def test_missing_file_is_usage_error(self, tmp_path):
        assert run(["validate", "--data", tmp_path / "nope.jsonl"]) == 2


class TestExec:
    def test_symbolic_is_perfect_on_gt(self, dataset, tmp_path):
        out = tmp_path / "traces.jsonl"
        assert run(["exec", "--data", dataset, "--mode", "symbolic", "--out", out]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(r["correct"] for r in rows)
        assert all(r["error"] is None for r in rows)

    def test_neural_emits_attention(self, dataset, tmp_path):
        out = tmp_path / "ntraces.jsonl"
        assert run(["exec", "--data", dataset, "--mode", "neural", "--out", out]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert all("attention" in r for r in rows)

    def test_jobs_identical(self, dataset, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(["exec", "--data", dataset, "--mode", "neural", "--out", a])
        run(["exec", "--data", dataset, "--mode", "neural", "--out", b, "--jobs", 3])
        assert a.read_bytes() == b.read_bytes()


class TestTrainDiagnoseReport:
    def test_pipeline(self, dataset, tmp_path):
        params = tmp_path / "params.json"
        curve = tmp_path / "curve.csv"
        assert run([
            "train", "--data", dataset, "--out", params,
            "--iterations", 20, "--curve", curve,
        ]) == 0
        assert json.loads(params.read_text())["alpha"] > 0
        assert len(curve.read_text().splitlines()) == 20

        report = tmp_path / "report.json"
        assert run([
            "diagnose", "--data", dataset, "--mode", "neural", "--params", params,
            "--perturb", "bg", "fg", "rand", "--format", "json", "--out", report,
        ]) == 0
        data = json.loads(report.read_text())
        assert set(data["robustness"]) == {"bg", "fg", "rand"}

        md = tmp_path / "report.md"
        assert run(["report", "--input", report, "--format", "markdown", "--out", md]) == 0
        assert "## Robustness" in md.read_text()

        csvp = tmp_path / "report.csv"
        assert run(["report", "--input", report, "--format", "csv", "--out", csvp]) == 0
        back = tmp_path / "back.json"
        assert run(["report", "--input", csvp, "--format", "json", "--out", back]) == 0
        assert json.loads(back.read_text()) == data

    def test_symbolic_randomize_is_an_error(self, dataset, tmp_path):
        code = run([
            "diagnose", "--data", dataset, "--mode", "symbolic",
            "--perturb", "rand", "--out", tmp_path / "r.json",
        ])
        assert code == 1
