"""End-to-end command-line behavior via main(argv)."""

import csv
import io

import numpy as np
import pytest

from slimformer.budget import CompressionPlan, load_plan, save_plan
from slimformer.cli import main
from slimformer.model import TOY_CONFIG, init_model, load_model, save_model
from slimformer.tensor import load_bundle


@pytest.fixture()
def teacher_path(tmp_path):
    model = init_model(TOY_CONFIG, seed=0)
    base = tmp_path / "teacher"
    save_model(model, base)
    return str(base) + ".bundle"


def write_plan(tmp_path, **overrides):
    fields = dict(p_overall=0.4, p_embd=0.55, p_svd=0.45,
                  p_weight=0.831227, delta=0.7)
    fields.update(overrides)
    path = tmp_path / "plan.txt"
    save_plan(CompressionPlan(**fields), path)
    return str(path)


class TestPlan:
    def test_manual_fractions(self, tmp_path, teacher_path, capsys):
        out = tmp_path / "plan.txt"
        code = main(["plan", "--bundle", teacher_path, "--target", "0.4",
                     "--p-embd", "0.55", "--p-svd", "0.45",
                     "--out", str(out)])
        assert code == 0
        plan = load_plan(out)
        assert plan.p_weight == pytest.approx(0.831227, abs=1e-6)
        assert "achieved overall" in capsys.readouterr().out

    def test_search(self, tmp_path, teacher_path):
        out = tmp_path / "plan.txt"
        code = main(["plan", "--bundle", teacher_path, "--target", "0.4",
                     "--search", "8", "--seed", "3", "--out", str(out)])
        assert code == 0
        plan = load_plan(out)
        assert 0.15 <= plan.p_embd <= 1.0
        assert 0.3 <= plan.p_svd <= 0.6
        assert plan.seed == 3

    def test_needs_fractions_or_search(self, tmp_path, teacher_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["plan", "--bundle", teacher_path, "--target", "0.4",
                  "--out", str(tmp_path / "p.txt")])
        assert excinfo.value.code == 2

    def test_search_excludes_manual(self, tmp_path, teacher_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["plan", "--bundle", teacher_path, "--target", "0.4",
                  "--search", "4", "--p-embd", "0.5", "--p-svd", "0.4",
                  "--out", str(tmp_path / "p.txt")])
        assert excinfo.value.code == 2

    def test_infeasible_target(self, tmp_path, teacher_path, capsys):
        code = main(["plan", "--bundle", teacher_path, "--target", "0.004",
                     "--p-embd", "0.55", "--p-svd", "0.45",
                     "--out", str(tmp_path / "p.txt")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_bundle(self, tmp_path, capsys):
        code = main(["plan", "--bundle", str(tmp_path / "no.bundle"),
                     "--target", "0.4", "--p-embd", "0.55",
                     "--p-svd", "0.45", "--out", str(tmp_path / "p.txt")])
        assert code == 4


class TestCompress:
    def test_one_shot(self, tmp_path, teacher_path, capsys):
        plan = write_plan(tmp_path)
        out = tmp_path / "student"
        code = main(["compress", "--bundle", teacher_path, "--plan", plan,
                     "--one-shot", "--out", str(out)])
        assert code == 0
        student = load_model(out)
        assert student.retained_count() == 7899
        assert "retained 7899 of 19747" in capsys.readouterr().out

    def test_flag_required(self, tmp_path, teacher_path):
        plan = write_plan(tmp_path)
        with pytest.raises(SystemExit) as excinfo:
            main(["compress", "--bundle", teacher_path, "--plan", plan,
                  "--out", str(tmp_path / "s")])
        assert excinfo.value.code == 2

    def test_malformed_plan(self, tmp_path, teacher_path):
        bad = tmp_path / "plan.txt"
        bad.write_text("not a plan\n", encoding="ascii")
        code = main(["compress", "--bundle", teacher_path,
                     "--plan", str(bad), "--one-shot",
                     "--out", str(tmp_path / "s")])
        assert code == 4


class TestDistill:
    def test_end_to_end(self, tmp_path, teacher_path, capsys):
        plan = write_plan(tmp_path)
        out = tmp_path / "run"
        code = main(["distill", "--teacher", teacher_path, "--plan", plan,
                     "--task-seed", "1", "--out", str(out),
                     "--epochs", "1", "--teacher-epochs", "1"])
        assert code == 0
        student = load_model(out / "student")
        assert student.retained_count() == 7899
        rows = list(csv.reader(io.StringIO(
            (out / "curve.csv").read_text(encoding="ascii"))))
        assert rows[0][0] == "step"
        assert len(rows) > 1
        text = capsys.readouterr().out
        assert "retained fraction   0.4000" in text
        assert "teacher val accuracy" in text

    def test_divergence_exit_code(self, tmp_path, teacher_path, capsys):
        plan = write_plan(tmp_path)
        with np.errstate(all="ignore"):
            code = main(["distill", "--teacher", teacher_path,
                         "--plan", plan, "--task-seed", "1",
                         "--out", str(tmp_path / "run"),
                         "--epochs", "1", "--lr", "1e90"])
        assert code == 3
        assert "error:" in capsys.readouterr().err


class TestAnalyzeBias:
    def expected_cells(self, bundle_path):
        bundle = load_bundle(bundle_path)
        return sum(bundle.matrix(n).rows * bundle.matrix(n).cols
                   for n in bundle.names()
                   if bundle.matrix(n).rows > 1 and bundle.matrix(n).cols > 1)

    def test_stdout_histogram(self, teacher_path, capsys):
        code = main(["analyze", "bias", "--bundle", teacher_path,
                     "--mode", "hybrid", "--retain", "0.2"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows[0] == ["bin_left", "bin_right", "count"]
        assert rows[-1][0] == "stats"
        counted = sum(int(r[2]) for r in rows[1:-1])
        assert counted == self.expected_cells(teacher_path)

    def test_out_file_and_modes(self, tmp_path, teacher_path, capsys):
        for mode in ("prune", "svd"):
            out = tmp_path / f"{mode}.csv"
            code = main(["analyze", "bias", "--bundle", teacher_path,
                         "--mode", mode, "--retain", "0.2",
                         "--out", str(out)])
            assert code == 0
            assert out.exists()
        capsys.readouterr()

    def test_explicit_prune_fraction(self, teacher_path, capsys):
        code = main(["analyze", "bias", "--bundle", teacher_path,
                     "--mode", "hybrid", "--retain", "0.2",
                     "--prune-fraction", "0.4"])
        assert code == 0
        capsys.readouterr()

    def test_retain_out_of_range(self, teacher_path, capsys):
        code = main(["analyze", "bias", "--bundle", teacher_path,
                     "--mode", "prune", "--retain", "1.5"])
        assert code == 2
        capsys.readouterr()

    def test_bad_mode_is_usage_error(self, teacher_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "bias", "--bundle", teacher_path,
                  "--mode", "fold", "--retain", "0.2"])
        assert excinfo.value.code == 2


class TestCheck:
    def test_feasible(self, tmp_path, teacher_path, capsys):
        plan = write_plan(tmp_path)
        code = main(["check", "--bundle", teacher_path, "--plan", plan])
        assert code == 0
        text = capsys.readouterr().out
        assert "achieved overall" in text
        assert "total params        19747" in text

    def test_infeasible(self, tmp_path, teacher_path, capsys):
        plan = write_plan(tmp_path, p_overall=0.01, p_embd=0.9,
                          p_svd=0.9, p_weight=0.9)
        code = main(["check", "--bundle", teacher_path, "--plan", plan])
        assert code == 2
        assert "INFEASIBLE" in capsys.readouterr().out

    def test_missing_plan(self, tmp_path, teacher_path):
        code = main(["check", "--bundle", teacher_path,
                     "--plan", str(tmp_path / "no.txt")])
        assert code == 4
