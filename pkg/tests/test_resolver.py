from __future__ import annotations

import textwrap
from pathlib import Path

import pytest

from conftest import offline_config, write_python_project
from reproaudit import envmgr
from reproaudit.classifier import ErrorCategory
from reproaudit.manifest import ClaimedDeps, PackageRef, ProjectUnderTest, parse_requirements
from reproaudit.resolver import (
    LayerViolation,
    PatchFailed,
    PatchLedger,
    WorkingDeps,
    apply_unified_diff,
    completeness_gap,
    make_patch,
    resolve,
)


@pytest.fixture
def config(tmp_path, py_mirror):
    return offline_config(tmp_path / "home", py_mirror=py_mirror)


def make_project(root: Path, requirements: str, main_body: str) -> tuple[ProjectUnderTest, ClaimedDeps]:
    write_python_project(root, requirements=requirements,
                         files={"main.py": textwrap.dedent(main_body)})
    claimed = parse_requirements(requirements.encode(), root / "requirements.txt")
    project = ProjectUnderTest(root=root, ecosystem="python",
                               manifest_path=root / "requirements.txt")
    return project, claimed


def run_resolve(config, project, claimed, patches=None):
    env = envmgr.create_isolated_env("python", config)
    try:
        return resolve(env, project, claimed, patches, config)
    finally:
        envmgr.destroy(env)


class TestResolve:
    def test_no_gap_project_is_out_of_box(self, config, tmp_path):
        project, claimed = make_project(
            tmp_path / "p", "leafpkg\n", "import leafpkg\nprint(leafpkg.VALUE)\n"
        )
        working, trace = run_resolve(config, project, claimed)
        assert trace.out_of_box is True
        assert trace.final_status == "Success"
        assert len(trace.iterations) == 1
        assert working.added == frozenset()
        assert completeness_gap(claimed, working) == 0

    def test_one_undeclared_import_costs_one_round(self, config, tmp_path):
        # claimed deps install fine, but the code also imports pkg_a
        project, claimed = make_project(
            tmp_path / "p", "midpkg\n",
            "import midpkg\nimport pkg_a\nprint('done')\n",
        )
        working, trace = run_resolve(config, project, claimed)
        assert trace.out_of_box is False
        assert trace.final_status == "Success"
        assert trace.fix_rounds() == 1
        assert {ref.name for ref in working.added} == {"pkg-a"}
        assert len(working.packages) == 2
        assert completeness_gap(claimed, working) == 1
        assert trace.round0_category is ErrorCategory.DEPENDENCY

    def test_two_planted_imports_discovered_sequentially(self, config, tmp_path):
        project, claimed = make_project(
            tmp_path / "p", "",
            "import pkg_a\nimport pkg_b\nprint('done')\n",
        )
        working, trace = run_resolve(config, project, claimed)
        assert trace.final_status == "Success"
        assert trace.fix_rounds() == 2
        assert {ref.name for ref in working.added} == {"pkg-a", "pkg-b"}
        assert completeness_gap(claimed, working) == 2
        # monotone growth: every installed_missing action adds a new package
        installed = [it.detail for it in trace.iterations if it.action == "installed_missing"]
        assert installed == ["pkg-a", "pkg-b"]

    def test_syntax_error_without_patch_is_unfixable(self, config, tmp_path):
        project, claimed = make_project(tmp_path / "p", "", "def broken(:\n")
        working, trace = run_resolve(config, project, claimed)
        assert trace.out_of_box is False
        assert trace.final_status == "Unfixable"
        assert trace.round0_category is ErrorCategory.CODE_BUG
        assert working.added == frozenset()

    def test_patch_ledger_fixes_code_bug(self, config, tmp_path):
        broken = "def main(:\n    print('ok')\nmain()\n"
        fixed = "def main():\n    print('ok')\nmain()\n"
        project, claimed = make_project(tmp_path / "p", "", broken)
        patches_dir = tmp_path / "patches"
        patches_dir.mkdir()
        (patches_dir / "01-fix-syntax.diff").write_text(make_patch(broken, fixed, "main.py"))
        working, trace = run_resolve(config, project, claimed, PatchLedger(patches_dir))
        assert trace.final_status == "Success"
        assert trace.out_of_box is False
        actions = [it.action for it in trace.iterations]
        assert "applied_patch" in actions
        assert trace.iterations[0].category is ErrorCategory.CODE_BUG

    def test_same_extraction_twice_aborts(self, config, tmp_path):
        # wheel "misnamed" installs fine but provides a different module, so
        # the import keeps failing and the same name is extracted again
        project, claimed = make_project(tmp_path / "p", "", "import misnamed\n")
        working, trace = run_resolve(config, project, claimed)
        assert trace.final_status == "Unfixable"
        last = trace.iterations[-1]
        assert last.action == "aborted"
        assert "no progress" in last.detail

    def test_round0_purity_with_zero_iterations(self, config, tmp_path, py_mirror):
        cfg = offline_config(config.home, py_mirror=py_mirror, max_iterations=0)
        project, claimed = make_project(tmp_path / "p", "", "import pkg_a\n")
        working, trace = run_resolve(cfg, project, claimed)
        assert trace.out_of_box is False
        assert trace.final_status == "ExhaustedIterations"
        assert len(trace.iterations) == 1
        assert trace.iterations[0].outcome == "Failed"

    def test_round0_purity_success_matches_full_run(self, config, tmp_path, py_mirror):
        cfg0 = offline_config(config.home, py_mirror=py_mirror, max_iterations=0)
        project, claimed = make_project(
            tmp_path / "p", "leafpkg\n", "import leafpkg\n"
        )
        _, trace_full = run_resolve(config, project, claimed)
        _, trace_zero = run_resolve(cfg0, project, claimed)
        assert trace_full.out_of_box == trace_zero.out_of_box is True

    def test_install_abort_at_round_zero(self, config, tmp_path):
        project, claimed = make_project(
            tmp_path / "p", "package-that-does-not-exist-xyz\n", "print('x')\n"
        )
        working, trace = run_resolve(config, project, claimed)
        assert trace.final_status == "Unfixable"
        assert trace.iterations[0].action == "aborted"
        assert trace.round0_category is ErrorCategory.OTHER
        assert trace.installs and not trace.installs[-1].ok

    def test_iteration_bound_invariant(self, config, tmp_path, py_mirror):
        cfg = offline_config(config.home, py_mirror=py_mirror, max_iterations=2)
        # three planted imports but only two fix rounds allowed
        project, claimed = make_project(
            tmp_path / "p", "", "import pkg_a\nimport pkg_b\nimport pkg_c\n"
        )
        working, trace = run_resolve(cfg, project, claimed)
        assert trace.final_status == "ExhaustedIterations"
        assert len(trace.iterations) <= cfg.max_iterations + 1
        assert completeness_gap(claimed, working) == len(working.added)


class TestCompletenessGap:
    def refs(self, *names):
        return frozenset(PackageRef("python", n) for n in names)

    def test_paper_example(self):
        claimed = ClaimedDeps(self.refs("scikit-learn", "pandas", "matplotlib"),
                              Path("requirements.txt"), "python")
        working = WorkingDeps(self.refs("scikit-learn", "pandas", "matplotlib", "numpy"),
                              self.refs("numpy"))
        assert completeness_gap(claimed, working) == 1

    def test_identity(self):
        claimed = ClaimedDeps(self.refs("a"), Path("r.txt"), "python")
        working = WorkingDeps(self.refs("a"), frozenset())
        assert completeness_gap(claimed, working) == 0

    def test_empty_claimed(self):
        claimed = ClaimedDeps(frozenset(), Path("r.txt"), "python")
        working = WorkingDeps(self.refs("a", "b"), self.refs("a", "b"))
        assert completeness_gap(claimed, working) == 2

    def test_layer_violation(self):
        claimed = ClaimedDeps(self.refs("a", "b"), Path("r.txt"), "python")
        working = WorkingDeps(self.refs("a"), frozenset())
        with pytest.raises(LayerViolation):
            completeness_gap(claimed, working)


class TestUnifiedDiff:
    def test_modify_file(self, tmp_path):
        (tmp_path / "f.py").write_text("a\nb\nc\n")
        apply_unified_diff(make_patch("a\nb\nc\n", "a\nB\nc\n", "f.py"), tmp_path)
        assert (tmp_path / "f.py").read_text() == "a\nB\nc\n"

    def test_create_file(self, tmp_path):
        diff = make_patch("", "new content\n", "fresh.py").replace("--- a/fresh.py", "--- /dev/null")
        apply_unified_diff(diff, tmp_path)
        assert (tmp_path / "fresh.py").read_text() == "new content\n"

    def test_multi_hunk(self, tmp_path):
        old = "\n".join(f"line{i}" for i in range(20)) + "\n"
        new = old.replace("line2", "LINE2").replace("line17", "LINE17")
        (tmp_path / "f.py").write_text(old)
        apply_unified_diff(make_patch(old, new, "f.py"), tmp_path)
        assert (tmp_path / "f.py").read_text() == new

    def test_context_mismatch(self, tmp_path):
        (tmp_path / "f.py").write_text("completely different\n")
        with pytest.raises(PatchFailed):
            apply_unified_diff(make_patch("a\nb\n", "a\nB\n", "f.py"), tmp_path)

    def test_deletion_unsupported(self, tmp_path):
        (tmp_path / "f.py").write_text("x\n")
        diff = make_patch("x\n", "", "f.py").replace("+++ b/f.py", "+++ /dev/null")
        with pytest.raises(PatchFailed):
            apply_unified_diff(diff, tmp_path)

    def test_ledger_lexical_order(self, tmp_path):
        target = tmp_path / "proj"
        target.mkdir()
        (target / "f.txt").write_text("one\n")
        patches = tmp_path / "patches"
        patches.mkdir()
        (patches / "02-second.diff").write_text(make_patch("two\n", "three\n", "f.txt"))
        (patches / "01-first.diff").write_text(make_patch("one\n", "two\n", "f.txt"))
        ledger = PatchLedger(patches)
        assert len(ledger) == 2
        first_id, digest = ledger.apply_next(target)
        assert first_id == "01-first.diff"
        assert len(digest) == 64
        ledger.apply_next(target)
        assert (target / "f.txt").read_text() == "three\n"
        with pytest.raises(PatchFailed):
            ledger.apply_next(target)

    def test_empty_ledger(self):
        ledger = PatchLedger(None)
        assert len(ledger) == 0
        assert ledger.remaining() == 0
