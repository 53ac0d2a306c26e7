from __future__ import annotations

import pytest

from conftest import offline_config, requires_node
from reproaudit import envmgr
from reproaudit.envmgr import (
    BaselineSnapshot,
    CleanupFailed,
    QueryFailed,
    ToolchainMissing,
    UnknownPackage,
    create_isolated_env,
    destroy,
    install,
    snapshot_inventory,
    verify_reset,
)
from reproaudit.manifest import PackageRef


@pytest.fixture
def config(tmp_path, py_mirror):
    return offline_config(tmp_path / "home", py_mirror=py_mirror)


class TestPythonEnvLifecycle:
    def test_full_lifecycle(self, config):
        env = create_isolated_env("python", config)
        try:
            assert env.state == "fresh"
            assert "python" in env.toolchain

            baseline = snapshot_inventory(env)
            names = {name for name, _ in baseline.entries}
            # fresh env holds only bootstrap packaging tools
            assert "pip" in names
            assert names <= {"pip", "setuptools", "wheel"}
            assert baseline.count == len(baseline.entries)

            # reflexivity: a snapshot verifies against itself
            assert verify_reset(env, baseline)

            # empty install changes nothing
            report = install(env, set(), config)
            assert report.ok
            assert snapshot_inventory(env).entries == baseline.entries

            # installing midpkg brings exactly its transitive set
            report = install(env, {PackageRef("python", "midpkg")}, config)
            assert report.ok
            after = snapshot_inventory(env)
            added = {n for n, _ in after.entries} - names
            assert added == {"leafpkg", "midpkg"}
            assert env.state == "installed"

            # mismatch is a false return that itemizes the extras
            reset = verify_reset(env, baseline)
            assert not reset
            assert {name for name, _ in reset.extra} == {"leafpkg", "midpkg"}
            assert reset.missing == ()
        finally:
            destroy(env)
        assert not env.root.exists()
        assert env.state == "destroyed"

    def test_destroy_is_idempotent(self, config):
        env = create_isolated_env("python", config)
        destroy(env)
        destroy(env)  # second call is a no-op
        assert env.state == "destroyed"

    def test_snapshot_after_destroy_fails(self, config):
        env = create_isolated_env("python", config)
        destroy(env)
        with pytest.raises(QueryFailed):
            snapshot_inventory(env)

    def test_unknown_package(self, config):
        env = create_isolated_env("python", config)
        try:
            with pytest.raises(UnknownPackage) as excinfo:
                install(env, {PackageRef("python", "package-that-does-not-exist-xyz")}, config)
            assert excinfo.value.report.exit_code != 0
        finally:
            destroy(env)

    def test_isolation_between_envs(self, config):
        env_a = create_isolated_env("python", config)
        env_b = create_isolated_env("python", config)
        try:
            assert env_a.root != env_b.root
            before_b = snapshot_inventory(env_b)
            install(env_a, {PackageRef("python", "leafpkg")}, config)
            assert snapshot_inventory(env_b).entries == before_b.entries
        finally:
            destroy(env_a)
            destroy(env_b)

    def test_reset_soundness(self, config):
        first = create_isolated_env("python", config)
        baseline = snapshot_inventory(first)
        install(first, {PackageRef("python", "midpkg")}, config)
        destroy(first)
        second = create_isolated_env("python", config)
        try:
            assert verify_reset(second, baseline)
        finally:
            destroy(second)

    def test_live_child_blocks_destroy(self, config):
        env = create_isolated_env("python", config)
        import subprocess
        proc = subprocess.Popen(["sleep", "30"])
        env.active_pid = proc.pid
        try:
            with pytest.raises(CleanupFailed) as excinfo:
                destroy(env)
            assert str(proc.pid) in str(excinfo.value)
        finally:
            proc.kill()
            proc.wait()
            env.active_pid = None
            destroy(env)


class TestToolchainProbes:
    def test_missing_toolchain(self, config, monkeypatch):
        monkeypatch.setattr(envmgr.shutil, "which", lambda name: None)
        with pytest.raises(ToolchainMissing) as excinfo:
            create_isolated_env("javascript", config)
        assert excinfo.value.ecosystem == "javascript"
        assert "node" in excinfo.value.probe

    def test_unknown_ecosystem(self, config):
        with pytest.raises(ValueError):
            create_isolated_env("ruby", config)


class TestBaselineSnapshot:
    def test_count_must_match(self):
        with pytest.raises(ValueError):
            BaselineSnapshot(entries=(("a", "1"),), count=2, captured_at="t")

    def test_sorted_no_duplicates(self):
        with pytest.raises(ValueError):
            BaselineSnapshot(entries=(("b", "1"), ("a", "1")), count=2, captured_at="t")
        with pytest.raises(ValueError):
            BaselineSnapshot(entries=(("a", "1"), ("a", "2")), count=2, captured_at="t")

    def test_from_pairs_dedups_deterministically(self):
        snap = BaselineSnapshot.from_pairs([("a", "1"), ("a", "2"), ("b", "1")])
        assert snap.entries == (("a", "2"), ("b", "1"))


@requires_node
class TestJavascriptEnv:
    def test_lifecycle_and_inventory(self, tmp_path, js_mirror):
        from reproaudit.closure import RegistryIndex, capture_runtime_js, transitive_closure

        config = offline_config(tmp_path / "home", js_mirror=js_mirror)
        env = create_isolated_env("javascript", config)
        try:
            baseline = snapshot_inventory(env)
            assert baseline.entries == ()  # empty module directory

            report = install(env, {PackageRef("javascript", "midjs")}, config)
            assert report.ok
            after = snapshot_inventory(env)
            assert {name for name, _ in after.entries} == {"leafjs", "midjs"}
            assert dict(after.entries)["midjs"] == "2.0.0"

            reset = verify_reset(env, baseline)
            assert not reset

            # flattened tree equals the closure over the recorded registry
            # snapshot of the same install
            runtime = capture_runtime_js(env, config=config)
            registry = RegistryIndex({"midjs": ("leafjs",), "leafjs": ()}, "javascript")
            assert set(runtime.names()) == transitive_closure(registry, {"midjs"})
            assert runtime.capture_method == "npm_tree"
        finally:
            destroy(env)
        assert not env.root.exists()
