import pytest

from resolvit.engine import Engine
from resolvit.errors import ExecutionFailed, LockHeld, PlatformDirty, RollbackFailed
from resolvit.executor import (
    DIRTY_NAME,
    JOURNAL_NAME,
    Action,
    ActionPlan,
    Journal,
    JournalRecord,
    decode_plan,
    execute_plan,
    leaves_first,
    platform_lock,
    recover,
    tree_snapshot,
)
from resolvit.model import UnitId
from resolvit.state import StateStore
from resolvit.versions import parse_version

from faults import faulty_managers, run_in_child
from helpers import PROFILE, desc, grp, package_bytes
from scenarios import BY_NAME


def plan_lines(result) -> list[str]:
    return [f"{a.verb} {a.unit.name}@{a.unit.version}" for a in result.plan]


def rewired(engine: Engine, managers) -> Engine:
    return Engine(engine.config, managers)


def test_leaves_first_tie_breaks():
    ds = {d.id: d for d in [desc("lib", "1.0.0"), desc("lib", "2.0.0"), desc("app", groups=[grp("AND", "zz")]), desc("zz")]}
    order = [f"{u.name}@{u.version}" for u in leaves_first(ds)]
    assert order == ["lib@2.0.0", "lib@1.0.0", "zz@1.0.0", "app@1.0.0"]
    assert [f"{u.name}" for u in leaves_first(ds, reverse=True)][:2] == ["app", "lib"]


def test_cycle_members_in_canonical_order():
    ds = {d.id: d for d in [desc("b", groups=[grp("AND", "a")]), desc("a", groups=[grp("AND", "b")])]}
    assert [u.name for u in leaves_first(ds)] == ["a", "b"]


def test_plan_encoding_round_trip(tmp_path):
    result = BY_NAME["replace-two-and-deps"].prepare(tmp_path).check("svc:app", PROFILE, conflict_policy="replace")
    assert plan_lines(result) == [
        "remove old1@1.0.0",
        "remove old2@1.0.0",
        "install x@1.0.0",
        "install y@1.0.0",
        "install app@1.0.0",
    ]
    assert [(a.verb, a.unit) for a in result.plan] == decode_plan(result.plan.encode())
    assert len(result.plan.plan_hash) == 64


def test_removal_order_dependents_first():
    base, mid = desc("base"), desc("mid", groups=[grp("AND", "base")])
    ds = {d.id: d for d in (base, mid)}
    assert leaves_first(ds, reverse=True) == [mid.id, base.id]


def test_remove_last_unit_empties_tree(tmp_path):
    s = BY_NAME["single"]
    engine = s.prepare(tmp_path)
    engine.install("svc:app", PROFILE)
    status = engine.store.load()
    root = engine.root
    (unit,) = status.installed
    report = execute_plan(ActionPlan((Action("remove", unit),)), engine.managers, engine.store, root, engine.config.cache_dir)
    assert len(report) == 1
    assert tree_snapshot(root) == {"status": b"Format: 1\n"}


def test_install_layout(tmp_path):
    engine = BY_NAME["diamond"].prepare(tmp_path)
    result, report = engine.install("svc:app", PROFILE)
    assert len(report) == 4
    root = engine.root
    for name in ("app", "left", "right", "base"):
        d = next(n.descriptor for n in result.tree.nodes.values() if n.id.name == name)
        assert (root / "bundle" / f"{name}-1.0.0" / "package").read_bytes() == package_bytes(d)
        assert (root / "bundle" / f"{name}-1.0.0" / "receipt").read_text().startswith(f"{name}\t1.0.0\tbundle\t")
    assert sorted(u.name for u in engine.store.load().installed) == ["app", "base", "left", "right"]
    assert not (root / JOURNAL_NAME).exists()
    assert not (root / ".resolvit.lock").exists()


def test_empty_plan_changes_nothing(tmp_path):
    engine = BY_NAME["already-satisfied"].prepare(tmp_path)
    before = tree_snapshot(engine.root)
    result, report = engine.install("svc:app", PROFILE)
    assert result.plan.actions == () and len(report) == 0
    assert tree_snapshot(engine.root) == before


@pytest.mark.parametrize("mode", ["raise", "raise-after", "partial"])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_fault_rolls_back(tmp_path, k, mode):
    engine = BY_NAME["or-cardinality"].prepare(tmp_path)
    before = tree_snapshot(engine.root)
    with pytest.raises(ExecutionFailed) as info:
        rewired(engine, faulty_managers(k, mode)).install("svc:app", PROFILE)
    assert info.value.rolled_back
    assert tree_snapshot(engine.root) == before


@pytest.mark.parametrize("k", [1, 2])
def test_fault_during_replace_restores_removed_unit(tmp_path, k):
    engine = BY_NAME["replace-not"].prepare(tmp_path)
    before = tree_snapshot(engine.root)
    status_bytes = engine.store.path.read_bytes()
    with pytest.raises(ExecutionFailed):
        rewired(engine, faulty_managers(k, "raise-after")).install("svc:app", PROFILE, conflict_policy="replace")
    assert tree_snapshot(engine.root) == before
    assert engine.store.path.read_bytes() == status_bytes


def test_rollback_failure_is_reported(tmp_path, monkeypatch):
    engine = BY_NAME["chain6"].prepare(tmp_path)
    managers = faulty_managers(3, "raise")
    bundle = managers["bundle"]
    original = bundle.inner.remove

    def broken_remove(unit, root):
        raise OSError("disk gone")

    monkeypatch.setattr(bundle.inner, "remove", broken_remove)
    with pytest.raises(RollbackFailed):
        rewired(engine, managers).install("svc:a", PROFILE)
    assert (engine.root / DIRTY_NAME).exists()
    monkeypatch.setattr(bundle.inner, "remove", original)
    with pytest.raises(PlatformDirty):
        engine.install("svc:a", PROFILE)


@pytest.mark.parametrize("mode", ["kill", "kill-after"])
def test_crash_then_recover(tmp_path, mode):
    engine = BY_NAME["chain6"].prepare(tmp_path)
    before = tree_snapshot(engine.root)
    code = run_in_child(lambda: rewired(engine, faulty_managers(4, mode)).install("svc:a", PROFILE))
    assert code == 137
    assert (engine.root / JOURNAL_NAME).exists()
    assert recover(engine.root, engine.config.cache_dir) is True
    assert tree_snapshot(engine.root) == before
    assert recover(engine.root, engine.config.cache_dir) is False


def test_install_recovers_leftover_journal_first(tmp_path):
    engine = BY_NAME["chain6"].prepare(tmp_path)
    run_in_child(lambda: rewired(engine, faulty_managers(2, "kill-after")).install("svc:a", PROFILE))
    result, report = engine.install("svc:a", PROFILE)
    assert len(report) == 6
    assert len(engine.store.load()) == 6


def test_lock_held(tmp_path):
    engine = BY_NAME["single"].prepare(tmp_path)
    with platform_lock(engine.root):
        with pytest.raises(LockHeld):
            engine.install("svc:app", PROFILE)
    assert not (engine.root / ".resolvit.lock").exists()
    engine.install("svc:app", PROFILE)


def test_lock_is_released_after_failure(tmp_path):
    engine = BY_NAME["single"].prepare(tmp_path)
    with pytest.raises(ExecutionFailed):
        rewired(engine, faulty_managers(1, "raise")).install("svc:app", PROFILE)
    with platform_lock(engine.root):
        pass


def test_torn_journal_line_is_ignored(tmp_path):
    path = tmp_path / JOURNAL_NAME
    j = Journal(path)
    unit = UnitId("a", parse_version("1.0.0"))
    j.append(JournalRecord(1, "install", unit, "0" * 64, "pending"))
    j.set_state(1, "done")
    with open(path, "a") as fh:
        fh.write("2\tinstall\tb")
    reopened = Journal.open(path)
    assert [(r.seq, r.state) for r in reopened.open_records()] == [(1, "done")]


def test_package_hash_mismatch_aborts_before_any_change(tmp_path):
    engine = BY_NAME["single"].prepare(tmp_path)
    result = engine.check("svc:app", PROFILE)
    bogus = tmp_path / "bogus"
    bogus.write_bytes(b"not the package")
    (action,) = result.plan.actions
    plan = ActionPlan((Action("install", action.unit, bogus, action.descriptor),))
    before = tree_snapshot(engine.root)
    with pytest.raises(ExecutionFailed):
        execute_plan(plan, engine.managers, StateStore(engine.store.path), engine.root, engine.config.cache_dir)
    assert tree_snapshot(engine.root) == before
