"""Layer managers that fail or kill the process at a chosen call."""

from __future__ import annotations

import multiprocessing
import os
from pathlib import Path

from resolvit.executor import LayerManager, SandboxLayerManager
from resolvit.model import KINDS, UnitId


class Counter:
    def __init__(self) -> None:
        self.n = 0


class FaultyManager(LayerManager):
    """Delegates to a sandbox manager; the k-th install/remove call misbehaves.

    Modes: ``raise`` fails before doing anything, ``raise-after`` completes the
    work and then fails, ``partial`` leaves the work half done, ``kill`` and
    ``kill-after`` end the process without any cleanup.
    """

    def __init__(self, kind: str, counter: Counter, k: int, mode: str):
        self.kind = kind
        self.inner = SandboxLayerManager(kind)
        self.counter = counter
        self.k = k
        self.mode = mode

    def _hit(self) -> bool:
        self.counter.n += 1
        return self.counter.n == self.k

    def _misbehave(self, work, unit: UnitId, root: Path, verb: str) -> None:
        if self.mode == "kill":
            os._exit(137)
        if self.mode == "partial":
            target = self.inner.unit_dir(unit, root)
            if verb == "install":
                staging = target.parent / f".{target.name}.partial"
                staging.mkdir(parents=True, exist_ok=True)
                (staging / "package").write_bytes(b"half")
            else:
                (target / "package").unlink()
        elif self.mode != "raise":
            work()
            if self.mode == "kill-after":
                os._exit(137)
        raise OSError(f"injected failure at call {self.k}")

    def install(self, unit, package_path, platform_root):
        if not self._hit():
            return self.inner.install(unit, package_path, platform_root)
        self._misbehave(lambda: self.inner.install(unit, package_path, platform_root), unit, platform_root, "install")

    def remove(self, unit, platform_root):
        if not self._hit():
            return self.inner.remove(unit, platform_root)
        self._misbehave(lambda: self.inner.remove(unit, platform_root), unit, platform_root, "remove")

    def installed_package(self, unit, platform_root):
        return self.inner.installed_package(unit, platform_root)


def faulty_managers(k: int, mode: str) -> dict[str, LayerManager]:
    counter = Counter()
    return {kind: FaultyManager(kind, counter, k, mode) for kind in KINDS}


def run_in_child(fn) -> int:
    """Run ``fn`` in a forked child and return its exit code."""
    proc = multiprocessing.get_context("fork").Process(target=fn)
    proc.start()
    proc.join(60)
    if proc.is_alive():  # pragma: no cover
        proc.kill()
        raise TimeoutError("child did not finish")
    return proc.exitcode
