import hashlib
import json
import os
from pathlib import Path

import pytest

from phased_dmd.distill import TeacherConfig, pretrain_teacher
from phased_dmd.objectives import ToyPrior
from phased_dmd.schedule import get_schedule
from phased_dmd.toynet import load_checkpoint, save_checkpoint

SRC = Path(__file__).resolve().parents[1] / "src" / "phased_dmd"


def _source_digest():
    h = hashlib.sha256()
    for path in sorted(SRC.rglob("*")):
        if path.suffix in (".py", ".pyx"):
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def four_atom_teacher(request):
    """The gated 512-wide teacher, cached across sessions keyed by config and source digest.

    Set PDMD_FRESH_TEACHER=1 to ignore the cache.
    """
    tcfg = TeacherConfig(hidden=512)
    key = hashlib.sha256(json.dumps([tcfg.to_dict(), _source_digest()], default=str).encode()).hexdigest()[:16]
    cache_dir = Path(request.config.cache.mkdir("pdmd_teacher"))
    path = cache_dir / f"teacher_{key}.pdmd"
    gate_path = cache_dir / f"teacher_{key}.json"
    if path.exists() and gate_path.exists() and not os.environ.get("PDMD_FRESH_TEACHER"):
        return load_checkpoint(path), json.loads(gate_path.read_text())
    net, gate = pretrain_teacher(ToyPrior.four_atoms(), get_schedule(), tcfg)
    save_checkpoint(net, path)
    info = {"mse": gate.mse, "passed": gate.passed, "tol": gate.tol}
    gate_path.write_text(json.dumps(info))
    return net, info


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(n, passed, detail)."""

    def record(n, passed, detail):
        ACCEPTANCE[str(n)] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
