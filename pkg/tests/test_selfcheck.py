import os
import subprocess
import sys
import time

from guidestage.attention import FAULT_ENV
from guidestage.selfcheck import CHECKS, CheckResult, format_table, run_checks


def _run(env_extra=None):
    env = {k: v for k, v in os.environ.items() if k != FAULT_ENV}
    env.update(env_extra or {})
    return subprocess.run([sys.executable, "-m", "guidestage.cli", "selfcheck"], capture_output=True, text=True,
                          env=env, timeout=120)


def test_pristine_build_passes_within_budget():
    start = time.perf_counter()
    proc = _run()
    elapsed = time.perf_counter() - start
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert elapsed < 60
    for name, _ in CHECKS:
        assert name in proc.stdout


def test_inverted_object_mask_is_caught():
    proc = _run({FAULT_ENV: "invert_object_mask"})
    assert proc.returncode == 1
    assert "object_attention_oracle" in proc.stderr
    assert "FAIL" in proc.stdout


def test_checks_report_exceptions_as_failures(monkeypatch):
    import guidestage.selfcheck as sc

    def broken():
        raise RuntimeError("kaboom")

    monkeypatch.setattr(sc, "CHECKS", [("broken", broken)] + list(sc.CHECKS[:1]))
    results = sc.run_checks()
    assert results[0] == CheckResult("broken", False, "RuntimeError: kaboom")
    assert results[1].ok


def test_table_lists_every_check_once():
    results = run_checks()
    table = format_table(results)
    assert all(table.count(r.name) == 1 for r in results)
    assert len(results) == len(CHECKS) == len({r.name for r in results})
