"""Suite-level budget check: the whole test run must stay under 15 minutes."""

import time

SUITE_BUDGET_SECONDS = 900.0


def pytest_configure(config):
    config._suite_t0 = time.monotonic()


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.monotonic() - session.config._suite_t0
    ok = elapsed < SUITE_BUDGET_SECONDS
    print(f"\nACCEPTANCE 11: {'PASS' if ok else 'FAIL'} "
          f"(suite wall time {elapsed:.1f}s, budget {SUITE_BUDGET_SECONDS:.0f}s)")
    if not ok:
        session.exitstatus = 1
