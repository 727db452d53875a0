import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (part label, passed, detail)
ACCEPTANCE: dict[int, list] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        details = "; ".join(f"{label}: {detail}" if label else detail for label, _, detail in parts)
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {details}")
