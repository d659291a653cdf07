from hypothesis import settings

# the first call of a numba kernel compiles it; wall-clock deadlines would flag that
settings.register_profile("dialoglab", deadline=None)
settings.load_profile("dialoglab")

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}

TITLES = {
    1: "gradient correctness",
    2: "HRED+WA / HRAN identity",
    3: "overfit sanity",
    4: "plateau schedule and early stopping",
    5: "metric oracle equivalence",
    6: "learned metric AUC",
    7: "perturbation semantics",
    8: "perturbation sensitivity direction",
    9: "attention distributions and heatmap export",
    10: "reproducibility",
}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        results = ACCEPTANCE.get(n)
        if results is None:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN  {TITLES[n]}")
            continue
        ok = all(p for p, _ in results)
        shown = [d for p, d in results if not p] if not ok else [d for _, d in results]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {TITLES[n]}: {'; '.join(shown)}")
