import numpy as np
import pytest

from marketrec.data import SyntheticSpec, generate_synthetic_markets, split_markets


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


@pytest.fixture(scope="session")
def small_markets():
    """Three synthetic markets big enough for 99 evaluation negatives."""
    spec = SyntheticSpec(markets=("de", "jp", "in"), users_per_market=30, items_per_market=120, interactions_per_user=12)
    interactions, registry = generate_synthetic_markets(spec, seed=3)
    return interactions, registry, split_markets(interactions, registry, seed=0)


# -- acceptance summary ------------------------------------------------------
#
# Tests marked ``@pytest.mark.criterion(n, "title")`` get one PASS/FAIL/SKIP
# line each in the terminal summary; ``record_property("detail", ...)`` adds
# the measured values to that line.

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.skipped and rep.passed):
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
    if rep.skipped:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        _CRITERIA[n] = (title, "SKIP", reason.replace("Skipped: ", ""))
    elif rep.failed:
        _CRITERIA[n] = (title, "FAIL", detail or f"failed during {rep.when}")
    elif rep.when == "call":
        _CRITERIA[n] = (title, "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status:4s}  {title}" + (f"  [{detail}]" if detail else ""))
