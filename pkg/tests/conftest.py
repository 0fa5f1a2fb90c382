import os

# the numba pool size is fixed at first import; the determinism tests
# compare one thread against several
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import warnings  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

warnings.filterwarnings("ignore", message=".*TBB.*")

ACCEPTANCE = []


def record(number, title, passed, detail=""):
    ACCEPTANCE.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20260416)


BLOCK_FIELD = {
    "dim": 2,
    "window": [[0, 1], [0, 1]],
    "blocks": [{"rects": [[[0.25, 0.75], [0.25, 0.75]]], "tensor": [[0.1, 0.02], [0.02, 1.0]]}],
    "background": {"tensor": [[0.1, 0.0], [0.0, 1.0]]},
}


@pytest.fixture
def block_doc():
    import copy
    return copy.deepcopy(BLOCK_FIELD)


@pytest.fixture
def block_field():
    from divjump.coeff import CoefficientField

    doc = {**BLOCK_FIELD, "blocks": [dict(BLOCK_FIELD["blocks"][0], r=[3, 1])],
           "background": dict(BLOCK_FIELD["background"], r=[3, 1])}
    return CoefficientField.from_dict(doc)
