import numpy as np
import pytest

from semisurv.data import AttributeColumn, ClinicalTable


def make_table(columns=None, vital=None, days=None, kinds=None):
    """Build a ClinicalTable from plain lists; ``None`` cells are missing."""
    columns = columns or {}
    n = len(vital) if vital is not None else len(next(iter(columns.values())))
    vital = vital or ["dead"] * n
    days = days or [100] * n
    kinds = kinds or {}
    attrs = []
    for name, values in columns.items():
        kind = kinds.get(name)
        if kind is None:
            kind = "numeric" if all(isinstance(v, (int, float)) for v in values if v is not None) else "categorical"
        if kind == "numeric":
            attrs.append(AttributeColumn(name, "numeric",
                                         tuple(None if v is None else float(v) for v in values)))
        else:
            levels = tuple(sorted({v for v in values if v is not None}))
            attrs.append(AttributeColumn(name, "categorical", tuple(values), levels))
    return ClinicalTable(tuple(attrs), tuple(vital), tuple(days), tuple(str(i) for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(X, labels, T=1.0):
    """SurvivalDataset straight from level codes and labels (0 = unlabeled)."""
    from semisurv.data import Schema, SurvivalDataset

    X = np.asarray(X, dtype=np.int64)
    n_levels = [int(max(X[:, j].max(), 0)) + 1 for j in range(X.shape[1])]
    return SurvivalDataset(X, np.asarray(labels, dtype=np.int64), Schema.from_n_levels(n_levels),
                           tuple(f"r{i}" for i in range(len(labels))), T)


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict: ``criterion(number, passed, detail)``."""
    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
