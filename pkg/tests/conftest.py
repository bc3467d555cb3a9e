import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dtss.core import AdversaryLabel, Transaction, TransactionType, TxTable  # noqa: E402


def random_transactions(rng: np.random.Generator, n: int, start_id: int = 0) -> list[Transaction]:
    return [
        Transaction(
            id=start_id + i,
            tx_type=TransactionType(int(rng.integers(5))),
            amount=float(rng.lognormal(3, 2)),
            fee_pct=float(rng.lognormal(-6, 0.5)),
            init_time=float(rng.uniform(0, 3600)),
            label=AdversaryLabel.Normal,
        )
        for i in range(n)
    ]


def random_table(rng: np.random.Generator, n: int) -> TxTable:
    return TxTable.from_transactions(random_transactions(rng, n))


@pytest.fixture(scope="session")
def default_topology():
    from dtss.netsim import build_topology

    return build_topology(6000, 8, seed=0)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts the outcome itself."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
