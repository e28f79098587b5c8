import numpy as np
import pytest

from ocfmine.model import MinerProfile, SystemParams, TransactionPool
from ocfmine.ocf import MarketContext


def make_market(fees, collected, **overrides):
    """Context over a hand-written pool: ``collected[n]`` lists MU n's transaction ids."""
    base = dict(n_mus=len(collected), tx_pool_size=len(fees),
                tx_per_mu=max(1, min(len(c) for c in collected)),
                block_tx_count=min(10, len(fees)))
    base.update(overrides)
    params = SystemParams(**base)
    pool = TransactionPool(np.asarray(fees, dtype=float))
    profiles = [MinerProfile(n, frozenset(c)) for n, c in enumerate(collected)]
    return MarketContext(params, pool, profiles)


@pytest.fixture
def table2():
    return SystemParams()


_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record a criterion's result line for the end-of-run summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def add(result):
        print(result.line)
        for note in result.notes:
            print("    " + note)
        lines.append(result.line)
    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
