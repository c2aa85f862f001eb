import pytest

from roundabout_clbf.coordinator import CavRecord, CoordinatorTables
from roundabout_clbf.dynamics import VehicleState
from roundabout_clbf.topology import RoundaboutTopology

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def build_tables(rows, topology=None):
    """Tables from (idx, cz_now, entry, exit, x, v) tuples, listed in on-road order per CZ."""
    topo = topology or RoundaboutTopology()
    tables = CoordinatorTables(topo)
    for idx, cz_now, entry, exit_, x, v in rows:
        route = topo.make_route(entry, exit_)
        leg = route.czs.index(cz_now)
        rec = CavRecord(idx=idx, uid=100 + idx, state=VehicleState(x, v), route=route, leg=leg)
        tables.tables[cz_now].append(rec)
        tables.sequences[cz_now].append(idx)
    return tables


@pytest.fixture
def table_one():
    """The three-vehicle CZ1 example: 0 and 1 on the ring, 4 entering, 3 ahead in CZ2."""
    return build_tables([
        (0, 1, 3, 1, 40.0, 12.0),
        (1, 1, 3, 2, 20.0, 12.0),
        (4, 1, 1, 2, 30.0, 11.0),
        (3, 2, 3, 3, 10.0, 12.0),
        (2, 3, 2, 1, 25.0, 12.0),
    ])
