import numpy as np
import pytest

from fundcast.panel_ingest import (
    CalendarQuarter,
    CompanyMeta,
    Format,
    RawPanel,
    StatementGroup,
    VariableSpec,
)


def quarter_range(start_year: int, start_q: int, n: int):
    start = CalendarQuarter(start_year, start_q)
    return [CalendarQuarter.from_index(start.index + i) for i in range(n)]


def grid_panel(companies, quarters, columns, meta=None) -> RawPanel:
    """Panel from per-variable (n_companies, n_quarters) value grids."""
    keys = [(c, q) for c in companies for q in quarters]
    cols = {name: np.asarray(grid, dtype=np.float64).reshape(-1)
            for name, grid in columns.items()}
    meta = meta or {c: CompanyMeta() for c in companies}
    return RawPanel(keys, cols, meta)


def simple_spec(name, group="income", formats=(Format.RAW,), crucial=False,
                aligned=False) -> VariableSpec:
    return VariableSpec(name, StatementGroup(group), frozenset(formats),
                        crucial, aligned)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
