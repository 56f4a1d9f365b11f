import numpy as np
import pandas as pd
import pytest

from discourse_hedonics import fixtures, pipeline

#: PASS/FAIL lines collected by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def input_dir(tmp_path_factory):
    """Small but fully populated raw-input set shared across tests."""
    root = tmp_path_factory.mktemp("inputs")
    fixtures.make_input_fixture(
        root,
        n_collections=4,
        nfts_per_collection=18,
        mean_trades_per_nft=6.0,
        items_per_collection=260,
        seed=42,
    )
    return root


@pytest.fixture(scope="session")
def baseline_run(tmp_path_factory, input_dir):
    """One baseline pipeline run whose artifacts several tests inspect."""
    out = tmp_path_factory.mktemp("baseline_run")
    config = pipeline.RunConfig(
        transactions=input_dir / "transactions.csv",
        market=input_dir / "market.csv",
        discourse=input_dir / "discourse.csv",
        features=input_dir / "token_features.csv",
        out=out,
        target_bins=40,
        seed=7,
        n_restarts=1,
    )
    result = pipeline.run_pipeline(config)
    return config, result


def make_panel(spec: dict[str, list[float]]) -> pd.DataFrame:
    """Bin panel from {collection: series}, bins indexed 0..len-1."""
    rows = []
    for code, series in spec.items():
        for b, value in enumerate(series):
            rows.append({"collection_code": code, "bin_index": b, "value": value})
    return pd.DataFrame(rows)


def balanced_groups(n_groups: int, group_size: int) -> np.ndarray:
    return np.repeat([f"g{i}" for i in range(n_groups)], group_size)
