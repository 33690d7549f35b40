from importlib import resources
from pathlib import Path

import pytest

from adqc.cli import load_config, run_pipeline
from adqc.pcm import eap_abilities, fit_pcm
from adqc.simulate import SimConfig, random_items, simulate_responses

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return Path(str(resources.files("adqc.data").joinpath("demo")))


@pytest.fixture(scope="session")
def demo_run(demo_dir, tmp_path_factory):
    """One full pipeline run over the bundled demo study."""
    cfg = load_config(str(demo_dir / "config.toml"))
    cfg.paths["out"] = tmp_path_factory.mktemp("demo_run")
    manifest = run_pipeline(cfg)
    return cfg, manifest


@pytest.fixture(scope="session")
def sim500():
    """500 persons x 40 items simulated from known parameters (seed 7), fitted."""
    items = random_items(40, 7)
    matrix, thetas = simulate_responses(SimConfig(500, items, seed=7))
    fit = fit_pcm(matrix)
    abilities = eap_abilities(fit)
    return {"items": items, "matrix": matrix, "thetas": thetas, "fit": fit, "abilities": abilities}


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
