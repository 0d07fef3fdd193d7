import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparsegmpe import gmpe, library, synth  # noqa: E402

ACCEPTANCE_SEED = 0


@pytest.fixture(scope="session")
def builtins():
    return gmpe.builtin_models()


@pytest.fixture(scope="session")
def pga_builtin(builtins):
    return builtins[0]


@pytest.fixture(scope="session")
def pgv_builtin(builtins):
    return builtins[1]


def pga_truth_spec(phi, seed=ACCEPTANCE_SEED, **kw):
    pga = gmpe.builtin_model("pga")
    return synth.SynthSpec(truth=pga, n_events=500, records_per_event=10, tau=0.0, phi=phi,
                           seed=seed, **kw)


@pytest.fixture(scope="session")
def noisy_records():
    """5000 records from the builtin PGA equation, phi = 0.1, tau = 0."""
    return synth.generate(pga_truth_spec(0.1))


@pytest.fixture(scope="session")
def noiseless_records():
    return synth.generate(pga_truth_spec(0.0))


@pytest.fixture(scope="session")
def noisy_matrix(noisy_records):
    return library.build_design_matrix(noisy_records, library.default_library(), "pga")


@pytest.fixture(scope="session")
def noiseless_matrix(noiseless_records):
    return library.build_design_matrix(noiseless_records, library.default_library(), "pga")


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_RESULTS = []


def record_criterion(number, ok, detail):
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {number:>2}: {status}  {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
