import numpy as np
import pytest

from dualalp.instances import random_unichain_mdp
from dualalp.mdp import MdpModel, stationary_distribution
from dualalp.queueing import QueueNetConfig, build_features, build_queue_mdp, heuristic_policy, queue_sampling


def two_state_cycle(loss=(0.2, 0.6)):
    """Deterministic 2-state chain with a single action."""
    return MdpModel.from_dense(np.array(loss), np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def small_mdp():
    return random_unichain_mdp(5, 2, seed=7)


@pytest.fixture(scope="session")
def instance_family():
    """The 20 small unichain instances shared by the oracle and SGD checks."""
    out = []
    for k in range(20):
        X = int(np.random.default_rng(1000 + k).integers(4, 13))
        out.append(random_unichain_mdp(X, 2, 1000 + k))
    return out


class QueueBench:
    def __init__(self):
        self.config = QueueNetConfig.reduced()
        self.model = build_queue_mdp(self.config)
        self.policies = {k: heuristic_policy(k, self.config) for k in ("LONGER", "LBFS")}
        self.mus = {k: stationary_distribution(self.model, p) for k, p in self.policies.items()}
        self.features, self.labels = build_features(
            self.config, self.model, [self.mus["LONGER"], self.mus["LBFS"]]
        )
        self.sampling = queue_sampling(self.features)


@pytest.fixture(scope="session")
def queue_bench():
    return QueueBench()


# one pass/fail line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
