import numpy as np
import pytest

from panelpost.panel_core import PanelDataset, build_design


def random_panel(N=4, M=3, T=2, k=1, seed=0, fe_scale=1.0, noise=1.0) -> PanelDataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, M, T, k))
    a = fe_scale * rng.standard_normal((N, 1, 1))
    g = fe_scale * rng.standard_normal((1, M, 1))
    at = 0.3 * fe_scale * rng.standard_normal((N, 1, T))
    y = x @ np.linspace(1.0, 0.5, k) + a + g + at + noise * rng.standard_normal((N, M, T))
    return PanelDataset(y, x)


@pytest.fixture
def small_panel():
    return random_panel(N=4, M=3, T=2, k=1, seed=11)


@pytest.fixture
def small_system(small_panel):
    return build_design(small_panel)


class FlatLayout:
    """Layout stand-in for a non-panel matrix: every column is a target."""

    def __init__(self, p, NM):
        self.p, self.N, self.M, self.k, self.k0 = p, NM, 1, p, p

    def name(self, col):
        return f"col_{col}"

    def as_dict(self):
        return {"p": self.p}


def generic_system(Z, y, cluster=None):
    """DesignSystem around an arbitrary dense matrix with unit penalty weights."""
    from panelpost.panel_core import DesignSystem
    import scipy.sparse as sp
    n, p = Z.shape
    cluster = np.arange(n) if cluster is None else np.asarray(cluster)
    NM = int(cluster.max()) + 1
    return DesignSystem(Y=np.asarray(y, float), Z=sp.csc_matrix(Z), S_diag=np.full(p, np.sqrt(NM)),
                        cluster_of_row=cluster, layout=FlatLayout(p, NM))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
