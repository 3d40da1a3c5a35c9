import numpy as np
import pytest
from hypothesis import settings

from mint.dtdg import EdgeEvent, LabelParams, Regime, build_temporal_graph, generate_synthetic

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DAY = 86400


def events_from_counts(counts, seed=0, pool=12, start_day=100):
    """Edge events with exactly ``counts[d]`` transactions on day ``d``."""
    rng = np.random.default_rng(seed)
    out = []
    for d, k in enumerate(counts):
        for j in range(k):
            a, b = rng.choice(pool, size=2, replace=False)
            out.append(EdgeEvent(f"a{a}", f"a{b}", (start_day + d) * DAY + j, float(rng.integers(1, 5))))
    return out


@pytest.fixture
def tiny_graph():
    # 40 days, 27 of them labelled
    counts = [3, 5, 2, 4, 6, 1, 3, 2, 7, 4] * 4
    return build_temporal_graph("tiny", events_from_counts(counts), LabelParams())


@pytest.fixture(scope="session")
def small_regime():
    return Regime(days=60, base_intensity=8, node_pool=14, churn=0.05)


@pytest.fixture(scope="session")
def small_graphs(small_regime):
    return [generate_synthetic(s, small_regime, name=f"syn{s}") for s in range(3)]


def fd_check(f, inputs, step=1e-5):
    """Largest relative error between autograd and central differences.

    ``f`` maps float64 tensors to a scalar tensor. The relative error is
    measured per input as ||analytic - numeric|| / max(||numeric||, 1e-8).
    """
    import torch

    xs = [x.detach().clone().requires_grad_(True) for x in inputs]
    analytic = torch.autograd.grad(f(*xs), xs, allow_unused=True)
    worst = 0.0
    for k, x in enumerate(xs):
        num = torch.zeros_like(x)
        flat = x.detach().clone().reshape(-1)
        for i in range(flat.numel()):
            vals = []
            for sign in (1, -1):
                probe = flat.clone()
                probe[i] += sign * step
                args = [y.detach() for y in xs]
                args[k] = probe.reshape(x.shape)
                with torch.no_grad():
                    vals.append(float(f(*args)))
            num.reshape(-1)[i] = (vals[0] - vals[1]) / (2 * step)
        a = analytic[k] if analytic[k] is not None else torch.zeros_like(x)
        worst = max(worst, float((a - num).norm() / max(float(num.norm()), 1e-8)))
    return worst


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
