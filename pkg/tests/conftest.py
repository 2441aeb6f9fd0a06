import numpy as np
import pytest

from mmwave_cran.channel import LinkStateSpace, sticky_chain
from mmwave_cran.dynamics import Network, SystemParams, TrafficModel

DESK_SPACE = LinkStateSpace(("NLOS", "LOS"), (3.0, 8.0))


def desk_network(handover="history", lam=2.0, gamma=30.0, q_max=2, J=2):
    ch = sticky_chain(DESK_SPACE, 0.6)
    params = SystemParams(J=J, q_max=q_max, drop_weight=gamma, handover=handover)
    return Network(params, chains=(ch,) * (2 * J), traffic=TrafficModel(lam))


def frozen_network(J=2, q_max=2):
    """Identity link chains, positive rates, no traffic."""
    from mmwave_cran.channel import LinkChain
    ch = LinkChain(DESK_SPACE, np.eye(2))
    return Network(SystemParams(J=J, q_max=q_max), chains=(ch,) * (2 * J),
                   traffic=TrafficModel(0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def desk():
    return desk_network()


# ------------------------------------------------------------ acceptance
def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    item.config._criteria[number] = (report.passed, title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, title, detail = results[number]
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
