import secrets

import pytest

from lcm.client import LcmClient
from lcm.context import TrustedContext
from lcm.crypto import PlatformIdentity

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def platform():
    return PlatformIdentity.create("test-platform")


@pytest.fixture
def group(platform):
    """A bootstrapped context with three clients and the initial blob."""
    k_P, k_C = secrets.token_bytes(16), secrets.token_bytes(16)
    ctx = TrustedContext(platform)
    ctx.init(None)
    blob = ctx.bootstrap(k_P, k_C, [1, 2, 3])
    clients = {i: LcmClient(i, k_C) for i in (1, 2, 3)}
    return ctx, clients, blob, k_C


@pytest.fixture
def acceptance_report(request):
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda k: int(k[1:])):
        passed, detail = results[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
