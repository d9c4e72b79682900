import numpy as np
import pytest

from photoscene import ad


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def directional_check(fn, x, rng, eps=1e-6):
    """(analytic, numeric) directional derivatives of scalar ``fn`` along a random direction."""
    x = np.asarray(x, dtype=np.float64)
    d = rng.standard_normal(x.shape)
    _, (g,) = ad.grad(fn, x)
    analytic = float(np.sum(g * d))
    hi = ad.as_tensor(fn(ad.Tensor(x + eps * d))).item()
    lo = ad.as_tensor(fn(ad.Tensor(x - eps * d))).item()
    return analytic, (hi - lo) / (2 * eps)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.max(np.abs(a)), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bundle_dir(tmp_path_factory):
    """Directory of the generated small two-view synthetic bundle."""
    import scenes
    from photoscene.synthetic import generate

    out = tmp_path_factory.mktemp("small_bundle")
    generate(scenes.small_synthetic(), out)
    return out


# ---------------------------------------------------------------- acceptance report

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")
    config.stash[CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    item.config.stash[CRITERIA][number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        verdict, title, detail = results[number]
        terminalreporter.write_line(f"{verdict} criterion {number}: {title}" + (f" ({detail})" if detail else ""))
