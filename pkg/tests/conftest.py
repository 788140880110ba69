import pytest

from qftcausal.protocol import build_table, load_fixture


@pytest.fixture(scope="session")
def fixture_tables():
    """Parsed shipped fixtures and their pairing tables, built once per session."""
    cache = {}

    def get(name):
        if name not in cache:
            spec = load_fixture(name)
            cache[name] = (spec, build_table(spec))
        return cache[name]

    return get
