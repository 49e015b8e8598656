import pytest

from faceless.corpus import GeneratorConfig, generate_corpus, make_splits


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(n_identities=20, instances_per_identity=10)


@pytest.fixture(scope="session")
def small_corpus(small_config):
    return generate_corpus(small_config, seed=7)


@pytest.fixture(scope="session")
def small_splits(small_corpus):
    return make_splits(small_corpus, "within", seed=0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
