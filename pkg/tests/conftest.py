import os
import sys

import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Modules use paths relative to the repo root (conf/, data/), so make sure
# imports and file loading work no matter where pytest is invoked from.
if REPO_ROOT not in sys.path:
    sys.path.insert(0, REPO_ROOT)


@pytest.fixture(scope="session", autouse=True)
def repo_root_cwd():
    os.chdir(REPO_ROOT)


def _named(name):
    from src.rcpolymer.graph import load_named_graph

    return load_named_graph(name)


@pytest.fixture(scope="session")
def k2(repo_root_cwd):
    return _named("k2")


@pytest.fixture(scope="session")
def c3(repo_root_cwd):
    return _named("c3")


@pytest.fixture(scope="session")
def c4(repo_root_cwd):
    return _named("c4")


@pytest.fixture(scope="session")
def k4(repo_root_cwd):
    return _named("k4")


@pytest.fixture(scope="session")
def k6(repo_root_cwd):
    return _named("k6")


@pytest.fixture(scope="session")
def petersen(repo_root_cwd):
    return _named("petersen")
