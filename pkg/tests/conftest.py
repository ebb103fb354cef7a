import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import corpusgen  # noqa: E402

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "goldens")


def golden(name: str) -> bytes:
    with open(os.path.join(GOLDEN_DIR, name), "rb") as f:
        return f.read()


@pytest.fixture(scope="session")
def flaky_salt():
    return corpusgen.find_flaky_salt()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory, flaky_salt):
    """Generated revision snapshots + source mirror. Never mutated by tests."""
    base = tmp_path_factory.mktemp("corpus")
    return corpusgen.generate(str(base), flaky_salt=flaky_salt)


@pytest.fixture()
def store(tmp_path):
    from mfpm.store import Store

    return Store(str(tmp_path / "store"))


@pytest.fixture()
def state_dir(tmp_path):
    path = tmp_path / "state"
    path.mkdir()
    return str(path)


@pytest.fixture(scope="session")
def ci_session(tmp_path_factory, corpus):
    """One CI run over the full corpus, shared by read-only audit tests.

    Tests that execute builders against this state (and therefore advance
    the per-derivation seed serials, e.g. rebuild flows) must run their own
    CI instead.
    """
    from mfpm.cache import BinaryCache
    from mfpm.ci import ci_run, load_manifest
    from mfpm.sandbox import SandboxPolicy
    from mfpm.store import Store

    base = tmp_path_factory.mktemp("ci-session")
    store = Store(str(base / "store"))
    cache = BinaryCache(str(base / "cache"))
    state = str(base / "state")
    os.makedirs(state, exist_ok=True)
    revisions = load_manifest(corpus.revisions_root)
    summary = ci_run(
        revisions,
        [],
        cache,
        store,
        state,
        sandbox=SandboxPolicy.v1(),
        source_mirror=corpus.mirror,
        max_parallel=4,
    )
    return {
        "store": store,
        "cache": cache,
        "state": state,
        "revisions": revisions,
        "summary": summary,
        "corpus": corpus,
    }
