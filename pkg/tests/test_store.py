import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import golden
from mfpm.archive import DirNode, FileNode
from mfpm.errors import UnknownPath
from mfpm.paths import StorePath
from mfpm.store import Store


def test_add_tree_idempotent(store):
    node = FileNode(b"hello\n")
    first = store.add_tree("greeting", node)
    second = store.add_tree("greeting", node)
    assert first == second
    assert store.has_path(first)


def test_empty_dir_golden_path(store):
    path = store.add_tree("empty", DirNode())
    assert path.render().encode() + b"\n" == golden("empty-dir-path.txt")


def test_same_logical_tree_same_path(store, tmp_path):
    import os

    from mfpm import archive

    a, b = tmp_path / "a", tmp_path / "b"
    for d, order in ((a, ("x", "y")), (b, ("y", "x"))):
        os.makedirs(d)
        for name in order:
            (d / name).write_text(name)
    os.utime(a / "x", (0, 0))
    assert store.add_tree("t", archive.read_tree(str(a))) == store.add_tree("t", archive.read_tree(str(b)))


@given(
    one=st.binary(max_size=32),
    other=st.binary(max_size=32),
)
@settings(max_examples=50)
def test_content_addressing_both_directions(tmp_path_factory, one, other):
    store = Store(str(tmp_path_factory.mktemp("cas")))
    p1 = store.add_tree("blob", FileNode(one))
    p2 = store.add_tree("blob", FileNode(other))
    assert (p1 == p2) == (one == other)


def test_unknown_path_lookups(store):
    missing = StorePath("a" * 32, "ghost")
    assert not store.has_path(missing)
    with pytest.raises(UnknownPath):
        store.get_node(missing)
    with pytest.raises(UnknownPath):
        store.references(missing)


def test_registered_tree_is_read_only(store):
    import os

    path = store.add_tree("ro", DirNode({"f": FileNode(b"data")}))
    physical = store.physical(path)
    assert not os.stat(physical).st_mode & 0o222
    assert not os.stat(os.path.join(physical, "f")).st_mode & 0o222


def test_reregistration_keeps_original(store):
    path = store.add_tree("orig", FileNode(b"one"))
    # Same path can only carry the same content; register is a no-op.
    again = store.register(path, FileNode(b"one"))
    assert again == path
    assert store.get_node(path).data == b"one"


def test_closure_no_references(store):
    path = store.add_tree("lonely", FileNode(b"x"))
    assert store.list_closure(path) == {path}


def test_closure_follows_recorded_edges(store):
    dep = store.add_tree("dep", FileNode(b"dep"))
    root_node = FileNode(f"uses {dep.render()}\n".encode())
    root = StorePath("b" * 32, "root")
    store.register(root, root_node, references=(dep,))
    assert store.list_closure(root) == {root, dep}


def test_export_import_roundtrip(store, tmp_path):
    path = store.add_tree("obj", DirNode({"f": FileNode(b"content")}))
    data = store.export_archive(path)
    other = Store(str(tmp_path / "other-store"))
    imported = other.import_archive(data, path)
    assert imported == path
    assert other.get_node(path) == store.get_node(path)


def test_import_source_archive_recomputes_path(store, tmp_path):
    path = store.add_tree("obj", FileNode(b"content"))
    data = store.export_archive(path)
    other = Store(str(tmp_path / "other-store"))
    assert other.import_source_archive(data, "obj") == path


def test_concurrent_registration_single_winner(store):
    node = DirNode({"f": FileNode(b"same bytes")})
    paths = []
    errors = []

    def add():
        try:
            paths.append(store.add_tree("race", node))
        except Exception as e:  # noqa: BLE001 (collected for assertion)
            errors.append(e)

    threads = [threading.Thread(target=add) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(set(paths)) == 1
    assert store.get_node(paths[0]) == node
