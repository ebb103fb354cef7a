import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import golden
from mfpm.archive import FileNode
from mfpm.drv import (
    HashModulo,
    canonical_serialize,
    compute_output_path,
    drv_file_path,
    fill_output_paths,
    hash_modulo,
    instantiate,
    load_drv,
    make_derivation,
    parse_drv,
    pretty_json,
    store_lookup,
)
from mfpm.errors import CycleDetected, EvalError, UnknownOutput
from mfpm.paths import StorePath

BUILDER = StorePath("a" * 32, "sh").render()


def _no_lookup(path):
    raise KeyError(path)


def minimal():
    return make_derivation(name="a", builder=BUILDER)


# -- canonical serialization -------------------------------------------------


def test_equal_derivations_serialize_identically():
    one = make_derivation(name="x", builder=BUILDER, env={"B": "2", "A": "1"})
    two = make_derivation(name="x", builder=BUILDER, env={"A": "1", "B": "2"})
    assert canonical_serialize(one) == canonical_serialize(two)


def test_env_insertion_order_is_canonicalized():
    env_orders = [{"z": "1", "a": "2", "m": "3"}, {"m": "3", "z": "1", "a": "2"}]
    blobs = {canonical_serialize(make_derivation(name="x", builder=BUILDER, env=e)) for e in env_orders}
    assert len(blobs) == 1


def test_minimal_golden_bytes():
    assert canonical_serialize(minimal()) == golden("minimal-unfilled.drv")
    filled = fill_output_paths(minimal(), HashModulo(_no_lookup))
    assert canonical_serialize(filled) == golden("minimal.drv")


def test_minimal_golden_paths():
    filled = fill_output_paths(minimal(), HashModulo(_no_lookup))
    lines = golden("minimal-paths.txt").decode().splitlines()
    assert lines[0] == f"out {filled.outputs[0][1]}"
    assert lines[1] == f"drv {drv_file_path(filled).render()}"


def test_parse_inverts_serialize():
    drv = make_derivation(
        name="weird",
        builder=BUILDER,
        args=["-c", "a;b", "x,[y]"],
        env={"msg": "semi;colon, [brackets] \\slash", "empty": ""},
        input_srcs=[StorePath("c" * 32, "src.sh").render()],
    )
    assert parse_drv(canonical_serialize(drv)) == drv


def test_escaping_keeps_fields_apart():
    drv = make_derivation(name="x", builder=BUILDER, env={"k": ";;,,[]\\"})
    parsed = parse_drv(canonical_serialize(drv))
    assert parsed.env_dict()["k"] == ";;,,[]\\"


def test_env_key_with_equals_rejected():
    with pytest.raises(EvalError):
        make_derivation(name="x", builder=BUILDER, env={"a=b": "v"})


def test_outputs_must_include_out():
    with pytest.raises(EvalError):
        make_derivation(name="x", builder=BUILDER, output_names=["lib"])


def test_fixed_output_single_output_only():
    with pytest.raises(EvalError):
        make_derivation(
            name="x", builder=BUILDER, output_names=["out", "dev"], fixed_output=("sha256", "0" * 64)
        )


# -- hash modulo ---------------------------------------------------------------


def test_fixed_output_hash_matches_standalone_sha256():
    digest = "ab" * 32
    drv = make_derivation(
        name="nano-7.2.tar.xz", builder=BUILDER, fixed_output=("sha256", digest)
    )
    expected = hashlib.sha256(f"fixed:out:sha256:{digest}:nano-7.2.tar.xz".encode()).digest()
    assert hash_modulo(drv, _no_lookup) == expected


def test_fixed_output_hash_ignores_builder_and_env():
    digest = "cd" * 32
    one = make_derivation(name="src", builder=BUILDER, fixed_output=("sha256", digest))
    other_builder = StorePath("b" * 32, "sh").render()
    two = make_derivation(
        name="src", builder=other_builder, env={"extra": "stuff"}, fixed_output=("sha256", digest)
    )
    assert hash_modulo(one, _no_lookup) == hash_modulo(two, _no_lookup)
    assert canonical_serialize(one) != canonical_serialize(two)


def _registry_lookup(registry):
    return lambda path: registry[path.render() if isinstance(path, StorePath) else path]


def _filled(drv, registry):
    hasher = HashModulo(_registry_lookup(registry))
    filled = fill_output_paths(drv, hasher)
    registry[drv_file_path(filled).render()] = filled
    return filled, drv_file_path(filled)


def test_curl_version_insulation():
    """Changing only a fetcher's builder changes the fetcher's drv path but
    not the dependent's output path."""
    content = "12" * 32
    registry = {}
    fetch_one = make_derivation(name="src-1.0", builder=BUILDER, fixed_output=("sha256", content))
    fetch_two = make_derivation(
        name="src-1.0",
        builder=StorePath("b" * 32, "curl-new").render(),
        fixed_output=("sha256", content),
    )
    f1, p1 = _filled(fetch_one, registry)
    f2, p2 = _filled(fetch_two, registry)
    assert p1 != p2
    assert f1.outputs == f2.outputs, "fixed outputs coincide"

    def dependent(fetcher_path, fetcher):
        reg = {fetcher_path.render(): fetcher}
        drv = make_derivation(
            name="app-1.0",
            builder=BUILDER,
            env={"src": dict(fetcher.outputs)["out"]},
            input_drvs={fetcher_path.render(): {"out"}},
        )
        return fill_output_paths(drv, HashModulo(_registry_lookup(reg)))

    dep1 = dependent(p1, f1)
    dep2 = dependent(p2, f2)
    assert dep1.outputs == dep2.outputs
    assert drv_file_path(dep1) != drv_file_path(dep2)


def test_multiple_outputs_distinct_paths():
    drv = make_derivation(name="ncurses-6.4", builder=BUILDER, output_names=["out", "dev"])
    hasher = HashModulo(_no_lookup)
    out = compute_output_path(drv, "out", hasher)
    dev = compute_output_path(drv, "dev", hasher)
    assert out != dev
    assert out.name == "ncurses-6.4"
    assert dev.name == "ncurses-6.4-dev"
    with pytest.raises(UnknownOutput):
        compute_output_path(drv, "doc", hasher)


def test_output_path_recomputation_stable():
    drv = minimal()
    a = compute_output_path(drv, "out", HashModulo(_no_lookup))
    b = compute_output_path(drv, "out", HashModulo(_no_lookup))
    assert a == b


def test_cycle_detected():
    # Two derivations naming each other as inputs.
    a_path = StorePath("e" * 32, "a.drv").render()
    b_path = StorePath("f" * 32, "b.drv").render()
    a = make_derivation(name="a", builder=BUILDER, input_drvs={b_path: {"out"}})
    b = make_derivation(name="b", builder=BUILDER, input_drvs={a_path: {"out"}})
    registry = {a_path: a, b_path: b}
    with pytest.raises(CycleDetected):
        hash_modulo(a, _registry_lookup(registry))


# -- randomized DAG properties ---------------------------------------------------

_env_text = st.text(alphabet="abcxyz;,[]\\=", max_size=6)


@st.composite
def dag_specs(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    nodes = []
    for i in range(n):
        fixed = draw(st.booleans()) if i == 0 else (draw(st.integers(0, 3)) == 0)
        deps = sorted(draw(st.sets(st.integers(0, i - 1), max_size=min(i, 3)))) if i and not fixed else []
        env = draw(st.dictionaries(st.sampled_from(["A", "B", "C"]), _env_text, max_size=3))
        nodes.append({"fixed": fixed, "deps": deps, "env": env})
    return nodes


def _build_dag(nodes, mutate_node=None, mutation=None):
    registry = {}
    built = []
    for i, spec in enumerate(nodes):
        env = dict(spec["env"])
        builder = BUILDER
        fixed = ("sha256", hashlib.sha256(f"content{i}".encode()).hexdigest()) if spec["fixed"] else None
        if mutate_node == i:
            if mutation == "builder":
                builder = StorePath("d" * 32, "sh-new").render()
            elif mutation == "env":
                env["MUT"] = "ated"
        input_drvs = {}
        for d in spec["deps"]:
            input_drvs[built[d][1].render()] = {"out"}
        drv = make_derivation(
            name=f"node{i}",
            builder=builder,
            env=env,
            input_drvs=input_drvs,
            fixed_output=fixed,
        )
        filled, path = _filled(drv, registry)
        built.append((filled, path))
    return built


@given(dag_specs())
@settings(max_examples=40)
def test_recomputation_is_pure(nodes):
    one = _build_dag(nodes)
    two = _build_dag(nodes)
    assert [(p.render(), d.outputs) for d, p in one] == [(p.render(), d.outputs) for d, p in two]


@given(dag_specs())
@settings(max_examples=40)
def test_fixed_input_builder_mutation_insulated(nodes):
    fixed_nodes = [i for i, s in enumerate(nodes) if s["fixed"]]
    if not fixed_nodes:
        return
    target = fixed_nodes[0]
    base = _build_dag(nodes)
    mutated = _build_dag(nodes, mutate_node=target, mutation="builder")
    assert base[target][1] != mutated[target][1], "own drv path must change"
    for i in range(len(nodes)):
        assert base[i][0].outputs == mutated[i][0].outputs, "no output path may move"


@given(dag_specs())
@settings(max_examples=40)
def test_env_mutation_changes_own_outputs(nodes):
    target = len(nodes) - 1
    if nodes[target]["fixed"]:
        return
    base = _build_dag(nodes)
    mutated = _build_dag(nodes, mutate_node=target, mutation="env")
    assert base[target][0].outputs != mutated[target][0].outputs
    assert base[target][1] != mutated[target][1]


# -- instantiate -------------------------------------------------------------


def test_instantiate_idempotent(store):
    filled = fill_output_paths(minimal(), HashModulo(_no_lookup))
    p1 = instantiate(filled, store)
    p2 = instantiate(filled, store)
    assert p1 == p2
    assert load_drv(store, p1) == filled


def test_instantiate_differs_on_env(store):
    one = fill_output_paths(
        make_derivation(name="x", builder=BUILDER, env={"v": "1"}), HashModulo(_no_lookup)
    )
    two = fill_output_paths(
        make_derivation(name="x", builder=BUILDER, env={"v": "2"}), HashModulo(_no_lookup)
    )
    assert instantiate(one, store) != instantiate(two, store)


def test_instantiate_requires_computed_outputs(store):
    with pytest.raises(EvalError):
        instantiate(minimal(), store)


def test_store_lookup_roundtrip(store):
    filled = fill_output_paths(minimal(), HashModulo(_no_lookup))
    path = instantiate(filled, store)
    assert store_lookup(store)(path) == filled


def test_pretty_json_keys():
    import json

    filled = fill_output_paths(minimal(), HashModulo(_no_lookup))
    doc = json.loads(pretty_json(filled))
    assert set(doc) >= {"args", "builder", "env", "inputDrvs", "inputSrcs", "outputs"}
