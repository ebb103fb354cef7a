"""Derivation model: canonical serialization, hashing, and output paths.

A derivation is the machine-level build recipe: builder, args, environment,
input derivations, input sources, and output paths.  Two hashes matter:

* the derivation-file path, a content hash of the serialized derivation —
  sensitive to every build-process detail;
* the output path, computed from a "hash modulo" in which fixed-output
  inputs are collapsed to their declared content identity.  That collapse is
  what lets two derivations that differ only in how they fetch a pinned
  source land on identical output paths.

The byte format is specified in docs/drv-format.md and frozen by golden
tests; changing it is a breaking format change.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, replace
from typing import Callable

from .archive import FileNode
from .errors import CycleDetected, EvalError, MissingInput, UnknownOutput
from .paths import STORE_PREFIX, StorePath, valid_name

_OUTPUT_NAME_RE = re.compile(r"^[a-z][a-z0-9]*$")
_ESCAPED = "\\;,[]"


@dataclass(frozen=True)
class Derivation:
    name: str
    builder: str  # rendered store path of the executable
    args: tuple[str, ...] = ()
    env: tuple[tuple[str, str], ...] = ()  # sorted (key, value) pairs
    input_drvs: tuple[tuple[str, tuple[str, ...]], ...] = ()  # (drv path, sorted output names)
    input_srcs: tuple[str, ...] = ()  # sorted rendered store paths
    outputs: tuple[tuple[str, str], ...] = (("out", ""),)  # (name, path or "")
    fixed_output: tuple[str, str] | None = None  # (hash algo, content digest hex)

    def validate(self):
        if not valid_name(self.name) or self.name.endswith(".drv"):
            raise EvalError(f"bad derivation name {self.name!r}")
        out_names = [n for n, _ in self.outputs]
        if "out" not in out_names:
            raise EvalError(f"derivation {self.name}: outputs must include 'out'")
        for n in out_names:
            if not _OUTPUT_NAME_RE.match(n):
                raise EvalError(f"derivation {self.name}: bad output name {n!r}")
        if len(set(out_names)) != len(out_names):
            raise EvalError(f"derivation {self.name}: duplicate output names")
        if self.fixed_output is not None:
            if out_names != ["out"]:
                raise EvalError(f"derivation {self.name}: fixed-output derivations have a single 'out'")
            algo, digest = self.fixed_output
            if algo != "sha256" or not re.match(r"^[0-9a-f]{64}$", digest):
                raise EvalError(f"derivation {self.name}: fixed output must be a sha256 hex digest")
        for k, _ in self.env:
            if not k or "=" in k or "\n" in k:
                raise EvalError(f"derivation {self.name}: bad env key {k!r}")
        for seq in (self.env, self.input_drvs, self.outputs):
            keys = [k for k, _ in seq]
            if keys != sorted(keys):
                raise EvalError(f"derivation {self.name}: fields not in canonical order")
        if list(self.input_srcs) != sorted(self.input_srcs):
            raise EvalError(f"derivation {self.name}: inputSrcs not sorted")

    def env_dict(self) -> dict[str, str]:
        return dict(self.env)

    def output_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.outputs)

    def output_path(self, name: str) -> StorePath:
        for n, p in self.outputs:
            if n == name:
                if not p:
                    raise UnknownOutput(f"{self.name}: output {name} not computed yet")
                return StorePath.parse(p)
        raise UnknownOutput(f"{self.name}: no output named {name}")


def make_derivation(
    name: str,
    builder: str,
    args: list[str] = (),
    env: dict[str, str] | None = None,
    input_drvs: dict[str, set[str]] | None = None,
    input_srcs: list[str] = (),
    output_names: list[str] = ("out",),
    fixed_output: tuple[str, str] | None = None,
) -> Derivation:
    """Normalize loose collections into a canonical Derivation."""
    drv = Derivation(
        name=name,
        builder=builder,
        args=tuple(args),
        env=tuple(sorted((env or {}).items())),
        input_drvs=tuple(sorted((k, tuple(sorted(v))) for k, v in (input_drvs or {}).items())),
        input_srcs=tuple(sorted(input_srcs)),
        outputs=tuple(sorted((n, "") for n in output_names)),
        fixed_output=fixed_output,
    )
    drv.validate()
    return drv


# -- canonical byte format ------------------------------------------------


def _esc(s: str) -> str:
    out = []
    for ch in s:
        if ch in _ESCAPED:
            out.append("\\")
        out.append(ch)
    return "".join(out)


def canonical_serialize(drv: Derivation) -> bytes:
    args = ",".join(_esc(a) for a in drv.args)
    env = ",".join(f"{_esc(k)}={_esc(v)}" for k, v in drv.env)
    inputs = ",".join(f"{_esc(p)}:({','.join(_esc(o) for o in outs)})" for p, outs in drv.input_drvs)
    srcs = ",".join(_esc(s) for s in drv.input_srcs)
    outs = ",".join(f"{_esc(n)}:{_esc(p)}" for n, p in drv.outputs)
    fixed = f"{drv.fixed_output[0]}:{drv.fixed_output[1]}" if drv.fixed_output else "none"
    text = (
        f"Drv({_esc(drv.name)};{_esc(drv.builder)};args=[{args}];env=[{env}];"
        f"inputDrvs=[{inputs}];inputSrcs=[{srcs}];outputs=[{outs}];fixed={fixed})"
    )
    return text.encode("utf-8")


def _split_unescaped(s: str, sep: str) -> list[str]:
    parts, cur, i = [], [], 0
    while i < len(s):
        ch = s[i]
        if ch == "\\" and i + 1 < len(s):
            cur.append(s[i : i + 2])
            i += 2
            continue
        if ch == sep:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return parts


def _unesc(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append(s[i + 1])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def parse_drv(data: bytes) -> Derivation:
    """Inverse of canonical_serialize. Raises EvalError on malformed input."""
    text = data.decode("utf-8")
    if not text.startswith("Drv(") or not text.endswith(")"):
        raise EvalError("not a serialized derivation")
    fields = _split_unescaped(text[4:-1], ";")
    if len(fields) != 8:
        raise EvalError(f"expected 8 derivation fields, got {len(fields)}")
    name, builder = _unesc(fields[0]), _unesc(fields[1])

    def body(i: int, prefix: str) -> str:
        f = fields[i]
        if not f.startswith(prefix + "=[") or not f.endswith("]"):
            raise EvalError(f"malformed {prefix} field")
        return f[len(prefix) + 2 : -1]

    def items(i: int, prefix: str) -> list[str]:
        inner = body(i, prefix)
        return _split_unescaped(inner, ",") if inner else []

    args = tuple(_unesc(a) for a in items(2, "args"))
    env = []
    for entry in items(3, "env"):
        k, _, v = entry.partition("=")
        env.append((_unesc(k), _unesc(v)))
    input_drvs = []
    for entry in items(4, "inputDrvs"):
        p, _, outs = entry.partition(":")
        if not outs.startswith("(") or not outs.endswith(")"):
            raise EvalError(f"malformed inputDrvs entry {entry!r}")
        names = outs[1:-1]
        input_drvs.append((_unesc(p), tuple(_unesc(o) for o in _split_unescaped(names, ",")) if names else ()))
    input_srcs = tuple(_unesc(s) for s in items(5, "inputSrcs"))
    outputs = []
    for entry in items(6, "outputs"):
        n, _, p = entry.partition(":")
        outputs.append((_unesc(n), _unesc(p)))
    fixed_field = fields[7]
    if not fixed_field.startswith("fixed="):
        raise EvalError("malformed fixed field")
    fixed_val = fixed_field[len("fixed=") :]
    fixed = None
    if fixed_val != "none":
        algo, _, digest = fixed_val.partition(":")
        fixed = (algo, digest)
    drv = Derivation(
        name=name,
        builder=builder,
        args=args,
        env=tuple(env),
        input_drvs=tuple(input_drvs),
        input_srcs=input_srcs,
        outputs=tuple(outputs),
        fixed_output=fixed,
    )
    drv.validate()
    return drv


# -- hashing ----------------------------------------------------------------

Lookup = Callable[[StorePath], Derivation]


class HashModulo:
    """Recursive derivation digest with fixed-output insulation.

    Fixed-output derivations hash to a function of (algo, content digest,
    name) alone, so everything about *how* they build is invisible to
    downstream output paths.  Results are memoized per derivation path.
    """

    def __init__(self, lookup: Lookup):
        self.lookup = lookup
        self._memo: dict[str, bytes] = {}
        self._in_progress: set[str] = set()
        # One resolver may be shared across eval workers; the RLock keeps the
        # in-progress set coherent (re-entry by the same thread is the
        # recursive descent, re-entry on the same key is a genuine cycle).
        self._lock = threading.RLock()

    def digest(self, drv: Derivation, drv_path: str | None = None) -> bytes:
        with self._lock:
            return self._digest(drv, drv_path)

    def _digest(self, drv: Derivation, drv_path: str | None) -> bytes:
        key = drv_path or canonical_serialize(drv).decode()
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        if key in self._in_progress:
            raise CycleDetected(f"derivation cycle through {drv.name}")
        self._in_progress.add(key)
        try:
            if drv.fixed_output is not None:
                algo, content = drv.fixed_output
                preimage = f"fixed:out:{algo}:{content}:{drv.name}".encode("ascii")
                result = hashlib.sha256(preimage).digest()
            else:
                rewritten_inputs = []
                for path_str, outs in drv.input_drvs:
                    path = StorePath.parse(path_str)
                    try:
                        input_drv = self.lookup(path)
                    except Exception as e:
                        raise MissingInput(f"{drv.name}: cannot resolve input {path_str}: {e}") from e
                    rewritten_inputs.append((self._digest(input_drv, path_str).hex(), outs))
                stripped = replace(
                    drv,
                    input_drvs=tuple(sorted(rewritten_inputs)),
                    outputs=tuple((n, "") for n, _ in drv.outputs),
                )
                result = hashlib.sha256(canonical_serialize(stripped)).digest()
        finally:
            self._in_progress.discard(key)
        self._memo[key] = result
        return result


def hash_modulo(drv: Derivation, lookup: Lookup) -> bytes:
    return HashModulo(lookup).digest(drv)


def compute_output_path(drv: Derivation, output_name: str, hasher: HashModulo) -> StorePath:
    if output_name not in drv.output_names():
        raise UnknownOutput(f"{drv.name}: no output named {output_name}")
    modulo = hasher.digest(drv).hex()
    preimage = f"output:{output_name}:{modulo}:{STORE_PREFIX}:{drv.name}".encode("ascii")
    digest = hashlib.sha256(preimage).digest()[:20]
    rendered_name = drv.name if output_name == "out" else f"{drv.name}-{output_name}"
    from .paths import base32_digest

    return StorePath(base32_digest(digest), rendered_name)


def fill_output_paths(drv: Derivation, hasher: HashModulo) -> Derivation:
    outputs = tuple((n, compute_output_path(drv, n, hasher).render()) for n, _ in drv.outputs)
    return replace(drv, outputs=outputs)


def drv_file_path(drv: Derivation) -> StorePath:
    payload = canonical_serialize(drv)
    return StorePath.for_content(f"drvfile:{drv.name}:", f"{drv.name}.drv", payload)


def instantiate(drv: Derivation, store) -> StorePath:
    """Write the serialized derivation into the store; idempotent."""
    for _, p in drv.outputs:
        if not p:
            raise EvalError(f"derivation {drv.name}: instantiate before outputs were computed")
    path = drv_file_path(drv)
    if not store.has_path(path):
        refs = [StorePath.parse(p) for p, _ in drv.input_drvs]
        refs += [StorePath.parse(s) for s in drv.input_srcs]
        store.register(path, FileNode(canonical_serialize(drv)), references=tuple(sorted(set(refs))))
    return path


def load_drv(store, path: StorePath) -> Derivation:
    node = store.get_node(path)
    if not isinstance(node, FileNode):
        raise EvalError(f"{path} is not a derivation file")
    return parse_drv(node.data)


def store_lookup(store) -> Lookup:
    return lambda path: load_drv(store, path)


def pretty_json(drv: Derivation) -> str:
    """Display-only JSON rendering (sorted keys, 1-space indent); never hashed."""
    import json

    doc = {
        "args": list(drv.args),
        "builder": drv.builder,
        "env": dict(drv.env),
        "inputDrvs": {p: list(outs) for p, outs in drv.input_drvs},
        "inputSrcs": list(drv.input_srcs),
        "outputs": {n: {"path": p} for n, p in drv.outputs},
    }
    if drv.fixed_output:
        doc["fixedOutput"] = {"hashAlgo": drv.fixed_output[0], "contentDigest": drv.fixed_output[1]}
    return json.dumps(doc, sort_keys=True, indent=1)
