"""Lazy evaluator turning recipe expressions into values and derivations.

Impure analogues of version/shell introspection are injected through
`EvalConfig`, never read from the ambient environment, so tests can replay
an evaluation "on a different system" by changing the stubs.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

from .. import drv as drvmod
from ..archive import FileNode
from ..errors import EvalError
from ..paths import StorePath, valid_name
from . import ast
from .values import (
    Scope,
    Thunk,
    VAttrs,
    VBool,
    VBuiltin,
    VClosure,
    VDrv,
    VInt,
    VList,
    VStr,
    Value,
    type_name,
    with_taint,
)

IMPURE_BUILTINS = ("sysVersion", "inShell")

# Injected by the build environment, never via derivation attributes.
RESERVED_ENV_KEYS = {"PATH", "MFPM_SOURCE_MIRROR"}

DEFAULT_FETCH_SCRIPT = """\
#!/bin/sh
# Copy one pinned source file out of the local mirror; the realizer checks
# the declared content hash afterwards.
if [ -z "$MFPM_SOURCE_MIRROR" ]; then
  echo "fetch-file: no source mirror available"
  exit 1
fi
src="$MFPM_SOURCE_MIRROR/$urlSha256"
if [ ! -f "$src" ]; then
  echo "fetch-file: $url not present in mirror"
  exit 1
fi
while IFS= read -r line; do
  printf '%s\\n' "$line"
done < "$src" > "$out"
if [ -n "$line" ]; then
  printf '%s' "$line" >> "$out"
fi
exit 0
"""


@dataclass(frozen=True)
class EvalConfig:
    sys_version: str = "2.6"
    in_shell: bool = False
    platform: str = "x86_64-linux"
    max_workers: int = 1


@dataclass
class EvalTrace:
    impure_builtins_used: set = field(default_factory=set)
    errors: list = field(default_factory=list)  # (attr_path tuple, message)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_impure(self, name: str):
        with self._lock:
            self.impure_builtins_used.add(name)

    def record_error(self, attr_path: tuple, message: str):
        with self._lock:
            self.errors.append((attr_path, message))


class Evaluator:
    def __init__(self, store, config: EvalConfig = EvalConfig(), trace: EvalTrace | None = None):
        self.store = store
        self.config = config
        self.trace = trace if trace is not None else EvalTrace()
        self._registry: dict[str, drvmod.Derivation] = {}
        self._registry_lock = threading.Lock()
        self._hasher = drvmod.HashModulo(self._lookup)
        self._builtins = {
            "derivation": VBuiltin("derivation", _builtin_derivation),
            "fetchFile": VBuiltin("fetchFile", _builtin_fetch_file),
            "toString": VBuiltin("toString", _builtin_to_string),
        }

    # -- derivation registry -------------------------------------------

    def _lookup(self, path: StorePath) -> drvmod.Derivation:
        rendered = path.render() if isinstance(path, StorePath) else path
        with self._registry_lock:
            found = self._registry.get(rendered)
        if found is not None:
            return found
        return drvmod.load_drv(self.store, StorePath.parse(rendered))

    def register_derivation(self, path: StorePath, derivation: drvmod.Derivation):
        with self._registry_lock:
            self._registry[path.render()] = derivation

    def lookup(self, path: StorePath) -> drvmod.Derivation:
        return self._lookup(path)

    # -- evaluation ------------------------------------------------------

    def eval_source(self, source: str) -> Value:
        from .parser import parse

        return self.eval(parse(source), Scope({}))

    def eval_expr(self, expr: ast.Expr, scope: dict | None = None) -> Value:
        bindings = {name: Thunk.of_value(v) for name, v in (scope or {}).items()}
        return self.eval(expr, Scope(bindings))

    def eval(self, expr: ast.Expr, env: Scope) -> Value:
        method = self._dispatch.get(type(expr))
        if method is None:
            raise EvalError(f"cannot evaluate {type(expr).__name__}", str(expr.pos))
        return method(self, expr, env)

    def force(self, thunk: Thunk) -> Value:
        return thunk.force(self)

    def _eval_int(self, expr: ast.IntLit, env: Scope) -> Value:
        return VInt(expr.value)

    def _eval_bool(self, expr: ast.BoolLit, env: Scope) -> Value:
        return VBool(expr.value)

    def _eval_string(self, expr: ast.StringLit, env: Scope) -> Value:
        chunks = []
        tainted = False
        for part in expr.parts:
            if isinstance(part, str):
                chunks.append(part)
            else:
                value = self.eval(part, env)
                text, t = self.coerce_to_string(value, where=str(part.pos))
                chunks.append(text)
                tainted |= t
        return VStr("".join(chunks), tainted)

    def _eval_list(self, expr: ast.ListLit, env: Scope) -> Value:
        return VList(tuple(Thunk(item, env) for item in expr.items))

    def _eval_attrs(self, expr: ast.AttrSet, env: Scope) -> Value:
        if not expr.recursive:
            return VAttrs({name: Thunk(e, env) for name, e in expr.bindings})
        members: dict[str, Thunk] = {}
        inner = env.child(members)
        for name, e in expr.bindings:
            members[name] = Thunk(e, inner)
        return VAttrs(members)

    def _eval_let(self, expr: ast.LetIn, env: Scope) -> Value:
        bindings: dict[str, Thunk] = {}
        inner = env.child(bindings)
        for name, e in expr.bindings:
            bindings[name] = Thunk(e, inner)
        return self.eval(expr.body, inner)

    def _eval_ident(self, expr: ast.Ident, env: Scope) -> Value:
        thunk = env.lookup(expr.name)
        if thunk is not None:
            return self.force(thunk)
        return self._builtin_value(expr.name, expr.pos)

    def _eval_builtin_ref(self, expr: ast.BuiltinRef, env: Scope) -> Value:
        return self._builtin_value(expr.name, expr.pos)

    def _builtin_value(self, name: str, pos: ast.Pos) -> Value:
        if name == "sysVersion":
            self.trace.record_impure("sysVersion")
            return VStr(self.config.sys_version, tainted=True)
        if name == "inShell":
            self.trace.record_impure("inShell")
            return VBool(self.config.in_shell, tainted=True)
        builtin = self._builtins.get(name)
        if builtin is not None:
            return builtin
        raise EvalError(f"undefined identifier {name!r}", str(pos))

    def _eval_lambda(self, expr: ast.Lambda, env: Scope) -> Value:
        return VClosure(expr.param, expr.body, env)

    def _eval_apply(self, expr: ast.Apply, env: Scope) -> Value:
        fn = self.eval(expr.fn, env)
        arg = Thunk(expr.arg, env)
        return self.apply(fn, arg, where=str(expr.pos))

    def apply(self, fn: Value, arg: Thunk, where: str = "") -> Value:
        if isinstance(fn, VBuiltin):
            return fn.fn(self, arg, where)
        if not isinstance(fn, VClosure):
            raise EvalError(f"attempt to call a {type_name(fn)}", where)
        if isinstance(fn.param, ast.IdentPattern):
            scope = fn.env.child({fn.param.name: arg})
            return with_taint(self.eval(fn.body, scope), fn.tainted)
        value = self.force(arg)
        if not isinstance(value, VAttrs):
            raise EvalError(f"set pattern needs an attribute set, got {type_name(value)}", where)
        wanted = set(fn.param.names)
        given = set(value.members)
        if wanted - given:
            missing = ", ".join(sorted(wanted - given))
            raise EvalError(f"missing attributes in function call: {missing}", where)
        if given - wanted:
            extra = ", ".join(sorted(given - wanted))
            raise EvalError(f"unexpected attributes in function call: {extra}", where)
        scope = fn.env.child({name: value.members[name] for name in fn.param.names})
        return with_taint(self.eval(fn.body, scope), fn.tainted or value.tainted)

    def _eval_select(self, expr: ast.Select, env: Scope) -> Value:
        value = self.eval(expr.expr, env)
        for segment in expr.attr_path:
            value = self.select(value, segment, where=str(expr.pos))
        return value

    def select(self, value: Value, name: str, where: str = "") -> Value:
        if isinstance(value, VAttrs):
            thunk = value.members.get(name)
            if thunk is None:
                raise EvalError(f"attribute {name!r} missing", where)
            return with_taint(self.force(thunk), value.tainted)
        if isinstance(value, VDrv):
            value.output(name)  # raises if unknown
            return VDrv(value.drv_path, value.outputs, selected=name,
                        platforms=value.platforms, tainted=value.tainted)
        raise EvalError(f"cannot select {name!r} from a {type_name(value)}", where)

    def _eval_if(self, expr: ast.If, env: Scope) -> Value:
        cond = self.eval(expr.cond, env)
        if not isinstance(cond, VBool):
            raise EvalError(f"if condition must be a boolean, got {type_name(cond)}", str(expr.pos))
        branch = expr.then if cond.value else expr.otherwise
        return with_taint(self.eval(branch, env), cond.tainted)

    _dispatch = {
        ast.IntLit: _eval_int,
        ast.BoolLit: _eval_bool,
        ast.StringLit: _eval_string,
        ast.ListLit: _eval_list,
        ast.AttrSet: _eval_attrs,
        ast.LetIn: _eval_let,
        ast.Ident: _eval_ident,
        ast.BuiltinRef: _eval_builtin_ref,
        ast.Lambda: _eval_lambda,
        ast.Apply: _eval_apply,
        ast.Select: _eval_select,
        ast.If: _eval_if,
    }

    # -- coercions --------------------------------------------------------

    def coerce_to_string(self, value: Value, where: str = "") -> tuple[str, bool]:
        """String coercion for interpolation and toString."""
        if isinstance(value, VStr):
            return value.value, value.tainted
        if isinstance(value, VInt):
            return str(value.value), value.tainted
        if isinstance(value, VBool):
            return ("1" if value.value else ""), value.tainted
        if isinstance(value, VDrv):
            return value.selected_path.render(), value.tainted
        if isinstance(value, VList):
            chunks, tainted = [], value.tainted
            for item in value.items:
                text, t = self.coerce_to_string(self.force(item), where)
                chunks.append(text)
                tainted |= t
            return " ".join(chunks), tainted
        raise EvalError(f"cannot coerce a {type_name(value)} to a string", where)

    def coerce_env_value(self, value: Value, deps: dict, where: str = "") -> tuple[str, bool]:
        """Like string coercion, but records derivation inputs into `deps`."""
        if isinstance(value, VDrv):
            deps.setdefault(value.drv_path.render(), set()).add(value.selected)
            return value.selected_path.render(), value.tainted
        if isinstance(value, VList):
            chunks, tainted = [], value.tainted
            for item in value.items:
                text, t = self.coerce_env_value(self.force(item), deps, where)
                chunks.append(text)
                tainted |= t
            return " ".join(chunks), tainted
        return self.coerce_to_string(value, where)


# -- builtin functions ---------------------------------------------------


def _builtin_to_string(ev: Evaluator, arg: Thunk, where: str) -> Value:
    text, tainted = ev.coerce_to_string(ev.force(arg), where)
    return VStr(text, tainted)


def _force_attrs(ev: Evaluator, arg: Thunk, what: str, where: str) -> VAttrs:
    value = ev.force(arg)
    if not isinstance(value, VAttrs):
        raise EvalError(f"{what} expects an attribute set, got {type_name(value)}", where)
    return value


def _require_str(ev: Evaluator, attrs: VAttrs, key: str, what: str, where: str) -> VStr:
    thunk = attrs.members.get(key)
    if thunk is None:
        raise EvalError(f"{what}: missing required attribute {key!r}", where)
    value = ev.force(thunk)
    if not isinstance(value, VStr):
        raise EvalError(f"{what}: attribute {key!r} must be a string", where)
    return value


def _builtin_derivation(ev: Evaluator, arg: Thunk, where: str) -> Value:
    attrs = _force_attrs(ev, arg, "derivation", where)
    members = attrs.members
    tainted = attrs.tainted

    name_v = _require_str(ev, attrs, "name", "derivation", where)
    name = name_v.value
    tainted |= name_v.tainted
    if not valid_name(name) or name.endswith(".drv"):
        raise EvalError(f"derivation: invalid name {name!r}", where)

    deps: dict[str, set] = {}
    input_srcs: set[str] = set()

    # Builder: either inline script text or another derivation's output.
    script_t = members.get("builderScript")
    builder_t = members.get("builder")
    if (script_t is None) == (builder_t is None):
        raise EvalError("derivation: exactly one of 'builderScript' or 'builder' is required", where)
    if script_t is not None:
        script_v = ev.force(script_t)
        if not isinstance(script_v, VStr):
            raise EvalError("derivation: 'builderScript' must be a string", where)
        tainted |= script_v.tainted
        script_path = ev.store.add_file(
            f"{name}-builder.sh", script_v.value.encode("utf-8"), executable=True
        )
        builder = script_path.render()
        input_srcs.add(builder)
    else:
        builder_v = ev.force(builder_t)
        if not isinstance(builder_v, VDrv):
            raise EvalError("derivation: 'builder' must be a derivation", where)
        tainted |= builder_v.tainted
        deps.setdefault(builder_v.drv_path.render(), set()).add(builder_v.selected)
        builder = builder_v.selected_path.render()

    args: list[str] = []
    args_t = members.get("args")
    if args_t is not None:
        args_v = ev.force(args_t)
        if not isinstance(args_v, VList):
            raise EvalError("derivation: 'args' must be a list", where)
        for item in args_v.items:
            text, t = ev.coerce_env_value(ev.force(item), deps, where)
            args.append(text)
            tainted |= t

    output_names = ["out"]
    outputs_t = members.get("outputs")
    if outputs_t is not None:
        outputs_v = ev.force(outputs_t)
        if not isinstance(outputs_v, VList):
            raise EvalError("derivation: 'outputs' must be a list of names", where)
        output_names = []
        for item in outputs_v.items:
            item_v = ev.force(item)
            if not isinstance(item_v, VStr):
                raise EvalError("derivation: output names must be strings", where)
            output_names.append(item_v.value)

    fixed = None
    if "outputHash" in members or "outputHashAlgo" in members:
        algo = _require_str(ev, attrs, "outputHashAlgo", "derivation", where).value
        digest = _require_str(ev, attrs, "outputHash", "derivation", where).value
        fixed = (algo, digest)

    platforms = None
    meta_t = members.get("meta")
    if meta_t is not None:
        meta_v = ev.force(meta_t)
        if not isinstance(meta_v, VAttrs):
            raise EvalError("derivation: 'meta' must be an attribute set", where)
        platforms_t = meta_v.members.get("platforms")
        if platforms_t is not None:
            platforms_v = ev.force(platforms_t)
            if not isinstance(platforms_v, VList):
                raise EvalError("derivation: 'meta.platforms' must be a list", where)
            collected = []
            for item in platforms_v.items:
                item_v = ev.force(item)
                if not isinstance(item_v, VStr):
                    raise EvalError("derivation: 'meta.platforms' entries must be strings", where)
                collected.append(item_v.value)
                tainted |= item_v.tainted
            platforms = tuple(collected)

    handled = {"name", "builderScript", "builder", "args", "outputs", "outputHash", "outputHashAlgo", "meta"}
    env = {"name": name}
    for key in sorted(members):
        if key in handled:
            continue
        if key in RESERVED_ENV_KEYS or key in output_names or key == "name":
            raise EvalError(f"derivation: attribute {key!r} is reserved for the build environment", where)
        text, t = ev.coerce_env_value(ev.force(members[key]), deps, where)
        env[key] = text
        tainted |= t

    derivation = drvmod.make_derivation(
        name=name,
        builder=builder,
        args=args,
        env=env,
        input_drvs=deps,
        input_srcs=sorted(input_srcs),
        output_names=output_names,
        fixed_output=fixed,
    )
    return _finish_derivation(ev, derivation, platforms, tainted)


def _builtin_fetch_file(ev: Evaluator, arg: Thunk, where: str) -> Value:
    attrs = _force_attrs(ev, arg, "fetchFile", where)
    members = attrs.members
    tainted = attrs.tainted

    url_v = _require_str(ev, attrs, "url", "fetchFile", where)
    sha_v = _require_str(ev, attrs, "sha256", "fetchFile", where)
    tainted |= url_v.tainted | sha_v.tainted

    if "name" in members:
        name_v = _require_str(ev, attrs, "name", "fetchFile", where)
        name = name_v.value
        tainted |= name_v.tainted
    else:
        name = url_v.value.rstrip("/").rsplit("/", 1)[-1]
    if not valid_name(name):
        raise EvalError(f"fetchFile: cannot derive a valid name from {url_v.value!r}", where)

    script_text = DEFAULT_FETCH_SCRIPT
    if "script" in members:
        script_v = _require_str(ev, attrs, "script", "fetchFile", where)
        script_text = script_v.value
        tainted |= script_v.tainted

    script_path = ev.store.add_file("fetch-file.sh", script_text.encode("utf-8"), executable=True)
    url_digest = hashlib.sha256(url_v.value.encode("utf-8")).hexdigest()
    derivation = drvmod.make_derivation(
        name=name,
        builder=script_path.render(),
        env={"name": name, "url": url_v.value, "urlSha256": url_digest},
        input_srcs=[script_path.render()],
        fixed_output=("sha256", sha_v.value),
    )
    return _finish_derivation(ev, derivation, None, tainted)


def _finish_derivation(ev: Evaluator, derivation, platforms, tainted: bool) -> VDrv:
    filled = drvmod.fill_output_paths(derivation, ev._hasher)
    drv_path = drvmod.instantiate(filled, ev.store)
    ev.register_derivation(drv_path, filled)
    outputs = tuple((n, StorePath.parse(p)) for n, p in filled.outputs)
    return VDrv(drv_path, outputs, platforms=platforms, tainted=tainted)
