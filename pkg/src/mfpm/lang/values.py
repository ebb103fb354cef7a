"""Runtime values and call-by-need thunks.

Every value carries a `tainted` flag that marks data derived from impure
builtins.  Taint rides along through interpolation, coercion, conditionals
and attribute selection, so a job whose derivation consumed impure data is
flagged even when the impure thunk itself was forced once by a sibling.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

from ..errors import EvalError


@dataclass(frozen=True)
class VStr:
    value: str
    tainted: bool = False


@dataclass(frozen=True)
class VInt:
    value: int
    tainted: bool = False


@dataclass(frozen=True)
class VBool:
    value: bool
    tainted: bool = False


@dataclass(frozen=True)
class VList:
    items: tuple  # of Thunk
    tainted: bool = False


@dataclass(frozen=True)
class VAttrs:
    members: dict  # name -> Thunk
    tainted: bool = False


@dataclass(frozen=True)
class VClosure:
    param: object  # IdentPattern | SetPattern
    body: object  # Expr
    env: object  # Scope
    tainted: bool = False


@dataclass(frozen=True)
class VBuiltin:
    name: str
    fn: object  # callable(evaluator, arg_thunk) -> value
    tainted: bool = False


@dataclass(frozen=True)
class VDrv:
    """An evaluated derivation: its file path plus computed output paths."""

    drv_path: object  # StorePath
    outputs: tuple  # ((name, StorePath), ...) sorted
    selected: str = "out"
    platforms: tuple | None = None  # from meta.platforms, None = unrestricted
    tainted: bool = False

    def output(self, name: str):
        for n, p in self.outputs:
            if n == name:
                return p
        raise EvalError(f"derivation has no output named {name!r}")

    @property
    def selected_path(self):
        return self.output(self.selected)


Value = VStr | VInt | VBool | VList | VAttrs | VClosure | VBuiltin | VDrv


def with_taint(value: Value, tainted: bool) -> Value:
    if not tainted or value.tainted:
        return value
    return replace(value, tainted=True)


def type_name(value: Value) -> str:
    return {
        VStr: "string",
        VInt: "integer",
        VBool: "boolean",
        VList: "list",
        VAttrs: "attribute set",
        VClosure: "function",
        VBuiltin: "builtin function",
        VDrv: "derivation",
    }[type(value)]


class Thunk:
    """A suspended computation, forced at most once.

    Forcing is guarded by a per-thunk RLock: concurrent eval workers block
    until the first forcing finishes, while re-entry from the same thread
    means the value depends on itself.
    """

    __slots__ = ("_lock", "_state", "_payload")

    def __init__(self, expr, env):
        self._lock = threading.RLock()
        self._state = "suspended"
        self._payload = (expr, env)

    @classmethod
    def of_value(cls, value: Value) -> "Thunk":
        t = cls.__new__(cls)
        t._lock = threading.RLock()
        t._state = "done"
        t._payload = value
        return t

    def force(self, evaluator) -> Value:
        if self._state == "done":
            return self._payload
        with self._lock:
            if self._state == "done":
                return self._payload
            if self._state == "error":
                raise self._payload
            if self._state == "forcing":
                raise EvalError("infinite recursion: value depends on itself")
            self._state = "forcing"
            expr, env = self._payload
            try:
                value = evaluator.eval(expr, env)
            except EvalError as e:
                self._state = "error"
                self._payload = e
                raise
            self._state = "done"
            self._payload = value
            return value


class Scope:
    """Immutable chain of name → Thunk bindings."""

    __slots__ = ("bindings", "parent")

    def __init__(self, bindings: dict, parent: "Scope | None" = None):
        self.bindings = bindings
        self.parent = parent

    def lookup(self, name: str) -> Thunk | None:
        scope = self
        while scope is not None:
            thunk = scope.bindings.get(name)
            if thunk is not None:
                return thunk
            scope = scope.parent
        return None

    def child(self, bindings: dict) -> "Scope":
        return Scope(bindings, self)
