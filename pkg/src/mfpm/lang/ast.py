"""AST node types for the recipe language."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Pos:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Expr:
    pos: Pos = field(repr=False)


@dataclass(frozen=True)
class StringLit(Expr):
    # Each part is either a literal str or an interpolated Expr.
    parts: tuple


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool


@dataclass(frozen=True)
class ListLit(Expr):
    items: tuple


@dataclass(frozen=True)
class AttrSet(Expr):
    bindings: tuple  # ((name, Expr), ...) in source order, names unique
    recursive: bool = False


@dataclass(frozen=True)
class IdentPattern:
    name: str


@dataclass(frozen=True)
class SetPattern:
    names: tuple


@dataclass(frozen=True)
class Lambda(Expr):
    param: IdentPattern | SetPattern
    body: Expr


@dataclass(frozen=True)
class Apply(Expr):
    fn: Expr
    arg: Expr


@dataclass(frozen=True)
class Select(Expr):
    expr: Expr
    attr_path: tuple  # one or more attribute-name strings


@dataclass(frozen=True)
class LetIn(Expr):
    bindings: tuple  # ((name, Expr), ...)
    body: Expr


@dataclass(frozen=True)
class If(Expr):
    cond: Expr
    then: Expr
    otherwise: Expr


@dataclass(frozen=True)
class Ident(Expr):
    name: str


@dataclass(frozen=True)
class BuiltinRef(Expr):
    name: str
