"""Recursive-descent parser producing the recipe AST.

Grammar sketch (lowest precedence first):

    expr     := lambda | let-in | if-then-else | apply
    lambda   := IDENT ':' expr  |  '{' [IDENT {',' IDENT}] '}' ':' expr
    apply    := select {select}           (left-associative application)
    select   := primary {'.' attr-seg}
    primary  := INT | STRING | 'true' | 'false' | IDENT
              | '[' {select} ']' | attrset | 'rec' attrset | '(' expr ')'
    attrset  := '{' {attr-seg '=' expr ';'} '}'
    attr-seg := IDENT | STRING            (quoted segments may contain '.')
"""

from __future__ import annotations

from ..errors import RecipeSyntaxError
from . import ast
from .lexer import Token, tokenize


def parse(source: str) -> ast.Expr:
    return _Parser(tokenize(source)).parse_program()


def parse_tokens(tokens: list[Token]) -> ast.Expr:
    return _Parser(tokens).parse_program()


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        i = min(self.pos + ahead, len(self.tokens) - 1)
        return self.tokens[i]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.next()
        if tok.kind != kind:
            raise self.error(tok, f"expected {kind}, found {tok.kind}")
        return tok

    def error(self, tok: Token, message: str) -> RecipeSyntaxError:
        return RecipeSyntaxError(message, tok.line, tok.column)

    def at(self, tok: Token) -> ast.Pos:
        return ast.Pos(tok.line, tok.column)

    # -- entry ---------------------------------------------------------

    def parse_program(self) -> ast.Expr:
        expr = self.parse_expr()
        tok = self.peek()
        if tok.kind != "EOF":
            raise self.error(tok, f"trailing input, found {tok.kind}")
        return expr

    def parse_expr(self) -> ast.Expr:
        tok = self.peek()
        if tok.kind == "IDENT" and self.peek(1).kind == "COLON":
            name = self.next()
            self.next()  # colon
            return ast.Lambda(self.at(name), ast.IdentPattern(name.value), self.parse_expr())
        if tok.kind == "LBRACE" and self._looks_like_pattern():
            return self.parse_set_pattern_lambda()
        if tok.kind == "let":
            return self.parse_let()
        if tok.kind == "if":
            return self.parse_if()
        return self.parse_apply()

    def _looks_like_pattern(self) -> bool:
        # '{' '}' ':'  or  '{' IDENT (',' | '}') — attribute sets always
        # follow a name with '=' instead.
        if self.peek(1).kind == "RBRACE":
            return self.peek(2).kind == "COLON"
        if self.peek(1).kind == "IDENT":
            return self.peek(2).kind in ("COMMA", "RBRACE")
        return False

    def parse_set_pattern_lambda(self) -> ast.Expr:
        brace = self.expect("LBRACE")
        names: list[str] = []
        if self.peek().kind != "RBRACE":
            while True:
                names.append(self.expect("IDENT").value)
                if self.peek().kind == "COMMA":
                    self.next()
                    continue
                break
        self.expect("RBRACE")
        self.expect("COLON")
        if len(set(names)) != len(names):
            raise self.error(brace, "duplicate name in set pattern")
        return ast.Lambda(self.at(brace), ast.SetPattern(tuple(names)), self.parse_expr())

    def parse_let(self) -> ast.Expr:
        tok = self.expect("let")
        bindings = []
        seen = set()
        while self.peek().kind != "in":
            name = self.parse_attr_name()
            if name in seen:
                raise self.error(self.peek(), f"duplicate let binding {name!r}")
            seen.add(name)
            self.expect("EQ")
            bindings.append((name, self.parse_expr()))
            self.expect("SEMI")
        self.expect("in")
        return ast.LetIn(self.at(tok), tuple(bindings), self.parse_expr())

    def parse_if(self) -> ast.Expr:
        tok = self.expect("if")
        cond = self.parse_expr()
        self.expect("then")
        then = self.parse_expr()
        self.expect("else")
        return ast.If(self.at(tok), cond, then, self.parse_expr())

    _ARG_START = ("IDENT", "INT", "STRING", "true", "false", "rec", "LBRACE", "LBRACKET", "LPAREN")

    def parse_apply(self) -> ast.Expr:
        expr = self.parse_select()
        while self.peek().kind in self._ARG_START:
            arg = self.parse_select()
            expr = ast.Apply(expr.pos, expr, arg)
        return expr

    def parse_select(self) -> ast.Expr:
        expr = self.parse_primary()
        if self.peek().kind != "DOT":
            return expr
        segments = []
        while self.peek().kind == "DOT":
            self.next()
            segments.append(self.parse_attr_name())
        return ast.Select(expr.pos, expr, tuple(segments))

    def parse_attr_name(self) -> str:
        tok = self.next()
        if tok.kind == "IDENT":
            return tok.value
        if tok.kind == "STRING":
            parts = tok.value
            if len(parts) != 1 or not isinstance(parts[0], str):
                raise self.error(tok, "attribute names must be plain strings")
            return parts[0]
        raise self.error(tok, f"expected attribute name, found {tok.kind}")

    def parse_primary(self) -> ast.Expr:
        tok = self.peek()
        pos = self.at(tok)
        if tok.kind == "INT":
            self.next()
            return ast.IntLit(pos, tok.value)
        if tok.kind in ("true", "false"):
            self.next()
            return ast.BoolLit(pos, tok.kind == "true")
        if tok.kind == "STRING":
            self.next()
            parts = tuple(p if isinstance(p, str) else parse_tokens(p) for p in tok.value)
            return ast.StringLit(pos, parts)
        if tok.kind == "IDENT":
            self.next()
            return ast.Ident(pos, tok.value)
        if tok.kind == "LBRACKET":
            self.next()
            items = []
            while self.peek().kind != "RBRACKET":
                items.append(self.parse_select())
            self.next()
            return ast.ListLit(pos, tuple(items))
        if tok.kind == "rec":
            self.next()
            return self.parse_attrset(recursive=True)
        if tok.kind == "LBRACE":
            return self.parse_attrset(recursive=False)
        if tok.kind == "LPAREN":
            self.next()
            expr = self.parse_expr()
            self.expect("RPAREN")
            return expr
        raise self.error(tok, f"expected an expression, found {tok.kind}")

    def parse_attrset(self, recursive: bool) -> ast.Expr:
        brace = self.expect("LBRACE")
        bindings = []
        seen = set()
        while self.peek().kind != "RBRACE":
            name = self.parse_attr_name()
            if name in seen:
                raise self.error(self.peek(), f"duplicate attribute {name!r}")
            seen.add(name)
            self.expect("EQ")
            bindings.append((name, self.parse_expr()))
            self.expect("SEMI")
        self.next()
        return ast.AttrSet(self.at(brace), tuple(bindings), recursive=recursive)
