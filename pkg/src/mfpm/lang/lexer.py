"""Tokenizer for the recipe language.

Strings are the one tricky part: a double-quoted string lexes into a single
STRING token whose value is a list of parts, each either a literal str or a
nested token list for an ``${...}`` interpolation.  The parser re-enters
itself on those sublists.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import RecipeSyntaxError

KEYWORDS = {"let", "in", "rec", "if", "then", "else", "true", "false"}

PUNCT = {
    "{": "LBRACE",
    "}": "RBRACE",
    "[": "LBRACKET",
    "]": "RBRACKET",
    "(": "LPAREN",
    ")": "RPAREN",
    "=": "EQ",
    ";": "SEMI",
    ":": "COLON",
    ",": "COMMA",
    ".": "DOT",
}

_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | set("0123456789-")


@dataclass
class Token:
    kind: str  # IDENT, INT, STRING, keyword name, punct name, EOF
    value: object
    line: int
    column: int


class _Cursor:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0
        self.line = 1
        self.col = 1

    def peek(self, ahead: int = 0) -> str:
        i = self.pos + ahead
        return self.src[i] if i < len(self.src) else ""

    def advance(self) -> str:
        ch = self.src[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def error(self, message: str) -> RecipeSyntaxError:
        return RecipeSyntaxError(message, self.line, self.col)


def tokenize(source: str) -> list[Token]:
    cur = _Cursor(source)
    tokens = _tokens_until(cur, terminator=None)
    tokens.append(Token("EOF", None, cur.line, cur.col))
    return tokens


def _tokens_until(cur: _Cursor, terminator: str | None) -> list[Token]:
    """Lex until EOF or an unbalanced `terminator` punct (consumed)."""
    tokens: list[Token] = []
    depth = 0
    while cur.pos < len(cur.src):
        ch = cur.peek()
        line, col = cur.line, cur.col
        if ch in " \t\r\n":
            cur.advance()
            continue
        if ch == "#":
            while cur.pos < len(cur.src) and cur.peek() != "\n":
                cur.advance()
            continue
        if terminator and ch == terminator and depth == 0:
            cur.advance()
            return tokens
        if ch == '"':
            tokens.append(_lex_string(cur))
            continue
        if ch in _IDENT_START:
            name = []
            while cur.pos < len(cur.src) and cur.peek() in _IDENT_CONT:
                name.append(cur.advance())
            word = "".join(name)
            kind = word if word in KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, line, col))
            continue
        if ch.isdigit():
            digits = []
            while cur.pos < len(cur.src) and cur.peek().isdigit():
                digits.append(cur.advance())
            if cur.peek() == ".":  # guard against float literals
                raise cur.error("floating point literals are not supported")
            tokens.append(Token("INT", int("".join(digits)), line, col))
            continue
        if ch in PUNCT:
            if terminator:
                if ch == "{":
                    depth += 1
                elif ch == "}":
                    depth -= 1
            cur.advance()
            tokens.append(Token(PUNCT[ch], ch, line, col))
            continue
        raise cur.error(f"unexpected character {ch!r}")
    if terminator:
        raise cur.error(f"unterminated construct, expected {terminator!r}")
    return tokens


def _lex_string(cur: _Cursor) -> Token:
    line, col = cur.line, cur.col
    cur.advance()  # opening quote
    parts: list = []
    literal: list[str] = []
    while True:
        if cur.pos >= len(cur.src):
            raise cur.error("unterminated string")
        ch = cur.peek()
        if ch == '"':
            cur.advance()
            break
        if ch == "\\":
            cur.advance()
            esc = cur.advance() if cur.pos < len(cur.src) else ""
            mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\", "$": "$"}.get(esc)
            if mapped is None:
                raise cur.error(f"unknown escape \\{esc}")
            literal.append(mapped)
            continue
        if ch == "$" and cur.peek(1) == "{":
            if literal:
                parts.append("".join(literal))
                literal = []
            cur.advance()
            cur.advance()
            inner = _tokens_until(cur, terminator="}")
            inner.append(Token("EOF", None, cur.line, cur.col))
            parts.append(inner)
            continue
        literal.append(cur.advance())
    if literal or not parts:
        parts.append("".join(literal))
    return Token("STRING", parts, line, col)
