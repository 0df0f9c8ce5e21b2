"""Tokenizer for the supported BUGS-dialect model language.

Produces a flat token stream with 1-based source positions. Comments run
from ``#`` to end of line. Numbers are standard double literals; a malformed
or overflowing literal is a :class:`LexError` at its starting position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

IDENT = "ident"
NUMBER = "number"
KEYWORD = "keyword"
SYMBOL = "symbol"
EOF = "eof"

KEYWORDS = frozenset({"model", "for", "in", "T"})

# Longest symbols first so '<-' and '<=' win over '<'.
_SYMBOLS = ("<-", "<=", ">=", "==", "!=", "~", "(", ")", "[", "]",
            "{", "}", ",", ":", "+", "-", "*", "/", "^", "<", ">")


class LexError(Exception):
    """Illegal character or malformed number, with source position."""

    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.message = message


@dataclass(frozen=True)
class Token:
    kind: str
    lexeme: str
    line: int = field(compare=False, default=0)
    column: int = field(compare=False, default=0)

    def __repr__(self):  # compact form for parser error messages
        if self.kind == EOF:
            return "<eof>"
        return f"{self.kind}({self.lexeme!r})"


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch == "_"


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch in "._"


def tokenize(source: str) -> list[Token]:
    """Tokenize model source text into a list ending with an EOF token."""
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if _is_ident_start(ch):
            start, start_col = i, col
            while i < n and _is_ident_char(source[i]):
                i += 1
                col += 1
            lexeme = source[start:i]
            kind = KEYWORD if lexeme in KEYWORDS else IDENT
            tokens.append(Token(kind, lexeme, line, start_col))
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            start, start_col = i, col
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == ".":
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j >= n or not source[j].isdigit():
                    raise LexError(line, start_col,
                                   f"malformed number {source[start:i + 1]!r}")
                i = j
                while i < n and source[i].isdigit():
                    i += 1
            col = start_col + (i - start)
            lexeme = source[start:i]
            try:
                value = float(lexeme)
            except ValueError:
                raise LexError(line, start_col, f"malformed number {lexeme!r}") from None
            if not math.isfinite(value):
                raise LexError(line, start_col, f"number {lexeme!r} overflows a double")
            tokens.append(Token(NUMBER, lexeme, line, start_col))
            continue
        matched = False
        for sym in _SYMBOLS:
            if source.startswith(sym, i):
                tokens.append(Token(SYMBOL, sym, line, col))
                i += len(sym)
                col += len(sym)
                matched = True
                break
        if not matched:
            raise LexError(line, col, f"illegal character {ch!r}")
    tokens.append(Token(EOF, "", line, col))
    return tokens
