"""Typed value literals for worked examples.

Worked examples are stored as text; scoring and execution need the parsed
value and its inferred type.  The grammar: integers type as ``int``, decimals
and ``p/q`` fractions as ``float``, ``true``/``false`` as ``bool``, quoted
strings as ``str``, bracketed homogeneous lists as ``list[elem]``, and
parenthesized tuples as ``tuple[...]``.  Everything round-trips through
:func:`format_value` (rationals stay exact: integral values print bare,
non-integral ones as ``p/q``).
"""

from __future__ import annotations

from fractions import Fraction

from .typesys import BaseType, Constructor, TypeTerm


class ValueError_(ValueError):
    """A literal that does not parse (or a heterogeneous list)."""


def parse_value(text: str) -> tuple[object, TypeTerm]:
    value, typ, rest = _parse(text, 0)
    if text[rest:].strip():
        raise ValueError_(f"trailing input in {text!r}")
    return value, typ


def parse_example_input(text: str) -> tuple[tuple[object, ...], tuple[TypeTerm, ...]]:
    """Parse an example input tuple like ``(3, 4.0)``; unary inputs may omit
    the parentheses."""
    stripped = text.strip()
    if not stripped.startswith("("):
        v, t = parse_value(stripped)
        return (v,), (t,)
    vals, typs, rest = _parse_seq(stripped, 1, ")")
    if stripped[rest:].strip():
        raise ValueError_(f"trailing input in {text!r}")
    return tuple(vals), tuple(typs)


def _skip(text: str, i: int) -> int:
    while i < len(text) and text[i].isspace():
        i += 1
    return i


def _parse_seq(text: str, i: int, close: str) -> tuple[list[object], list[TypeTerm], int]:
    vals: list[object] = []
    typs: list[TypeTerm] = []
    i = _skip(text, i)
    if i < len(text) and text[i] == close:
        return vals, typs, i + 1
    while True:
        v, t, i = _parse(text, i)
        vals.append(v)
        typs.append(t)
        i = _skip(text, i)
        if i >= len(text):
            raise ValueError_(f"unterminated sequence in {text!r}")
        if text[i] == close:
            return vals, typs, i + 1
        if text[i] != ",":
            raise ValueError_(f"expected ',' at {i} in {text!r}")
        i += 1


def _parse(text: str, i: int) -> tuple[object, TypeTerm, int]:
    i = _skip(text, i)
    if i >= len(text):
        raise ValueError_(f"empty literal in {text!r}")
    ch = text[i]
    if ch == "[":
        vals, typs, i = _parse_seq(text, i + 1, "]")
        if not typs:
            raise ValueError_("empty list literal has no element type")
        if any(t != typs[0] for t in typs):
            raise ValueError_("heterogeneous list literal")
        return list(vals), Constructor("list", (typs[0],)), i
    if ch == "(":
        vals, typs, i = _parse_seq(text, i + 1, ")")
        return tuple(vals), Constructor("tuple", tuple(typs)), i
    if ch in "\"'":
        j = text.find(ch, i + 1)
        if j < 0:
            raise ValueError_(f"unterminated string in {text!r}")
        return text[i + 1 : j], BaseType("str"), j + 1
    j = i
    while j < len(text) and text[j] not in ",)]":
        j += 1
    word = text[i:j].strip()
    if word in ("true", "false"):
        return word == "true", BaseType("bool"), j
    try:
        frac = Fraction(word)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError_(f"bad literal {word!r}") from exc
    is_int = frac.denominator == 1 and "." not in word and "/" not in word and "e" not in word.lower()
    return frac, BaseType("int" if is_int else "float"), j


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, list):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, tuple):
        return "(" + ", ".join(format_value(v) for v in value) + ")"
    raise ValueError_(f"unformattable value {value!r}")


def format_example_input(values: tuple[object, ...]) -> str:
    return "(" + ", ".join(format_value(v) for v in values) + ")"
