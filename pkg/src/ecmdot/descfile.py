"""Line-oriented ``key = value`` descriptor file format.

Machine and kernel descriptors share one tiny text format:

* one ``key = value`` assignment per line,
* ``#`` starts a comment (full-line or trailing),
* blank lines are ignored,
* ``[section]`` headers group keys (used for per-ISA port tables),
* numeric values may be integers (``64``), decimals (``2.77``) or
  rationals (``1/2``).

Parsing is strict: malformed lines, duplicate keys and unknown keys are
errors, and every parse error carries the 1-based line number it
occurred on.
"""

from __future__ import annotations

from fractions import Fraction

__all__ = [
    "DescriptorError",
    "DescriptorParseError",
    "DescriptorInvariantError",
    "parse_sections",
    "parse_number",
    "format_number",
]


class DescriptorError(ValueError):
    """Base class for descriptor-file problems."""


class DescriptorParseError(DescriptorError):
    """Raised for malformed descriptor text; knows its line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DescriptorInvariantError(DescriptorError):
    """Raised when a structurally valid descriptor has inconsistent values."""

    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Split descriptor text into sections of raw key/value pairs.

    Returns a mapping ``section -> {key: (raw_value, line_number)}``.
    Keys appearing before any ``[section]`` header live in section ``""``.
    """
    sections: dict[str, dict[str, tuple[str, int]]] = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise DescriptorParseError("unterminated section header", lineno)
            current = line[1:-1].strip()
            if not current:
                raise DescriptorParseError("empty section name", lineno)
            if current in sections:
                raise DescriptorParseError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            continue
        if "=" not in line:
            raise DescriptorParseError(
                f"expected 'key = value', got {line!r}", lineno
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise DescriptorParseError("missing key before '='", lineno)
        if not value:
            raise DescriptorParseError(f"missing value for key {key!r}", lineno)
        if key in sections[current]:
            raise DescriptorParseError(f"duplicate key {key!r}", lineno)
        sections[current][key] = (value, lineno)
    return sections


def parse_number(raw: str, *, key: str, line: int) -> float:
    """Parse an integer, decimal or rational (``1/2``) value as a float."""
    try:
        if "/" in raw:
            return float(Fraction(raw))
        return float(raw)
    except (ValueError, ZeroDivisionError):
        raise DescriptorParseError(
            f"invalid numeric value {raw!r} for key {key!r}", line
        ) from None


def format_number(value: float) -> str:
    """Render a float so that parsing it back reproduces the same value.

    Small dyadic fractions are written as rationals (``1/2``) to match
    how port throughputs are usually quoted; everything else uses the
    shortest exact decimal repr.
    """
    frac = Fraction(value)
    if 1 < frac.denominator <= 64:
        return f"{frac.numerator}/{frac.denominator}"
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)
