"""Text format for generator architectures.

::

    input(3, 32, 32)
    block(u=deconv, k=3, ch=16, pad=zero, norm=batch, act=relu, sc=false, seq=post)

``u``, ``k`` and ``ch`` are required; the other keys default to
``pad=zero, norm=none, act=none, sc=false, seq=post``. ``#`` starts a
comment that runs to the end of the line.
"""

import re
from dataclasses import dataclass

__all__ = ["BlockSpec", "ArchSpec", "ParseError", "parse", "to_text", "ENUMS",
           "MAX_RESOLUTION"]

ENUMS = {
    "u": ("nearest", "bilinear", "deconv"),
    "pad": ("zero", "reflect", "replicate"),
    "norm": ("batch", "instance", "none"),
    "act": ("relu", "sigmoid", "tanh", "none"),
    "sc": ("true", "false"),
    "seq": ("pre", "post"),
}
INT_KEYS = ("k", "ch")
KEY_ORDER = ("u", "k", "ch", "pad", "norm", "act", "sc", "seq")
REQUIRED = ("u", "k", "ch")
DEFAULTS = {"pad": "zero", "norm": "none", "act": "none", "sc": "false", "seq": "post"}
MAX_RESOLUTION = 4096


class ParseError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class BlockSpec:
    u: str
    k: int
    ch: int
    pad: str = "zero"
    norm: str = "none"
    act: str = "none"
    sc: bool = False
    seq: str = "post"

    def __post_init__(self):
        for key in ("u", "pad", "norm", "act", "seq"):
            if getattr(self, key) not in ENUMS[key]:
                raise ValueError(f"unknown enum value {getattr(self, key)!r} for {key}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.k}")
        if self.ch < 1:
            raise ValueError(f"channels must be >= 1, got {self.ch}")


@dataclass(frozen=True)
class ArchSpec:
    input: tuple
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(v) for v in self.input))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.input) != 3 or min(self.input) < 1:
            raise ValueError(f"input must be three positive ints, got {self.input}")
        if not self.blocks:
            raise ValueError("an architecture needs at least one block")

    @property
    def output_shape(self):
        C, H, W = self.input
        f = 2 ** len(self.blocks)
        return (self.blocks[-1].ch, H * f, W * f)


_TOKEN = re.compile(r"(?P<ws>[ \t\r\n]+)|(?P<comment>#[^\n]*)|(?P<int>\d+)"
                    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[(),=])")


def _tokenize(text):
    tokens, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind in ("int", "ident", "punct"):
            tokens.append((kind, m.group(), line, col))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = pos + m.group().rfind("\n") + 1
        pos = m.end()
    tokens.append(("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, tok[2], tok[3])

    def expect(self, kind, value=None):
        tok = self.peek()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = repr(value) if value is not None else kind
            got = "end of input" if tok[0] == "eof" else repr(tok[1])
            self.fail(f"expected {want}, got {got}")
        self.i += 1
        return tok

    def positive_int(self):
        tok = self.expect("int")
        if int(tok[1]) < 1:
            self.fail("value must be positive", tok)
        return int(tok[1])

    def header(self):
        self.expect("ident", "input")
        self.expect("punct", "(")
        dims = [self.positive_int()]
        for _ in range(2):
            self.expect("punct", ",")
            dims.append(self.positive_int())
        self.expect("punct", ")")
        return tuple(dims)

    def block(self):
        start = self.expect("ident", "block")
        self.expect("punct", "(")
        fields = {}
        while True:
            key_tok = self.expect("ident")
            key = key_tok[1]
            if key not in KEY_ORDER:
                self.fail(f"unknown key {key!r}", key_tok)
            if key in fields:
                self.fail(f"duplicate key {key!r}", key_tok)
            self.expect("punct", "=")
            val_tok = self.peek()
            if key in INT_KEYS:
                value = self.positive_int()
                if key == "k" and value % 2 == 0:
                    self.fail(f"kernel size must be odd, got {value}", val_tok)
            else:
                value = self.expect("ident")[1]
                if value not in ENUMS[key]:
                    self.fail(f"unknown enum value {value!r} for {key}", val_tok)
            fields[key] = value
            if self.peek()[1] == ",":
                self.i += 1
                continue
            self.expect("punct", ")")
            break
        missing = [k for k in REQUIRED if k not in fields]
        if missing:
            self.fail(f"missing required key {missing[0]!r}", start)
        fields = {**DEFAULTS, **fields}
        fields["sc"] = fields["sc"] == "true"
        return BlockSpec(**fields), start

    def arch(self):
        dims = self.header()
        blocks = []
        while True:
            block, start = self.block()
            blocks.append(block)
            if max(dims[1:]) * 2 ** len(blocks) > MAX_RESOLUTION:
                self.fail(f"resolution exceeds {MAX_RESOLUTION} after block {len(blocks)}",
                          start)
            if self.peek()[0] == "eof":
                break
        return ArchSpec(dims, blocks)


def parse(text):
    """Parse architecture text into an :class:`ArchSpec`; errors carry line/col."""
    return _Parser(text).arch()


def to_text(spec):
    """Canonical text: header line, then one fully spelled block per line."""
    if not spec.blocks:
        raise ValueError("an architecture needs at least one block")
    lines = ["input({},{},{})".format(*spec.input)]
    for b in spec.blocks:
        vals = {**b.__dict__, "sc": "true" if b.sc else "false"}
        lines.append("block(" + ",".join(f"{k}={vals[k]}" for k in KEY_ORDER) + ")")
    return "\n".join(lines) + "\n"
