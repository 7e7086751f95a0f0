"""Keyword-only product/person captions and a hash-seeded toy text encoder.

Canonical form is one line of JSON-style ``"key": value`` pairs in a fixed
key order, e.g.::

    {"category": "bottle", "size_cm": 18.0, "color": "green", "material": "glass", "person": "", ...}
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

CAPTION_VERSION = 1
PRODUCT_KEYS = ("category", "size_cm", "color", "material", "text")
HUMAN_KEYS = ("person", "environment", "lighting")
KEY_ORDER = PRODUCT_KEYS + HUMAN_KEYS
OPTIONAL_KEYS = ("size_cm", "text")


class MalformedCaption(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ProductCaption:
    category: str
    color: str = ""
    material: str = ""
    size_cm: float | None = None
    text_on_product: str | None = None

    def __post_init__(self):
        if not self.category:
            raise ValueError("category must be nonempty")
        if self.size_cm is not None and not self.size_cm > 0:
            raise ValueError(f"size_cm must be positive, got {self.size_cm}")


@dataclass(frozen=True)
class HumanCaption:
    person: str = ""
    environment: str = ""
    lighting: str = ""


def serialize_caption(p: ProductCaption, h: HumanCaption) -> str:
    fields: dict[str, object] = {"category": p.category}
    if p.size_cm is not None:
        fields["size_cm"] = float(p.size_cm)
    fields["color"] = p.color
    fields["material"] = p.material
    if p.text_on_product is not None:
        fields["text"] = p.text_on_product
    fields.update(person=h.person, environment=h.environment, lighting=h.lighting)
    parts = [f"{json.dumps(k)}: {json.dumps(v, ensure_ascii=False)}" for k, v in fields.items()]
    return "{" + ", ".join(parts) + "}"


class _Reader:
    _NUMBER = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?")

    def __init__(self, s: str):
        self.s = s
        self.i = 0

    def offset(self, i: int | None = None) -> int:
        return len(self.s[: self.i if i is None else i].encode("utf-8"))

    def fail(self, msg: str, at: int | None = None):
        raise MalformedCaption(msg, self.offset(at))

    def ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t":
            self.i += 1

    def expect(self, ch: str):
        self.ws()
        if self.i >= len(self.s):
            self.fail(f"input ends where {ch!r} was expected")
        if self.s[self.i] != ch:
            self.fail(f"expected {ch!r}, found {self.s[self.i]!r}")
        self.i += 1

    def string(self) -> str:
        self.ws()
        if self.i >= len(self.s):
            self.fail("input ends where a string was expected")
        if self.s[self.i] != '"':
            self.fail("expected a string")
        start = self.i
        try:
            val, end = json.decoder.scanstring(self.s, self.i + 1)
        except json.JSONDecodeError as e:
            if "Unterminated" in e.msg:
                self.i = len(self.s)
                self.fail("unterminated string")
            self.fail(e.msg, at=e.pos if e.pos > start else start)
        self.i = end
        return val

    def value(self):
        self.ws()
        if self.i >= len(self.s):
            self.fail("input ends where a value was expected")
        if self.s[self.i] == '"':
            return self.string()
        m = self._NUMBER.match(self.s, self.i)
        if not m:
            self.fail("expected a string or number")
        self.i = m.end()
        return float(m.group())


def parse_caption(s: str) -> tuple[ProductCaption, HumanCaption]:
    r = _Reader(s)
    r.expect("{")
    fields: dict[str, object] = {}
    r.ws()
    if r.i < len(s) and s[r.i] == "}":
        r.i += 1
    else:
        while True:
            r.ws()
            key_at = r.i
            key = r.string()
            if key not in KEY_ORDER:
                r.fail(f"unknown key {key!r}", at=key_at)
            if key in fields:
                r.fail(f"duplicate key {key!r}", at=key_at)
            r.expect(":")
            val_at = r.i
            val = r.value()
            if (key == "size_cm") != isinstance(val, float):
                r.fail(f"wrong value type for {key!r}", at=val_at)
            fields[key] = val
            r.ws()
            if r.i >= len(s):
                r.fail("input ends inside the caption")
            if s[r.i] == ",":
                r.i += 1
                continue
            r.expect("}")
            break
    r.ws()
    if r.i != len(s.rstrip("\r\n")):
        r.fail("trailing characters after caption")
    missing = [k for k in KEY_ORDER if k not in OPTIONAL_KEYS and k not in fields]
    if missing:
        r.fail(f"missing keys {missing}")
    try:
        product = ProductCaption(
            category=fields["category"],
            color=fields["color"],
            material=fields["material"],
            size_cm=fields.get("size_cm"),
            text_on_product=fields.get("text"),
        )
    except ValueError as e:
        raise MalformedCaption(str(e), 0) from None
    human = HumanCaption(fields["person"], fields["environment"], fields["lighting"])
    return product, human


def read_caption_file(path) -> list[tuple[ProductCaption, HumanCaption]]:
    """One canonical caption per nonblank line (UTF-8)."""
    with open(path, encoding="utf-8") as fh:
        return [parse_caption(line.rstrip("\n")) for line in fh if line.strip()]


_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(s: str) -> list[str]:
    return _TOKEN.findall(s)


def token_seed(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def encode_text(s: str, c: int, l_max: int = 32) -> np.ndarray:
    """Embed tokens as unit vectors seeded by a 64-bit hash; shape [1, l, c]."""
    if c < 1:
        raise ValueError("channel count must be positive")
    toks = tokenize(s)[:l_max]
    if not toks:
        return np.zeros((1, 1, c))
    rows = []
    for tok in toks:
        v = np.random.default_rng(token_seed(tok)).standard_normal(c)
        rows.append(v / np.linalg.norm(v))
    return np.array(rows)[None]
