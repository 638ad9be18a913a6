"""Bidirectional point-cloud <-> token-sequence codec.

Vocabulary layout (contiguous): coordinate tokens [0, Q), binding tokens
[Q, Q+F), then start / end / pad specials.  Sequences are framed with a
block of four start tokens and four end tokens because each point spans
four tokens (x, y, z, binding); canonical point order is quantized
(y, z, x) lexicographic with ties broken by binding then input order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BindingOutOfRange, GrammarViolation, TokenOutOfRange
from .geometry import BoundPointCloud

COORD = "coord"
BINDING = "binding"
START = "start"
END = "end"
PAD = "pad"


@dataclass(frozen=True)
class Vocabulary:
    """Token-id layout for a given quantization depth and face count."""

    coord_levels: int = 1024
    face_count: int = 10144

    @property
    def binding_offset(self) -> int:
        return self.coord_levels

    @property
    def start_token(self) -> int:
        return self.coord_levels + self.face_count

    @property
    def end_token(self) -> int:
        return self.coord_levels + self.face_count + 1

    @property
    def pad_token(self) -> int:
        return self.coord_levels + self.face_count + 2

    @property
    def size(self) -> int:
        return self.coord_levels + self.face_count + 3

    def token_class(self, token: int) -> str:
        if 0 <= token < self.coord_levels:
            return COORD
        if self.coord_levels <= token < self.start_token:
            return BINDING
        if token == self.start_token:
            return START
        if token == self.end_token:
            return END
        if token == self.pad_token:
            return PAD
        raise TokenOutOfRange(f"token {token} outside vocabulary of size {self.size}")


def quantize(coords, levels: int):
    """Map [-1, 1] coordinates to integer bins; out-of-range inputs clamp."""
    c = np.asarray(coords, dtype=np.float64)
    t = np.floor((c + 1.0) * 0.5 * levels)
    return np.clip(t, 0, levels - 1).astype(np.int64)


def dequantize(tokens, levels: int):
    """Return bin centers: (t + 0.5) / levels * 2 - 1."""
    t = np.asarray(tokens)
    if t.size and (t.min() < 0 or t.max() >= levels):
        raise TokenOutOfRange(f"coordinate token outside [0, {levels})")
    return (t.astype(np.float64) + 0.5) / levels * 2.0 - 1.0


def canonical_sort(cloud: BoundPointCloud, levels: int = 1024) -> BoundPointCloud:
    """Stable sort by quantized (y, z, x), then binding, then input order."""
    q = quantize(cloud.positions, levels)
    order = np.lexsort((np.arange(cloud.count), cloud.bindings, q[:, 0], q[:, 2], q[:, 1]))
    return BoundPointCloud(cloud.positions[order], cloud.bindings[order], cloud.face_count)


def encode(cloud: BoundPointCloud, vocab: Vocabulary) -> np.ndarray:
    """Tokenize a cloud: sort, quantize, emit (x, y, z, binding) per point,
    framed by four start and four end tokens."""
    if cloud.bindings.max() >= vocab.face_count:
        raise BindingOutOfRange(
            f"binding {int(cloud.bindings.max())} >= face count {vocab.face_count}"
        )
    srt = canonical_sort(cloud, vocab.coord_levels)
    q = quantize(srt.positions, vocab.coord_levels)
    body = np.empty((srt.count, 4), dtype=np.int64)
    body[:, 0] = q[:, 0]
    body[:, 1] = q[:, 1]
    body[:, 2] = q[:, 2]
    body[:, 3] = srt.bindings + vocab.binding_offset
    out = np.concatenate(
        [
            np.full(4, vocab.start_token, dtype=np.int64),
            body.reshape(-1),
            np.full(4, vocab.end_token, dtype=np.int64),
        ]
    )
    return out


@dataclass
class ValidationReport:
    """Outcome of grammar validation; sortedness is reported separately
    because unsorted output is a model-quality signal, not a hard error."""

    grammatical: bool
    violations: list = field(default_factory=list)  # (position, expected, actual)
    point_count: int | None = None
    sorted_points: bool | None = None
    pad_count: int = 0

    def summary(self) -> str:
        state = "valid" if self.grammatical else "invalid"
        srt = {True: "sorted", False: "unsorted", None: "n/a"}[self.sorted_points]
        return f"{state} points={self.point_count} order={srt} violations={len(self.violations)}"


def _scan(tokens, vocab: Vocabulary):
    """Single grammar pass.  Returns (violations, groups, pad_count) where
    groups is the list of well-formed (x, y, z, binding) token rows seen
    before the first structural break."""
    tokens = np.asarray(tokens)
    violations = []
    groups = []
    n = len(tokens)

    def cls(i):
        t = int(tokens[i])
        if 0 <= t < vocab.size:
            return vocab.token_class(t)
        return "invalid"

    if n < 8:
        violations.append((n, "framing", "sequence shorter than start+end blocks"))
        return violations, groups, 0
    for i in range(4):
        if cls(i) != START:
            violations.append((i, START, cls(i)))
            return violations, groups, 0

    i = 4
    end_seen = False
    while i < n:
        c = cls(i)
        if c == END:
            for j in range(i, i + 4):
                if j >= n or cls(j) != END:
                    violations.append((min(j, n - 1), END, cls(j) if j < n else "missing"))
                    return violations, groups, 0
            i += 4
            end_seen = True
            break
        if c != COORD:
            violations.append((i, f"{COORD} or {END}", c))
            return violations, groups, 0
        if i + 4 > n:
            violations.append((n - 1, "complete point group", "truncated"))
            return violations, groups, 0
        ok = True
        for off, want in ((1, COORD), (2, COORD), (3, BINDING)):
            if cls(i + off) != want:
                violations.append((i + off, want, cls(i + off)))
                ok = False
                break
        if not ok:
            return violations, groups, 0
        groups.append(tokens[i : i + 4])
        i += 4

    if not end_seen:
        violations.append((n - 1, END, "missing end block"))
        return violations, groups, 0

    pad_count = 0
    while i < n:
        if cls(i) != PAD:
            violations.append((i, PAD, cls(i)))
            return violations, groups, pad_count
        pad_count += 1
        i += 1
    return violations, groups, pad_count


def _groups_to_cloud(groups, vocab: Vocabulary) -> BoundPointCloud | None:
    if not groups:
        return None
    arr = np.stack(groups)
    positions = dequantize(arr[:, :3], vocab.coord_levels)
    bindings = arr[:, 3] - vocab.binding_offset
    return BoundPointCloud(positions, bindings, vocab.face_count)


def _is_canonically_sorted(arr, vocab: Vocabulary) -> bool:
    # arr rows are (x, y, z, binding) token groups; canonical order is
    # nondecreasing (y, z, x, binding).
    key = arr[:, [1, 2, 0, 3]]
    diff = np.diff(key, axis=0)
    if diff.size == 0:
        return True
    first_nz = np.argmax(diff != 0, axis=1)
    lead = diff[np.arange(diff.shape[0]), first_nz]
    return bool(np.all((diff == 0).all(axis=1) | (lead > 0)))


def validate(tokens, vocab: Vocabulary) -> ValidationReport:
    """Check framing, group structure, per-position token class, and tail
    padding; also report whether the decoded points are in canonical order."""
    violations, groups, pad_count = _scan(tokens, vocab)
    grammatical = not violations
    sorted_points = None
    if groups:
        sorted_points = _is_canonically_sorted(np.stack(groups), vocab)
    return ValidationReport(
        grammatical=grammatical,
        violations=violations,
        point_count=len(groups),
        sorted_points=sorted_points,
        pad_count=pad_count,
    )


def decode(tokens, vocab: Vocabulary) -> BoundPointCloud:
    """Strict decode: raises GrammarViolation on the first broken position."""
    violations, groups, _ = _scan(tokens, vocab)
    if violations:
        pos, expected, actual = violations[0]
        raise GrammarViolation(
            f"position {pos}: expected {expected}, got {actual}", position=pos, expected=expected
        )
    cloud = _groups_to_cloud(groups, vocab)
    if cloud is None:
        raise GrammarViolation("sequence has an empty body", position=4, expected=COORD)
    return cloud


def decode_lenient(tokens, vocab: Vocabulary):
    """Permissive decode for sampled sequences: keeps every well-formed
    leading group, drops the malformed tail, and returns the report."""
    violations, groups, pad_count = _scan(tokens, vocab)
    report = ValidationReport(
        grammatical=not violations,
        violations=violations,
        point_count=len(groups),
        sorted_points=_is_canonically_sorted(np.stack(groups), vocab) if groups else None,
        pad_count=pad_count,
    )
    return _groups_to_cloud(groups, vocab), report


# -- TOK1 file format ----------------------------------------------------------


def write_tok(path, tokens):
    tokens = np.asarray(tokens, dtype=np.uint32)
    with open(path, "wb") as fh:
        fh.write(b"TOK1")
        fh.write(struct.pack("<I", tokens.size))
        fh.write(tokens.astype("<u4").tobytes())


def read_tok(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"TOK1":
            raise ValueError(f"{path}: not a TOK1 file")
        (count,) = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(4 * count), dtype="<u4")
        if data.size != count:
            raise ValueError(f"{path}: truncated token payload")
    return data.astype(np.int64)


def write_tok_text(path, tokens):
    """Debug text format: one token id per line."""
    with open(path, "w") as fh:
        fh.write("\n".join(str(int(t)) for t in tokens) + "\n")


def read_tok_text(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
