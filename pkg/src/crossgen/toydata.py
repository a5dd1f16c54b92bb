"""Synthetic three-modality dataset: two 16x16 rendered views plus a token
report, with ground-truth binary condition labels.

Each of the C=5 conditions draws a small glyph into its own 5x5 cell, at a
different cell and with a different shape in each view. Nuisance factors
(position jitter, intensity scale) move and scale the glyphs; the report
describes the active conditions plus coarse position/intensity descriptors,
so every pair of modalities shares recoverable information beyond the label
bits. A rule-based labeler inverts reports exactly on in-distribution text.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ConfigError
from .rng import stream

NUM_CONDITIONS = 5
VIEW_SIZE = 16
MAX_REPORT_LEN = 32

#: positive-rate profile of the class-imbalance experiment
DEFAULT_POSITIVE_RATES = (0.156, 0.135, 0.0299, 0.104, 0.141)

CONDITIONS = ("alpha", "beta", "gamma", "delta", "epsilon")
_OPENERS = ("routine", "followup", "urgent")
_CLOSERS = ("stable", "unchanged", "review")
_X_WORDS = ("left", "center", "right")
_Y_WORDS = ("upper", "middle", "lower")
_I_WORDS = ("faint", "dim", "soft", "mild", "marked", "strong", "bright", "vivid")

PAD = "<pad>"
VOCAB = (
    (PAD, "study", "no", "findings", "marker")
    + CONDITIONS + _OPENERS + _CLOSERS + _X_WORDS + _Y_WORDS + _I_WORDS
)
TOKEN_TO_ID = {tok: i for i, tok in enumerate(VOCAB)}

JITTER_LEVELS = 3
INTENSITY_LEVELS = len(_I_WORDS)
NUM_FACTOR_BUCKETS = JITTER_LEVELS * JITTER_LEVELS * INTENSITY_LEVELS

_INTENSITY_LO, _INTENSITY_HI = 0.25, 1.0

# 3x3 grid of 5x5 cells; view_a uses cells 0..4, view_b uses cells 4..8,
# so every condition sits at a different location in the two views.
_CELLS = [(r, c) for r in (0, 5, 10) for c in (0, 5, 10)]
_VIEW_A_CELLS = _CELLS[0:5]
_VIEW_B_CELLS = _CELLS[4:9]

# every glyph covers exactly 5 pixels so the conditions are equally salient
_GLYPHS_A = np.array([
    [[0, 1, 0], [1, 1, 1], [0, 1, 0]],   # plus
    [[1, 0, 1], [0, 1, 0], [1, 0, 1]],   # saltire
    [[1, 1, 1], [0, 1, 0], [0, 1, 0]],   # tee
    [[1, 0, 0], [1, 0, 0], [1, 1, 1]],   # ell
    [[1, 1, 0], [0, 1, 0], [0, 1, 1]],   # zig
], dtype=np.float64)
_GLYPHS_B = np.array([
    [[0, 1, 0], [0, 1, 0], [1, 1, 1]],   # inverted tee
    [[0, 0, 1], [0, 0, 1], [1, 1, 1]],   # jay
    [[0, 1, 1], [0, 1, 0], [1, 1, 0]],   # ess
    [[1, 0, 1], [1, 0, 1], [0, 1, 0]],   # vee
    [[1, 1, 0], [1, 0, 0], [0, 1, 1]],   # hook
], dtype=np.float64)

_BG_ROWS, _BG_COLS = np.meshgrid(np.arange(VIEW_SIZE), np.arange(VIEW_SIZE), indexing="ij")
BACKGROUND = 0.05 + 0.05 * (_BG_ROWS + _BG_COLS) / (2.0 * (VIEW_SIZE - 1))


@dataclass
class Record:
    """One synthetic study: two views, a token report, labels and factors."""
    id: int
    view_a: np.ndarray
    view_b: np.ndarray
    report: tuple[str, ...]
    labels: np.ndarray
    factors: np.ndarray


@dataclass
class Dataset:
    records: list[Record]
    split: dict[str, np.ndarray]
    seed: int

    def subset(self, name: str) -> list[Record]:
        return [self.records[i] for i in self.split[name]]


MODALITIES = ("view_a", "view_b", "report")


def payload(record: Record, modality: str):
    """The record's data for one modality."""
    if modality == "view_a":
        return record.view_a
    if modality == "view_b":
        return record.view_b
    if modality == "report":
        return record.report
    raise ValueError(f"unknown modality {modality!r}")


def report_to_ids(report) -> np.ndarray:
    """Token ids padded with 0 to MAX_REPORT_LEN."""
    ids = np.zeros(MAX_REPORT_LEN, dtype=np.int64)
    for i, tok in enumerate(report):
        ids[i] = TOKEN_TO_ID[tok]
    return ids


def _jitter_offsets(factors: np.ndarray) -> tuple[int, int]:
    dx = int(np.clip(np.rint(factors[0]), -1, 1))
    dy = int(np.clip(np.rint(factors[1]), -1, 1))
    return dx, dy


def intensity_bucket(intensity: float) -> int:
    span = _INTENSITY_HI - _INTENSITY_LO
    b = int((float(intensity) - _INTENSITY_LO) / span * INTENSITY_LEVELS)
    return min(max(b, 0), INTENSITY_LEVELS - 1)


def factor_bucket(factors: np.ndarray) -> int:
    """Quantize (jitter_x, jitter_y, intensity) into a single bucket index."""
    dx, dy = _jitter_offsets(factors)
    ib = intensity_bucket(factors[2])
    return ((dx + 1) * JITTER_LEVELS + (dy + 1)) * INTENSITY_LEVELS + ib


def condition_box(condition: int, view: str) -> tuple[int, int, int, int]:
    """Row/col bounds (r0, r1, c0, c1) of the cell owned by a condition."""
    cells = _VIEW_A_CELLS if view == "view_a" else _VIEW_B_CELLS
    r, c = cells[condition]
    return r, r + 5, c, c + 5


#: view_b displays intensity coarsely (complementary projections: view_a
#: shows the continuous value, the report carries the 8-level descriptor)
VIEW_B_INTENSITY_LEVELS = 4


def _view_b_display_intensity(intensity: float) -> float:
    span = _INTENSITY_HI - _INTENSITY_LO
    b = int((float(intensity) - _INTENSITY_LO) / span * VIEW_B_INTENSITY_LEVELS)
    b = min(max(b, 0), VIEW_B_INTENSITY_LEVELS - 1)
    return _INTENSITY_LO + (b + 0.5) * span / VIEW_B_INTENSITY_LEVELS


def render_views(labels: np.ndarray, factors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically draw both views from (labels, factors)."""
    labels = np.asarray(labels)
    dx, dy = _jitter_offsets(np.asarray(factors, dtype=np.float64))
    intensity = float(factors[2])
    views = []
    for cells, glyphs, value in (
            (_VIEW_A_CELLS, _GLYPHS_A, intensity),
            (_VIEW_B_CELLS, _GLYPHS_B, _view_b_display_intensity(intensity))):
        img = BACKGROUND.copy()
        for k in range(NUM_CONDITIONS):
            if not labels[k]:
                continue
            r0, c0 = cells[k]
            rc, cc = r0 + 2 + dy, c0 + 2 + dx
            mask = glyphs[k] > 0
            img[rc - 1:rc + 2, cc - 1:cc + 2][mask] = value
        views.append(img)
    return views[0], views[1]


def render_report(labels: np.ndarray, style_seed: int) -> tuple[str, ...]:
    """One phrase per active condition plus descriptor/filler tokens.

    The style seed drives the filler choices; its low bits select the
    position/intensity descriptor words (the dataset generator passes the
    record's factor bucket here, so reports and views stay consistent).
    """
    labels = np.asarray(labels)
    style_seed = int(style_seed)
    rng = np.random.Generator(np.random.PCG64(abs(style_seed)))
    tokens = [_OPENERS[rng.integers(len(_OPENERS))], "study"]
    active = [k for k in range(NUM_CONDITIONS) if labels[k]]
    if not active:
        tokens += ["no", "findings"]
    else:
        for k in active:
            tokens += [CONDITIONS[k], "marker"]
        b = style_seed % NUM_FACTOR_BUCKETS
        ib = b % INTENSITY_LEVELS
        dy = (b // INTENSITY_LEVELS) % JITTER_LEVELS
        dx = b // (INTENSITY_LEVELS * JITTER_LEVELS)
        tokens += [_X_WORDS[dx], _Y_WORDS[dy], _I_WORDS[ib]]
    tokens.append(_CLOSERS[rng.integers(len(_CLOSERS))])
    return tuple(tokens)


def rule_label_text(report) -> np.ndarray:
    """Extract the condition-label vector from a token sequence.

    Marks condition k iff its name occurs anywhere without an immediately
    preceding "no" token. Unknown tokens are ignored.
    """
    tokens = list(report)
    labels = np.zeros(NUM_CONDITIONS, dtype=np.uint8)
    for k, name in enumerate(CONDITIONS):
        for pos, tok in enumerate(tokens):
            if tok == name and (pos == 0 or tokens[pos - 1] != "no"):
                labels[k] = 1
                break
    return labels


def generate_dataset(seed: int, n: int,
                     positive_rates=DEFAULT_POSITIVE_RATES) -> Dataset:
    """Sample n records deterministically and split them 70/10/20."""
    if n < 10:
        raise ConfigError(f"dataset size {n} < 10")
    rates = np.asarray(positive_rates, dtype=np.float64)
    if rates.shape != (NUM_CONDITIONS,):
        raise ConfigError(f"positive_rates must have length {NUM_CONDITIONS}")
    if np.any(rates <= 0.0) or np.any(rates >= 1.0):
        raise ConfigError("positive_rates must lie strictly inside (0, 1)")

    rng = stream(seed, "toydata")
    labels = (rng.random((n, NUM_CONDITIONS)) < rates).astype(np.uint8)
    jitter = rng.uniform(-1.5, 1.5, size=(n, 2))
    intensity = rng.uniform(_INTENSITY_LO, _INTENSITY_HI, size=n)

    records = []
    for i in range(n):
        factors = np.array([jitter[i, 0], jitter[i, 1], intensity[i]])
        view_a, view_b = render_views(labels[i], factors)
        report = render_report(labels[i], factor_bucket(factors))
        records.append(Record(i, view_a, view_b, report, labels[i].copy(), factors))

    perm = rng.permutation(n)
    n_train = int(round(0.7 * n))
    n_val = int(round(0.1 * n))
    split = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    return Dataset(records, split, int(seed))


# ---------------------------------------------------------------------------
# binary dataset file (magic "XGTD") plus JSON split sidecar

XGTD_MAGIC = b"XGTD"
XGTD_VERSION = 1


def sidecar_path(path) -> Path:
    return Path(str(path) + ".splits.json")


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    chunks = [XGTD_MAGIC, struct.pack("<H", XGTD_VERSION),
              struct.pack("<q", dataset.seed), struct.pack("<H", NUM_CONDITIONS)]
    chunks.append(struct.pack("<H", len(VOCAB)))
    for tok in VOCAB:
        raw = tok.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
    chunks.append(struct.pack("<I", len(dataset.records)))
    for rec in dataset.records:
        chunks.append(struct.pack("<I", rec.id))
        chunks.append(np.ascontiguousarray(rec.view_a, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(rec.view_b, dtype="<f8").tobytes())
        ids = [TOKEN_TO_ID[t] for t in rec.report]
        ids = ids + [0] * (MAX_REPORT_LEN - len(ids))
        chunks.append(struct.pack("<H", len(rec.report)))
        chunks.append(np.asarray(ids, dtype="<u2").tobytes())
        chunks.append(np.asarray(rec.labels, dtype=np.uint8).tobytes())
        chunks.append(np.ascontiguousarray(rec.factors, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))

    splits = {name: [int(i) for i in idx] for name, idx in dataset.split.items()}
    sidecar_path(path).write_text(json.dumps(splits, sort_keys=True))


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    off = 0

    def take(n):
        nonlocal off
        out = raw[off:off + n]
        if len(out) != n:
            raise ArtifactError(f"{path}: truncated dataset file")
        off += n
        return out

    if take(4) != XGTD_MAGIC:
        raise ArtifactError(f"{path}: bad magic, not a dataset file")
    (version,) = struct.unpack("<H", take(2))
    if version != XGTD_VERSION:
        raise ArtifactError(f"{path}: unsupported dataset format version {version}")
    (seed,) = struct.unpack("<q", take(8))
    (c,) = struct.unpack("<H", take(2))
    if c != NUM_CONDITIONS:
        raise ArtifactError(f"{path}: condition count {c} != {NUM_CONDITIONS}")
    (vocab_len,) = struct.unpack("<H", take(2))
    vocab = []
    for _ in range(vocab_len):
        (tok_len,) = struct.unpack("<H", take(2))
        vocab.append(take(tok_len).decode("utf-8"))
    if tuple(vocab) != VOCAB:
        raise ArtifactError(f"{path}: vocabulary does not match this build")

    (n,) = struct.unpack("<I", take(4))
    view_bytes = VIEW_SIZE * VIEW_SIZE * 8
    records = []
    for _ in range(n):
        (rec_id,) = struct.unpack("<I", take(4))
        view_a = np.frombuffer(take(view_bytes), dtype="<f8").reshape(VIEW_SIZE, VIEW_SIZE).copy()
        view_b = np.frombuffer(take(view_bytes), dtype="<f8").reshape(VIEW_SIZE, VIEW_SIZE).copy()
        (rep_len,) = struct.unpack("<H", take(2))
        ids = np.frombuffer(take(MAX_REPORT_LEN * 2), dtype="<u2")
        if np.any(ids >= len(VOCAB)):
            raise ArtifactError(f"{path}: token id out of range")
        report = tuple(VOCAB[i] for i in ids[:rep_len])
        labels = np.frombuffer(take(c), dtype=np.uint8).copy()
        factors = np.frombuffer(take(3 * 8), dtype="<f8").copy()
        records.append(Record(rec_id, view_a, view_b, report, labels, factors))
    if off != len(raw):
        raise ArtifactError(f"{path}: {len(raw) - off} trailing bytes")

    splits_raw = json.loads(sidecar_path(path).read_text())
    split = {name: np.asarray(idx, dtype=np.int64) for name, idx in splits_raw.items()}
    return Dataset(records, split, seed)
