"""Corpus records, manifest IO, vocabulary, statistics and a synthetic generator.

Manifest lines are UTF-8, ``|``-separated::

    id|signer|split|sentence|gloss|note[|frames|fps|frames_path]

``gloss`` and ``note`` are ``/``-separated token lists.  Direction markers
``(...)`` and body-turn markers ``[...]`` stay inside their token, so
``帮(我)`` and ``帮`` are different vocabulary items.  Lines starting with
``#`` are comments.
"""

from __future__ import annotations

import colorsys
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import frames as frame_archive

SPLITS = ("train", "dev", "test")
DEFAULT_FPS = 25.0


class ManifestError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass(frozen=True)
class CorpusEntry:
    id: int
    signer: str
    split: str
    sentence: str
    glosses: tuple[str, ...]
    notes: tuple[str, ...] = ()
    frame_count: int = 1
    frames_path: str | None = None
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not self.glosses or any(not g.strip() for g in self.glosses):
            raise ValueError("glosses must be non-empty tokens")
        missing = [n for n in self.notes if n not in self.glosses]
        if missing:
            raise ValueError(f"note tokens not among glosses: {missing}")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps


def split_tokens(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split("/"))


def parse_record(line: str, lineno: int | None = None, base_dir: str | None = None) -> CorpusEntry:
    fields = line.rstrip("\r\n").split("|")
    if len(fields) not in (6, 7, 8, 9):
        raise ManifestError(f"expected 6-9 '|'-separated fields, got {len(fields)}", lineno)
    fields += [""] * (9 - len(fields))
    rid, signer, split, sentence, gloss, note, nframes, fps, path = (f.strip() for f in fields)
    try:
        rid = int(rid)
    except ValueError:
        raise ManifestError(f"id {rid!r} is not an integer", lineno) from None
    if split not in SPLITS:
        raise ManifestError(f"unknown split label {split!r}", lineno)
    if not gloss:
        raise ManifestError("empty gloss field", lineno)
    glosses = split_tokens(gloss)
    if any(not g for g in glosses):
        raise ManifestError(f"empty gloss token in {gloss!r}", lineno)
    notes = tuple(n for n in split_tokens(note) if n) if note else ()
    if path and base_dir is not None and not os.path.isabs(path):
        path = os.path.normpath(os.path.join(base_dir, path))
    if nframes:
        try:
            count = int(nframes)
        except ValueError:
            raise ManifestError(f"frame count {nframes!r} is not an integer", lineno) from None
    elif path:
        try:
            count = frame_archive.read_header(path)[0]
        except frame_archive.FrameArchiveError as e:
            raise ManifestError(f"no frame count and unreadable archive: {e}", lineno) from None
    else:
        raise ManifestError("frame count missing and no frames path to read it from", lineno)
    try:
        rate = float(fps) if fps else DEFAULT_FPS
        return CorpusEntry(rid, signer, split, sentence, glosses, notes, count, path or None, rate)
    except ValueError as e:
        raise ManifestError(str(e), lineno) from None


def load_manifest(path) -> list[CorpusEntry]:
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            entries.append(parse_record(line, lineno, base))
    return entries


def format_record(e: CorpusEntry, base_dir: str | None = None) -> str:
    for text in (e.signer, e.sentence, *e.glosses, *e.notes):
        if "|" in text or "\n" in text:
            raise ValueError(f"entry {e.id}: field contains a reserved character: {text!r}")
    path = e.frames_path or ""
    if path and base_dir is not None:
        path = os.path.relpath(path, base_dir)
    fps = f"{e.fps:g}"
    return "|".join([str(e.id), e.signer, e.split, e.sentence, "/".join(e.glosses),
                     "/".join(e.notes), str(e.frame_count), fps, path.replace(os.sep, "/")])


def write_manifest(entries, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# id|signer|split|sentence|gloss|note|frames|fps|frames_path\n")
        for e in entries:
            f.write(format_record(e, base) + "\n")


# -- vocabulary --------------------------------------------------------------

@dataclass(frozen=True)
class GlossVocabulary:
    """Gloss <-> id map; id 0 is the CTC blank, glosses occupy ``1..l``."""

    tokens: tuple[str, ...]
    blank_id: int = 0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.blank_id != 0:
            raise ValueError("blank id is reserved as 0")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "_index", {t: i + 1 for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    @property
    def num_classes(self) -> int:
        return len(self.tokens) + 1

    def id_of(self, token: str) -> int:
        return self._index[token]

    def token_of(self, idx: int) -> str:
        if not 1 <= idx <= len(self.tokens):
            raise KeyError(idx)
        return self.tokens[idx - 1]

    def encode(self, glosses) -> list[int]:
        return [self._index[g] for g in glosses]

    def decode(self, ids) -> list[str]:
        return [self.token_of(int(i)) for i in ids]

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "GlossVocabulary":
        return cls(tuple(line for line in text.split("\n") if line))


def build_vocabulary(entries) -> GlossVocabulary:
    tokens = {g for e in entries for g in e.glosses}
    return GlossVocabulary(tuple(sorted(tokens, key=lambda s: s.encode("utf-8"))))


# -- statistics --------------------------------------------------------------

@dataclass
class SplitStats:
    signers: int
    duration_hours: float
    frames: int
    sentences: int
    vocabulary_size: int
    oov_count: int | None  # None for train


@dataclass
class CorpusStats:
    splits: dict[str, SplitStats]
    resolution: str

    def format_table(self) -> str:
        names = [s for s in SPLITS if s in self.splits]
        rows = [
            ("signers", lambda s: f"{s.signers}"),
            ("duration[h]", lambda s: f"{s.duration_hours:.2f}"),
            ("frames", lambda s: f"{s.frames:,}"),
            ("sentences", lambda s: f"{s.sentences:,}"),
            ("vocabulary size", lambda s: f"{s.vocabulary_size:,}"),
            ("total OOVs", lambda s: "-" if s.oov_count is None else f"{s.oov_count}"),
        ]
        lines = ["\t".join(["split", *names])]
        for label, fmt in rows:
            lines.append("\t".join([label, *(fmt(self.splits[n]) for n in names)]))
        lines.append("\t".join(["resolution", *([self.resolution] * len(names))]))
        return "\n".join(lines)


def _resolution(entries) -> str:
    sizes = set()
    for e in entries:
        if e.frames_path and os.path.exists(os.path.join(e.frames_path, frame_archive.HEADER)):
            _, _, h, w = frame_archive.read_header(e.frames_path)
            sizes.add((h, w))
    if not sizes:
        return "unknown"
    if len(sizes) > 1:
        return "varying"
    h, w = sizes.pop()
    return f"{h}x{w}"


def compute_stats(entries, train_vocab: GlossVocabulary | None = None) -> CorpusStats:
    by_split = defaultdict(list)
    for e in entries:
        by_split[e.split].append(e)
    if train_vocab is None:
        train_vocab = build_vocabulary(by_split["train"])
    out = {}
    for split in SPLITS:
        group = by_split.get(split)
        if not group:
            continue
        tokens = {g for e in group for g in e.glosses}
        out[split] = SplitStats(
            signers=len({e.signer for e in group}),
            duration_hours=sum(e.duration_s for e in group) / 3600.0,
            frames=sum(e.frame_count for e in group),
            sentences=len(group),
            vocabulary_size=len(tokens),
            oov_count=None if split == "train" else sum(t not in train_vocab for t in tokens),
        )
    return CorpusStats(out, _resolution(entries))


# -- synthetic corpus --------------------------------------------------------

@dataclass
class SynthConfig:
    vocab_size: int = 12
    sentence_len_min: int = 2
    sentence_len_max: int = 4
    frames_per_gloss_min: int = 6
    frames_per_gloss_max: int = 9
    rest_frames_max: int = 2
    frame_height: int = 32
    frame_width: int = 32
    channels: int = 3
    clutter_level: float = 0.3
    train_count: int = 200
    dev_count: int = 40
    test_count: int = 40
    signers: int = 4
    regional_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 1 <= self.sentence_len_min <= self.sentence_len_max:
            raise ValueError("sentence length range must satisfy 1 <= min <= max")
        if not 1 <= self.frames_per_gloss_min <= self.frames_per_gloss_max:
            raise ValueError("frames-per-gloss range must satisfy 1 <= min <= max")
        if not 0.0 <= self.clutter_level <= 1.0:
            raise ValueError("clutter_level must lie in [0, 1]")
        if min(self.train_count, self.dev_count, self.test_count) < 1:
            raise ValueError("split counts must be >= 1")
        if min(self.frame_height, self.frame_width) < 8 or self.channels < 1 or self.signers < 1:
            raise ValueError("frames must be at least 8x8 with >= 1 channel")


GLYPH_GRID = 4
BACKGROUND = 0.25


def synth_gloss_name(i: int) -> str:
    return f"w{i:02d}"


def make_glyphs(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct binary ``GLYPH_GRID``-square patterns, each mirror-symmetric.

    Symmetry keeps a glyph's identity under the horizontal-flip augmentation.
    """
    half = (GLYPH_GRID + 1) // 2
    if n > 2 ** (GLYPH_GRID * half) - 2:
        raise ValueError(f"cannot draw {n} distinct glyphs on a {GLYPH_GRID}x{GLYPH_GRID} grid")
    seen: set[bytes] = set()
    glyphs = []
    while len(glyphs) < n:
        left = rng.random((GLYPH_GRID, half)) < 0.5
        g = np.concatenate([left, left[:, :GLYPH_GRID // 2][:, ::-1]], axis=1)
        if g.sum() < 4 or g.all() or g.tobytes() in seen:
            continue
        seen.add(g.tobytes())
        glyphs.append(g)
    return np.stack(glyphs)


def glyph_colors(n: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Bright per-gloss colours; with three channels the hues are spread evenly, then shuffled."""
    if channels != 3:
        return rng.uniform(0.6, 1.0, size=(n, channels))
    hues = (np.arange(n) + rng.random()) / n
    rgb = np.array([colorsys.hsv_to_rgb(h, 0.7, 1.0) for h in hues])
    return rgb[rng.permutation(n)]


class SyntheticRenderer:
    """Draws gloss glyphs over a (optionally cluttered) background."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.glyphs = make_glyphs(cfg.vocab_size, rng)
        self.colors = glyph_colors(cfg.vocab_size, cfg.channels, rng)
        self.cell = min(cfg.frame_height, cfg.frame_width) // (GLYPH_GRID + 2)

    def frame(self, gloss_idx: int | None, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        img = np.full((cfg.frame_height, cfg.frame_width, cfg.channels), BACKGROUND)
        if gloss_idx is not None:
            size = self.cell * GLYPH_GRID
            dy, dx = rng.integers(-1, 2, size=2)
            top = (cfg.frame_height - size) // 2 + dy
            left = (cfg.frame_width - size) // 2 + dx
            mask = np.kron(self.glyphs[gloss_idx], np.ones((self.cell, self.cell), dtype=bool))
            region = img[top:top + size, left:left + size]
            region[mask] = self.colors[gloss_idx]
        if cfg.clutter_level > 0:
            noise = rng.random(img.shape)
            img = (1.0 - cfg.clutter_level) * img + cfg.clutter_level * noise
        return np.round(img * 255.0).astype(np.uint8)


def _distinct_sentences(cfg: SynthConfig) -> int:
    v = cfg.vocab_size
    return sum(v * (v - 1) ** (n - 1) for n in range(cfg.sentence_len_min, cfg.sentence_len_max + 1))


def generate_synthetic(cfg: SynthConfig, outdir) -> tuple[str, list[CorpusEntry]]:
    """Write ``manifest.txt`` and ``frames/<id>/`` under ``outdir``.

    Sentences never repeat a gloss back to back.  Every ``regional_every``-th
    gloss is treated as a regional sign and listed in the note column.
    """
    total = cfg.train_count + cfg.dev_count + cfg.test_count
    if total > _distinct_sentences(cfg):
        warnings.warn(f"{total} sentences requested but only {_distinct_sentences(cfg)} distinct "
                      "gloss sequences exist; duplicates will occur")
    rng = np.random.default_rng(cfg.seed)
    renderer = SyntheticRenderer(cfg, rng)
    names = [synth_gloss_name(i + 1) for i in range(cfg.vocab_size)]
    regional = {names[i] for i in range(cfg.vocab_size) if cfg.regional_every and (i + 1) % cfg.regional_every == 0}
    os.makedirs(os.path.join(outdir, "frames"), exist_ok=True)
    entries = []
    rid = 0
    for split, count in (("train", cfg.train_count), ("dev", cfg.dev_count), ("test", cfg.test_count)):
        for _ in range(count):
            rid += 1
            length = int(rng.integers(cfg.sentence_len_min, cfg.sentence_len_max + 1))
            seq = [int(rng.integers(cfg.vocab_size))]
            while len(seq) < length:
                nxt = int(rng.integers(cfg.vocab_size - 1))
                seq.append(nxt if nxt < seq[-1] else nxt + 1)
            timeline: list[int | None] = [None] * int(rng.integers(0, cfg.rest_frames_max + 1))
            for g in seq:
                span = int(rng.integers(cfg.frames_per_gloss_min, cfg.frames_per_gloss_max + 1))
                timeline += [g] * span
            timeline += [None] * int(rng.integers(0, cfg.rest_frames_max + 1))
            video = np.stack([renderer.frame(g, rng) for g in timeline])
            path = os.path.join(outdir, "frames", f"{rid:06d}")
            frame_archive.write_frames(path, video)
            glosses = tuple(names[g] for g in seq)
            notes = tuple(dict.fromkeys(g for g in glosses if g in regional))
            signer = f"S{int(rng.integers(cfg.signers)) + 1:02d}"
            entries.append(CorpusEntry(rid, signer, split, "".join(glosses), glosses, notes,
                                       len(timeline), os.path.abspath(path), DEFAULT_FPS))
    manifest = os.path.join(outdir, "manifest.txt")
    write_manifest(entries, manifest)
    return manifest, entries
