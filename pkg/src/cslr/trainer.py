"""Training loop, evaluation driver and ablation harness."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import os
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from . import frames as frame_archive
from . import kvconfig
from .corpus import CorpusEntry, GlossVocabulary, build_vocabulary
from .decode import beam_decode, corpus_summary, eval_record, wer
from .model import ModelConfig, TFNet, min_frames_for
from .nn.checkpoint import decode_arrays, encode_arrays, load_checkpoint, save_checkpoint
from .nn.tape import NonFiniteError, Param, Tape
from .objective import LossToggles, total_loss

log = logging.getLogger(__name__)

PRECISIONS = {"f32": np.float32, "f64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 2
    epochs: int = 55
    lr_drop_epochs: tuple[int, ...] = (35, 45)
    lr_drop_factor: float = 0.2
    beam_width: int = 10
    seed: int = 0
    vae_t: bool = True
    vae_f: bool = True
    kl_temperature: float = 8.0
    precision: str = "f64"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        self.lr_drop_epochs = tuple(self.lr_drop_epochs)
        if self.epochs < 1:
            raise kvconfig.ConfigError("epochs must be >= 1")
        if any(not 0 <= d < self.epochs for d in self.lr_drop_epochs):
            raise kvconfig.ConfigError("lr_drop_epochs must lie in [0, epochs)")
        if not 0.0 < self.lr_drop_factor < 1.0:
            raise kvconfig.ConfigError("lr_drop_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.beam_width < 1:
            raise kvconfig.ConfigError("batch_size and beam_width must be >= 1")
        if self.precision not in PRECISIONS:
            raise kvconfig.ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.kl_temperature <= 0:
            raise kvconfig.ConfigError("kl_temperature must be positive")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def toggles(self) -> LossToggles:
        return LossToggles(self.vae_t, self.vae_f)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule; each drop epoch multiplies the rate by ``lr_drop_factor``."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for d in cfg.lr_drop_epochs if epoch >= d)
    return cfg.lr0 * cfg.lr_drop_factor ** drops


# -- optimiser ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Param], state: AdamState, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam with decoupled weight decay ``lr * wd * theta``."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.sum(~np.isfinite(p.grad)))
            raise NonFiniteError(p.name, f"{bad} non-finite gradient entries in '{p.name}'; step aborted")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p.value
        p.value = (p.value - lr * update).astype(p.value.dtype, copy=False)


# -- checkpoints -------------------------------------------------------------

@dataclass
class TrainState:
    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    best_dev_wer: float = math.inf
    rng_state: dict | None = None

    def encode(self, cfg: TrainConfig) -> bytes:
        head = json.dumps({
            "epoch": self.epoch, "step": self.adam.step,
            "best_dev_wer": None if math.isinf(self.best_dev_wer) else self.best_dev_wer,
            "beta1": cfg.adam_beta1, "beta2": cfg.adam_beta2, "eps": cfg.adam_eps,
            "rng": self.rng_state,
        }, sort_keys=True).encode("utf-8")
        return (struct.pack("<I", len(head)) + head
                + encode_arrays(self.adam.m) + encode_arrays(self.adam.v))

    @classmethod
    def decode(cls, payload: bytes) -> "TrainState":
        f = io.BytesIO(payload)
        (n,) = struct.unpack("<I", f.read(4))
        head = json.loads(f.read(n).decode("utf-8"))
        m, v = decode_arrays(f), decode_arrays(f)
        best = head["best_dev_wer"]
        return cls(head["epoch"], AdamState(head["step"], m, v),
                   math.inf if best is None else best, head["rng"])


def save_model(path, model: TFNet, vocab: GlossVocabulary, train_cfg: TrainConfig | None = None,
               state: TrainState | None = None):
    sections = {"MCFG": kvconfig.to_text(model.cfg).encode("utf-8"),
                "VOCB": vocab.to_text().encode("utf-8")}
    if train_cfg is not None:
        sections["TCFG"] = kvconfig.to_text(train_cfg).encode("utf-8")
    if state is not None and train_cfg is not None:
        sections["TRST"] = state.encode(train_cfg)
    save_checkpoint(path, {n: p.value for n, p in model.named_params().items()}, sections)


def load_model(path, precision: str = "f64") -> tuple[TFNet, GlossVocabulary, dict[str, bytes]]:
    arrays, sections = load_checkpoint(path)
    for tag in ("MCFG", "VOCB"):
        if tag not in sections:
            raise TrainingError(f"{path}: checkpoint lacks {tag} section")
    cfg = kvconfig.from_text(ModelConfig, sections["MCFG"].decode("utf-8"))
    vocab = GlossVocabulary.from_text(sections["VOCB"].decode("utf-8"))
    if len(vocab) != cfg.vocab_size:
        raise TrainingError(f"{path}: vocabulary has {len(vocab)} glosses, model expects {cfg.vocab_size}")
    model = TFNet(cfg, np.random.default_rng(0), PRECISIONS[precision])
    model.load_arrays(arrays)
    return model, vocab, sections


# -- data --------------------------------------------------------------------

@dataclass
class Sample:
    entry: CorpusEntry
    frames: np.ndarray  # (T, H, W, C) uint8
    labels: list[int] | None


def load_samples(entries, vocab: GlossVocabulary | None = None) -> list[Sample]:
    out = []
    for e in entries:
        if not e.frames_path:
            raise TrainingError(f"entry {e.id}: no frames path")
        frames = frame_archive.read_frames(e.frames_path)
        labels = None
        if vocab is not None and all(g in vocab for g in e.glosses):
            labels = vocab.encode(e.glosses)
        out.append(Sample(e, frames, labels))
    return out


def prepare_video(frames: np.ndarray, cfg: ModelConfig, dtype, mode: str, rng=None,
                  min_length: int = 4) -> np.ndarray:
    """``(T, H, W, C)`` uint8 frames -> augmented ``(T', C, S, S)`` model input in [0, 1]."""
    video = frames.transpose(0, 3, 1, 2)
    if mode == "train":
        video = aug.augment(video, "train", rng, cfg.input_size, min_length)
    else:
        video = aug.augment(video, "eval", None, cfg.input_size)
        if video.shape[0] < min_length:
            # repeat the final frame; the sequence heads need 4 steps
            video = video[np.minimum(np.arange(min_length), video.shape[0] - 1)]
    return video.astype(dtype) / dtype(255.0)


def model_input(sample: Sample, cfg: ModelConfig, dtype, mode: str, rng=None,
                min_length: int = 4) -> np.ndarray:
    return prepare_video(sample.frames, cfg, dtype, mode, rng, min_length)


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    wer_percent: float
    errors: int
    ref_tokens: int
    records: list[str]
    log_score_sum: float
    hypotheses: dict[int, list[str]]

    def summary(self, split: str, **extra) -> str:
        return corpus_summary(split, self.errors, self.ref_tokens, len(self.records),
                              {"log_score_sum": round(self.log_score_sum, 6), **extra})


def score_corpus(pairs) -> tuple[float, int, int, list[str]]:
    """``pairs`` of ``(id, ref_tokens, hyp_tokens)`` -> micro WER, errors, ref tokens, records."""
    errors = total = 0
    records = []
    for rid, ref, hyp in pairs:
        rep = wer(ref, hyp)
        errors += rep.errors
        total += rep.sum
        records.append(eval_record(rid, ref, hyp, rep))
    return (100.0 * errors / total if total else 0.0), errors, total, records


def evaluate_model(model: TFNet, samples: list[Sample], vocab: GlossVocabulary, beam_width: int) -> EvalResult:
    pairs, hyps = [], {}
    score_sum = 0.0
    for s in samples:
        video = model_input(s, model.cfg, model.dtype.type, "eval")
        res = beam_decode(model.predict_logits(video), beam_width)
        hyp = vocab.decode(res.glosses)
        hyps[s.entry.id] = hyp
        score_sum += res.log_score
        pairs.append((s.entry.id, list(s.entry.glosses), hyp))
    rate, errors, total, records = score_corpus(pairs)
    return EvalResult(rate, errors, total, records, score_sum, hyps)


def evaluate(entries, split: str, checkpoint, beam_width: int = 10, precision: str = "f64") -> EvalResult:
    model, vocab, _ = load_model(checkpoint, precision)
    train = [e for e in entries if e.split == "train"]
    if train and build_vocabulary(train) != vocab:
        raise TrainingError("vocabulary mismatch between checkpoint and corpus training split")
    chosen = [e for e in entries if e.split == split]
    if not chosen:
        raise TrainingError(f"no entries in split {split!r}")
    return evaluate_model(model, load_samples(chosen), vocab, beam_width)


# -- training ----------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    l_sum: float
    l_ctc: float
    l_vae_t: float
    l_vae_f: float
    dev_wer: float
    trained: int
    wall_time: float = 0.0

    def to_json(self) -> str:
        rec = dataclasses.asdict(self)
        rec.pop("wall_time")
        return json.dumps(rec)


@dataclass
class TrainResult:
    outdir: str
    vocab: GlossVocabulary
    model_cfg: ModelConfig
    metrics: list[MetricsRecord]
    skipped: list[int]
    best_checkpoint: str
    last_checkpoint: str
    init_checkpoint: str


def _feasible(samples, cfg: ModelConfig):
    keep, skipped = [], []
    for s in samples:
        if s.labels is None or s.frames.shape[0] < min_frames_for(s.labels, cfg):
            skipped.append(s.entry.id)
        else:
            keep.append(s)
    return keep, skipped


def train(entries, model_cfg: ModelConfig, cfg: TrainConfig, outdir, on_epoch=None) -> TrainResult:
    """Train on the ``train`` split, select by ``dev`` WER, write checkpoints and metrics under ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    train_entries = [e for e in entries if e.split == "train"]
    dev_entries = [e for e in entries if e.split == "dev"]
    if not train_entries:
        raise TrainingError("corpus has no training entries")
    vocab = build_vocabulary(train_entries)
    model_cfg = dataclasses.replace(model_cfg, vocab_size=len(vocab))
    dtype = cfg.dtype
    model = TFNet(model_cfg, np.random.default_rng([cfg.seed, 0]), dtype)
    rng = np.random.default_rng([cfg.seed, 1])

    samples, skipped = _feasible(load_samples(train_entries, vocab), model_cfg)
    for rid in skipped:
        warnings.warn(f"entry {rid}: label sequence infeasible for its length; skipped")
    if not samples:
        raise TrainingError("no trainable entries after the feasibility check")
    dev_samples = load_samples(dev_entries, vocab)
    params = model.params()

    paths = {k: os.path.join(outdir, f"{k}.ckpt") for k in ("init", "best", "last")}
    save_model(paths["init"], model, vocab)
    kvconfig.save(model_cfg, os.path.join(outdir, "model.cfg"))
    kvconfig.save(cfg, os.path.join(outdir, "train.cfg"))
    metrics_path = os.path.join(outdir, "metrics.jsonl")
    timing_path = os.path.join(outdir, "timing.jsonl")
    for p in (metrics_path, timing_path):
        open(p, "w").close()

    state = TrainState()
    history = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            model.zero_grad()
            for i in batch:
                s = samples[i]
                mode = "train" if cfg.augment else "eval"
                video = model_input(s, model_cfg, dtype, mode, rng, min_frames_for(s.labels, model_cfg))
                tape = Tape()
                try:
                    out = model.forward(tape, video)
                    br, loss = total_loss(tape, out, s.labels, cfg.toggles, cfg.kl_temperature)
                    if not math.isfinite(br.l_sum):
                        raise NonFiniteError("l_sum")
                    tape.backward(loss, seed=1.0 / len(batch))
                except NonFiniteError as e:
                    raise TrainingError(f"non-finite value at entry {s.entry.id} (node {e.node})") from e
                sums += (br.l_sum, br.l_ctc, br.l_vae_t, br.l_vae_f)
            adam_step(params, state.adam, lr, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        means = sums / len(samples)
        dev_wer = math.nan
        if dev_samples:
            dev_wer = evaluate_model(model, dev_samples, vocab, cfg.beam_width).wer_percent
        rec = MetricsRecord(epoch, lr, *map(float, means), dev_wer, len(samples),
                            time.perf_counter() - start)
        history.append(rec)
        state.epoch = epoch + 1
        state.rng_state = rng.bit_generator.state
        improved = not dev_samples or dev_wer < state.best_dev_wer
        if dev_samples and improved:
            state.best_dev_wer = dev_wer
        save_model(paths["last"], model, vocab, cfg, state)
        if improved:
            save_model(paths["best"], model, vocab, cfg, state)
        with open(metrics_path, "a", encoding="utf-8") as f:
            f.write(rec.to_json() + "\n")
        with open(timing_path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"epoch": epoch, "wall_time": rec.wall_time}) + "\n")
        log.info("epoch %d lr %.3g l_sum %.4f dev WER %.2f (%.1fs)", epoch, lr, rec.l_sum, dev_wer, rec.wall_time)
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(str(outdir), vocab, model_cfg, history, skipped,
                       paths["best"], paths["last"], paths["init"])


# -- ablations ---------------------------------------------------------------

@dataclass(frozen=True)
class AblationConfig:
    table: str
    label: str
    temporal_branch: bool = True
    frequency_branch: bool = True
    vae_t: bool = True
    vae_f: bool = True

    @property
    def flags(self) -> list[str]:
        out = []
        if not self.temporal_branch:
            out.append("--no-temporal-branch")
        if not self.frequency_branch:
            out.append("--no-frequency-branch")
        if not self.vae_t:
            out.append("--no-vae-t")
        if not self.vae_f:
            out.append("--no-vae-f")
        return out


BRANCH_ABLATIONS = (
    AblationConfig("branches", "temporal", frequency_branch=False),
    AblationConfig("branches", "frequency", temporal_branch=False),
    AblationConfig("branches", "time-frequency"),
)

LOSS_ABLATIONS = (
    AblationConfig("losses", "ctc", vae_t=False, vae_f=False),
    AblationConfig("losses", "ctc+vae_t", vae_f=False),
    AblationConfig("losses", "ctc+vae_f", vae_t=False),
    AblationConfig("losses", "ctc+vae_t+vae_f"),
)


def run_ablation(entries, model_cfg: ModelConfig, cfg: TrainConfig, outdir,
                 configs=BRANCH_ABLATIONS + LOSS_ABLATIONS) -> list[dict]:
    """Train and score one model per configuration; returns one labelled row each."""
    rows = []
    for ab in configs:
        mcfg = dataclasses.replace(model_cfg, temporal_branch=ab.temporal_branch,
                                   frequency_branch=ab.frequency_branch)
        tcfg = dataclasses.replace(cfg, vae_t=ab.vae_t, vae_f=ab.vae_f)
        sub = os.path.join(outdir, f"{ab.table}-{ab.label.replace('+', '_')}")
        result = train(entries, mcfg, tcfg, sub)
        row = {"table": ab.table, "config": ab.label, "flags": " ".join(ab.flags)}
        for split in ("dev", "test"):
            if any(e.split == split for e in entries):
                ev = evaluate(entries, split, result.best_checkpoint, cfg.beam_width, cfg.precision)
                row[f"{split}_wer"] = round(ev.wer_percent, 4)
        rows.append(row)
    return rows
