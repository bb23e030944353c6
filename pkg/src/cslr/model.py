"""Time-frequency recognition network.

Frames go through a small strided 2D CNN with global average pooling.  The
resulting ``(T, C')`` sequence feeds two structurally identical heads
(conv1d, pool, conv1d, pool, BiLSTM): one on the features as-is, one on their
per-channel DFT magnitude along time.  The two ``(T//4, 2H)`` outputs are
summed and mapped to ``vocab_size + 1`` logits, class 0 being the CTC blank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kvconfig
from .nn import layers as L
from .nn.functional import ShapeError, conv_out_len
from .nn.tape import Param, Tape, Var


@dataclass
class ModelConfig:
    vocab_size: int = 12
    in_channels: int = 3
    input_size: int = 224
    cnn_channels: tuple[int, ...] = (16, 32, 64, 64)
    conv1d_kernel: int = 5
    conv1d_stride: int = 1
    conv1d_padding: int = 2
    conv1d_channels: int = 0  # 0: same as the frame feature size
    lstm_hidden: int = 32
    aux_classifiers: bool = True
    temporal_branch: bool = True
    frequency_branch: bool = True

    def __post_init__(self):
        self.cnn_channels = tuple(self.cnn_channels)
        if not (self.temporal_branch or self.frequency_branch):
            raise kvconfig.ConfigError("at least one of temporal_branch / frequency_branch must be enabled")
        if self.vocab_size < 0 or self.lstm_hidden < 1 or not self.cnn_channels:
            raise kvconfig.ConfigError("vocab_size >= 0, lstm_hidden >= 1 and cnn_channels non-empty required")
        if self.conv1d_kernel % 2 == 0:
            raise kvconfig.ConfigError("conv1d_kernel must be odd")

    @property
    def feature_dim(self) -> int:
        return self.cnn_channels[-1]

    @property
    def branch_dim(self) -> int:
        return 2 * self.lstm_hidden

    @property
    def num_classes(self) -> int:
        return self.vocab_size + 1


def dft_time(f: np.ndarray) -> np.ndarray:
    """Magnitude of the unnormalised DFT of each channel along time (axis 0)."""
    return np.abs(np.fft.fft(f, axis=0)).astype(f.dtype, copy=False)


def dft_magnitude(tape: Tape, x: Var, name: str = "dft") -> Var:
    """Tape op for :func:`dft_time`."""
    spec = np.fft.fft(x.value, axis=0)
    mag = np.abs(spec)
    dtype = x.value.dtype
    tape.note_modulus(spec)

    def backward(dy):
        with np.errstate(invalid="ignore", divide="ignore"):
            phase = np.where(mag > 0, spec / mag, 0.0)
        T = x.value.shape[0]
        return ((T * np.fft.ifft(dy * phase, axis=0)).real.astype(dtype, copy=False),)

    return tape.record(name, (x,), mag.astype(dtype, copy=False), backward)


class SequenceBranch(L.Module):
    """conv1d -> relu -> maxpool(2) -> conv1d -> relu -> maxpool(2) -> BiLSTM."""

    def __init__(self, cfg: ModelConfig, rng, name, dtype):
        mid = cfg.conv1d_channels or cfg.feature_dim
        k, s, p = cfg.conv1d_kernel, cfg.conv1d_stride, cfg.conv1d_padding
        self.conv1 = L.Conv1d(cfg.feature_dim, mid, k, rng, s, p, f"{name}.conv1", dtype)
        self.conv2 = L.Conv1d(mid, mid, k, rng, s, p, f"{name}.conv2", dtype)
        self.lstm = L.BiLSTM(mid, cfg.lstm_hidden, rng, f"{name}.bilstm", dtype)
        self.name = name

    def __call__(self, tape: Tape, x: Var) -> Var:
        if x.shape[0] < 4:
            raise ShapeError(f"{self.name}: sequence of {x.shape[0]} steps is too short; "
                             "pad the video to at least 4 frames", required=4)
        h = L.maxpool1d(tape, L.relu(tape, self.conv1(tape, x), f"{self.name}.relu1"), name=f"{self.name}.pool1")
        h = L.maxpool1d(tape, L.relu(tape, self.conv2(tape, h), f"{self.name}.relu2"), name=f"{self.name}.pool2")
        return self.lstm(tape, h)


@dataclass
class ModelOutput:
    frame_features: Var
    temporal: Var | None
    frequency: Var | None
    logits: Var
    aux_temporal: Var | None
    aux_frequency: Var | None


class TFNet(L.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.cnn = []
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.cnn_channels):
            self.cnn.append(L.Conv2d(cin, cout, 3, rng, stride=2, padding=1, name=f"frame.conv{i + 1}", dtype=dtype))
            cin = cout
        self.temporal = SequenceBranch(cfg, rng, "temporal", dtype) if cfg.temporal_branch else None
        self.frequency = SequenceBranch(cfg, rng, "frequency", dtype) if cfg.frequency_branch else None
        self.classifier = L.Linear(cfg.branch_dim, cfg.num_classes, rng, "classifier", dtype)
        self.aux_temporal = self.aux_frequency = None
        if cfg.aux_classifiers:
            if cfg.temporal_branch:
                self.aux_temporal = L.Linear(cfg.branch_dim, cfg.num_classes, rng, "aux_temporal", dtype)
            if cfg.frequency_branch:
                self.aux_frequency = L.Linear(cfg.branch_dim, cfg.num_classes, rng, "aux_frequency", dtype)

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        own = self.named_params()
        if set(own) != set(arrays):
            missing, extra = sorted(set(own) - set(arrays)), sorted(set(arrays) - set(own))
            raise ValueError(f"parameter set mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            if arrays[name].shape != p.value.shape:
                raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != model {p.value.shape}")
            p.value = np.array(arrays[name], dtype=self.dtype)
            p.zero_grad()

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    # -- stages ---------------------------------------------------------------

    def extract_frame_features(self, tape: Tape, video) -> Var:
        """``(T, C, H, W)`` video -> ``(T, C')`` features, frame by frame."""
        video = np.asarray(video)
        cfg = self.cfg
        if video.ndim != 4 or video.shape[1] != cfg.in_channels or video.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ShapeError(f"video shape {video.shape} does not match "
                             f"(T, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size})")
        h = Var(np.ascontiguousarray(video.transpose(0, 2, 3, 1), dtype=self.dtype), "video")
        for i, conv in enumerate(self.cnn):
            h = L.relu(tape, conv(tape, h), f"frame.relu{i + 1}")
        return L.global_avg_pool(tape, h, "frame.gap")

    def fuse_classify(self, tape: Tape, ft: Var | None, ff: Var | None) -> Var:
        if ft is not None and ff is not None:
            fused = L.add(tape, ft, ff, "fuse")
        else:
            fused = ft if ft is not None else ff
        return self.classifier(tape, fused)

    def forward(self, tape: Tape, video) -> ModelOutput:
        frame = self.extract_frame_features(tape, video)
        ft = self.temporal(tape, frame) if self.temporal is not None else None
        ff = None
        if self.frequency is not None:
            ff = self.frequency(tape, dft_magnitude(tape, frame))
        logits = self.fuse_classify(tape, ft, ff)
        aux_t = self.aux_temporal(tape, ft) if self.aux_temporal is not None else None
        aux_f = self.aux_frequency(tape, ff) if self.aux_frequency is not None else None
        return ModelOutput(frame, ft, ff, logits, aux_t, aux_f)

    def predict_logits(self, video) -> np.ndarray:
        return self.forward(Tape(), video).logits.value


def output_length(T: int, cfg: ModelConfig) -> int:
    """Length of the branch output for a ``T``-frame input (``T // 4`` by default)."""
    k, st, p = cfg.conv1d_kernel, cfg.conv1d_stride, cfg.conv1d_padding
    for _ in range(2):
        T = conv_out_len(T, k, st, p)
        if T < 2:
            return 0
        T = (T - 2) // 2 + 1
    return T


def required_steps(labels) -> int:
    """Minimum CTC output length: one step per label plus a blank between repeats."""
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def min_frames_for(labels, cfg: ModelConfig) -> int:
    """Fewest input frames giving a CTC-feasible output length for ``labels``."""
    need = required_steps(labels)
    T = 4
    while True:
        try:
            if output_length(T, cfg) >= need:
                return T
        except ShapeError:
            pass
        T += 1
