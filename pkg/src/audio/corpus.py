"""
Corpus handling: manifest I/O and a deterministic synthetic multi-speaker
corpus generator for desk-scale experiments.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import lfilter

from audio.wav_io import DEFAULT_SAMPLE_RATE, Waveform, read_wav, write_wav
from utils.errors import ManifestError
from utils.retry import retry_with_backoff, reraise_transient

logger = logging.getLogger(__name__)

SplitTag = Literal["train", "test"]
SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.tsv"


class SynthConfig(BaseModel):
    """Configuration of the synthetic corpus."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_speakers: int = Field(10, ge=2)
    utterances_per_speaker: int = Field(40, ge=2)
    min_duration_s: float = Field(1.5, gt=0)
    max_duration_s: float = Field(3.0, gt=0)
    sample_rate: int = Field(DEFAULT_SAMPLE_RATE, gt=0)
    train_ratio: float = Field(0.8, gt=0, lt=1)
    peak_range: tuple[float, float] = (0.3, 0.6)
    noise_level: float = Field(0.002, ge=0)
    seed: int

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.max_duration_s < self.min_duration_s:
            raise ValueError("max_duration_s must be >= min_duration_s")
        low, high = self.peak_range
        if not 0 < low <= high <= 1:
            raise ValueError("peak_range must satisfy 0 < low <= high <= 1")
        return self


@dataclass(frozen=True)
class Utterance:
    waveform: Waveform
    speaker: int
    utterance_id: str


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker: int
    split: SplitTag


@dataclass
class CorpusManifest:
    """List of (path, speaker, split) records; paths are relative to root."""

    entries: list[ManifestEntry]
    sample_rate: int
    root: Path

    @property
    def n_speakers(self) -> int:
        return max(entry.speaker for entry in self.entries) + 1

    @property
    def label_names(self) -> list[str]:
        return [f"spk{k:02d}" for k in range(self.n_speakers)]

    def split(self, tag: SplitTag) -> list[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == tag]

    def load_split(self, tag: SplitTag) -> list[Utterance]:
        """Read every utterance of a split from disk."""
        entries = self.split(tag)
        if not entries:
            raise ManifestError(f"corpus under {self.root} has an empty {tag} split")
        return [
            Utterance(
                waveform=read_wav(self.root / entry.path, expected_rate=self.sample_rate),
                speaker=entry.speaker,
                utterance_id=Path(entry.path).stem,
            )
            for entry in entries
        ]

    def validate(self) -> None:
        """Check split tags, dense labels and per-speaker split coverage."""
        if not self.entries:
            raise ManifestError("manifest has no entries")
        for entry in self.entries:
            if entry.split not in SPLITS:
                raise ManifestError(f"{entry.path}: unknown split tag {entry.split!r}")
            if entry.speaker < 0:
                raise ManifestError(f"{entry.path}: negative speaker index {entry.speaker}")
        for tag in SPLITS:
            present = {entry.speaker for entry in self.split(tag)}
            missing = sorted(set(range(self.n_speakers)) - present)
            if missing:
                raise ManifestError(f"speakers {missing} have no utterances in the {tag} split")

    @retry_with_backoff
    def save(self, path: str | Path) -> None:
        lines = [f"# sample_rate={self.sample_rate}"]
        lines += [f"{entry.path}\t{entry.speaker}\t{entry.split}" for entry in self.entries]
        try:
            Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            reraise_transient(e)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ManifestError(f"cannot read manifest {path}: {e}") from e
        if not lines or not lines[0].startswith("# sample_rate="):
            raise ManifestError(f"{path}: missing '# sample_rate=' header line")
        try:
            sample_rate = int(lines[0].split("=", 1)[1])
        except ValueError as e:
            raise ManifestError(f"{path}: bad sample rate header {lines[0]!r}") from e

        entries = []
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ManifestError(f"{path}:{number}: expected 3 tab-separated fields")
            try:
                speaker = int(fields[1])
            except ValueError as e:
                raise ManifestError(f"{path}:{number}: bad speaker index {fields[1]!r}") from e
            entries.append(ManifestEntry(fields[0], speaker, fields[2]))

        manifest = cls(entries=entries, sample_rate=sample_rate, root=path.parent)
        manifest.validate()
        return manifest


@dataclass(frozen=True)
class _Voice:
    f0: float
    formants: np.ndarray
    bandwidths: np.ndarray
    rolloff: float


def _draw_voices(cfg: SynthConfig, rng: np.random.Generator) -> list[_Voice]:
    # f0 and vocal-tract scale both grow with the speaker index
    voices = []
    for k in range(cfg.n_speakers):
        frac = k / (cfg.n_speakers - 1)
        tract = 0.85 + 0.4 * frac + rng.uniform(-0.03, 0.03)
        voices.append(_Voice(
            f0=95.0 * 2.6 ** frac * rng.uniform(0.97, 1.03),
            formants=np.array([520.0, 1480.0, 2500.0]) * tract * rng.uniform(0.95, 1.05, size=3),
            bandwidths=np.array([80.0, 110.0, 160.0]) * rng.uniform(0.9, 1.1, size=3),
            rolloff=rng.uniform(1.0, 1.6),
        ))
    return voices


def _render_utterance(voice: _Voice, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    fs = cfg.sample_rate
    n = int(round(rng.uniform(cfg.min_duration_s, cfg.max_duration_s) * fs))
    t = np.arange(n) / fs

    # Phrase contour: slow drift plus declination
    contour = (
        1.0
        + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
        - 0.05 * t / max(t[-1], 1e-9)
    )
    f0_track = voice.f0 * contour
    phase = 2 * np.pi * np.cumsum(f0_track) / fs

    n_harmonics = max(1, min(60, int(0.45 * fs / (voice.f0 * 1.1))))
    harmonics = np.arange(1, n_harmonics + 1)
    source = np.sin(np.outer(phase, harmonics)) @ harmonics.astype(np.float64) ** -voice.rolloff

    signal = source
    for formant, bandwidth in zip(voice.formants * rng.uniform(0.96, 1.04, size=3), voice.bandwidths):
        radius = np.exp(-np.pi * bandwidth / fs)
        theta = 2 * np.pi * formant / fs
        signal = lfilter([1.0 - radius], [1.0, -2.0 * radius * np.cos(theta), radius ** 2], signal)

    syllable_rate = rng.uniform(3.0, 5.0)
    envelope = 0.15 + 0.85 * (0.5 - 0.5 * np.cos(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi)))
    signal = signal * envelope

    signal = signal / np.max(np.abs(signal)) * rng.uniform(*cfg.peak_range)
    return signal + rng.normal(0.0, cfg.noise_level, size=n)


def synth_corpus(config: SynthConfig, out_dir: str | Path) -> CorpusManifest:
    """
    Generate a synthetic corpus of WAV files and its manifest.

    The result is a pure function of the config (seed included).

    Args:
        config: Corpus configuration
        out_dir: Directory receiving wavs/ and manifest.tsv

    Returns:
        The written manifest
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    voices = _draw_voices(config, rng)
    n_train = min(
        config.utterances_per_speaker - 1,
        max(1, round(config.utterances_per_speaker * config.train_ratio)),
    )

    entries = []
    for speaker, voice in enumerate(voices):
        order = rng.permutation(config.utterances_per_speaker)
        train_ids = set(order[:n_train].tolist())
        for index in range(config.utterances_per_speaker):
            samples = _render_utterance(voice, config, rng)
            relative = f"wavs/spk{speaker:02d}_utt{index:03d}.wav"
            write_wav(out_dir / relative, Waveform(samples, config.sample_rate))
            entries.append(ManifestEntry(relative, speaker, "train" if index in train_ids else "test"))
        logger.debug(f"Synthesized speaker {speaker} (f0={voice.f0:.1f} Hz)")

    manifest = CorpusManifest(entries=entries, sample_rate=config.sample_rate, root=out_dir)
    manifest.validate()
    manifest.save(out_dir / MANIFEST_NAME)
    logger.info(
        f"✓ Synthetic corpus: {config.n_speakers} speakers, {len(entries)} utterances "
        f"({len(manifest.split('train'))} train / {len(manifest.split('test'))} test)"
    )
    return manifest
