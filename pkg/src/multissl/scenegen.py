"""Synthetic 360-degree audio-visual scene generator with exact ground truth.

Scenes are a handful of tonal sources moving along the horizon of an
equirectangular panorama. Every sample is fully determined by its SceneSpec,
so frames, binaural audio, and semantic labels can all be regenerated
bit-exactly from the stored scene description.

On-disk layout (all containers are plain .npy / 16-bit WAV / JSON, chosen so
rereading and rewriting a sample is byte-identical):

    root/manifest.json
    root/<split>/<sample_id>/frames.npy        uint8  (n_frames, H, W)
    root/<split>/<sample_id>/labels.npy        int8   (n_frames, sem_bins), -1 = empty
    root/<split>/<sample_id>/audio.wav         2-channel 16-bit PCM
    root/<split>/<sample_id>/audio_rotp90.wav  optional spatial-resolution targets
    root/<split>/<sample_id>/audio_rotm90.wav
    root/<split>/<sample_id>/scene.json
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .signal import Waveform, read_wav, render_binaural, wrap_azimuth, write_wav
from .util import canonical_json, stable_hash, to_plain

NUM_CLASSES = 5
# one fundamental per class so classes stay acoustically separable
CLASS_TONES_HZ = (220.0, 294.0, 392.0, 523.0, 660.0)
NUM_HARMONICS = 4
MIN_AZIMUTH_SEPARATION_DEG = 20.0
S3R_ROTATIONS_DEG = (90, -90)


class SceneError(ValueError):
    """Raised for invalid scene descriptions or generator misuse."""


@dataclass(frozen=True)
class SourceSpec:
    class_id: int
    azimuth_start: float  # degrees in [-180, 180)
    angular_velocity: float  # degrees / second
    tone_hz: float
    timbre_seed: int

    def azimuth_at(self, t: float) -> float:
        return wrap_azimuth(self.azimuth_start + self.angular_velocity * t)


@dataclass(frozen=True)
class SceneSpec:
    sources: tuple[SourceSpec, ...]
    duration: float
    seed: int

    def __post_init__(self):
        if not 1 <= len(self.sources) <= 4:
            raise SceneError("scenes must contain between 1 and 4 sources")
        if self.duration <= 0:
            raise SceneError("scene duration must be positive")
        for s in self.sources:
            if not 0 <= s.class_id < NUM_CLASSES:
                raise SceneError(f"class_id {s.class_id} out of range")
            if not -180.0 <= s.azimuth_start < 180.0:
                raise SceneError("azimuth_start must lie in [-180, 180)")
        az = [s.azimuth_start for s in self.sources]
        for i in range(len(az)):
            for j in range(i + 1, len(az)):
                d = abs(wrap_azimuth(az[i] - az[j]))
                if d < MIN_AZIMUTH_SEPARATION_DEG:
                    raise SceneError("source azimuths too close at t=0")

    def to_json(self) -> str:
        return canonical_json(
            {
                "duration": self.duration,
                "seed": self.seed,
                "sources": [
                    {
                        "class_id": s.class_id,
                        "azimuth_start": s.azimuth_start,
                        "angular_velocity": s.angular_velocity,
                        "tone_hz": s.tone_hz,
                        "timbre_seed": s.timbre_seed,
                    }
                    for s in self.sources
                ],
            }
        )

    @staticmethod
    def from_json(text: str) -> "SceneSpec":
        d = json.loads(text)
        return SceneSpec(
            sources=tuple(SourceSpec(**s) for s in d["sources"]),
            duration=d["duration"],
            seed=d["seed"],
        )


@dataclass
class GeneratorConfig:
    root: str = "data"
    n_classes: int = NUM_CLASSES
    sample_rate: int = 16_000
    fps: int = 4
    height: int = 64
    width: int = 256
    sem_bins: int = 32
    duration: float = 10.0
    min_sources: int = 1
    max_sources: int = 3
    velocity_range: tuple[float, float] = (5.0, 30.0)
    s3r_targets: bool = True

    def __post_init__(self):
        if self.sample_rate % self.fps != 0:
            raise SceneError("sample_rate must be divisible by fps")
        if not 1 <= self.min_sources <= self.max_sources <= 4:
            raise SceneError("source count bounds must satisfy 1 <= min <= max <= 4")
        if self.n_classes > NUM_CLASSES:
            raise SceneError(f"at most {NUM_CLASSES} classes are defined")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))

    def fingerprint_dict(self) -> dict:
        """Generation parameters only; the storage root is not part of identity."""
        d = to_plain(self)
        d.pop("root")
        return d


@dataclass
class AVSample:
    frames: np.ndarray  # uint8 (n_frames, H, W)
    audio: Waveform
    labels: np.ndarray  # int8 (n_frames, sem_bins), -1 = empty
    scene: SceneSpec
    rotated_audio: dict[int, Waveform] | None = None


@dataclass
class DatasetManifest:
    root: str
    split: str
    ids: list[str]
    config_hash: str


def azimuth_to_column(theta_deg: float, width: int) -> float:
    """Equirectangular mapping: azimuth -180..180 spans columns 0..W."""
    return (theta_deg + 180.0) / 360.0 * width


def azimuth_to_bin(theta_deg: float, n_bins: int) -> int:
    return int((wrap_azimuth(theta_deg) + 180.0) / 360.0 * n_bins) % n_bins


def panorama_rotation_degrees(rotation_bin: int, bins: int) -> float:
    """Microphone rotation matching rotate_panorama(frames, rotation_bin, bins).

    rotate_panorama rolls content to the right; the camera rotation doing the
    same thing is negative by our column convention.
    """
    return -rotation_bin * 360.0 / bins


def sample_scene(config: GeneratorConfig, rng: np.random.Generator) -> SceneSpec:
    """Draw a random scene honoring the azimuth-separation invariant."""
    n_src = int(rng.integers(config.min_sources, config.max_sources + 1))
    azimuths: list[float] = []
    for _ in range(n_src):
        for _attempt in range(1000):
            cand = float(rng.uniform(-180.0, 180.0))
            if all(
                abs(wrap_azimuth(cand - a)) >= MIN_AZIMUTH_SEPARATION_DEG
                for a in azimuths
            ):
                azimuths.append(cand)
                break
        else:
            raise SceneError("failed to place sources with minimum separation")
    sources = []
    for az in azimuths:
        class_id = int(rng.integers(0, config.n_classes))
        vmin, vmax = config.velocity_range
        speed = float(rng.uniform(vmin, vmax))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        sources.append(
            SourceSpec(
                class_id=class_id,
                azimuth_start=az,
                angular_velocity=sign * speed,
                tone_hz=CLASS_TONES_HZ[class_id],
                timbre_seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return SceneSpec(
        sources=tuple(sources),
        duration=config.duration,
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def _source_tone(source: SourceSpec, n_samples: int, sample_rate: int) -> np.ndarray:
    """Deterministic harmonic tone for one source, peak-normalized to 1."""
    rng = np.random.default_rng(source.timbre_seed)
    amps = rng.uniform(0.3, 1.0, NUM_HARMONICS)
    amps /= amps.sum()
    phases = rng.uniform(0.0, 2.0 * np.pi, NUM_HARMONICS)
    t = np.arange(n_samples) / sample_rate
    x = np.zeros(n_samples)
    for h in range(NUM_HARMONICS):
        x += amps[h] * np.sin(2.0 * np.pi * source.tone_hz * (h + 1) * t + phases[h])
    peak = float(np.max(np.abs(x)))
    return x / peak if peak > 0 else x


def render_audio(
    scene: SceneSpec, config: GeneratorConfig, mic_rotation: float = 0.0
) -> Waveform:
    """Binaural mix of all sources, re-panned once per video frame.

    Tones are synthesized over the full clip (phase-continuous); the pan and
    interaural delay are held constant within each frame-length chunk using
    the source azimuth at the chunk start, which keeps audio and video motion
    locked to the same timeline.
    """
    sr = config.sample_rate
    n_total = int(round(scene.duration * sr))
    chunk = sr // config.fps
    n_frames = config.n_frames
    gain = 0.8 / len(scene.sources)
    tones = [_source_tone(s, n_total, sr) * gain for s in scene.sources]
    out = np.zeros((2, n_total), dtype=np.float32)
    for f in range(n_frames):
        t_f = f / config.fps
        lo, hi = f * chunk, min((f + 1) * chunk, n_total)
        chunk_sources = [
            (s.azimuth_at(t_f), tone[lo:hi]) for s, tone in zip(scene.sources, tones)
        ]
        out[:, lo:hi] = render_binaural(
            chunk_sources, mic_rotation=mic_rotation, sample_rate=sr
        ).samples
    return Waveform(out, sr)


def render_frames(scene: SceneSpec, config: GeneratorConfig) -> np.ndarray:
    """Grayscale panorama frames: one bright blob per source at its azimuth column."""
    h, w = config.height, config.width
    sigma_col = max(2.0, w / 64.0)
    sigma_row = max(2.0, h / 16.0)
    cols = np.arange(w)
    rows = np.arange(h)
    frames = np.zeros((config.n_frames, h, w), dtype=np.float64)
    for f in range(config.n_frames):
        t_f = f / config.fps
        for s in scene.sources:
            c = azimuth_to_column(s.azimuth_at(t_f), w)
            # circular column distance so blobs wrap around the panorama seam
            dc = np.abs(cols + 0.5 - c)
            dc = np.minimum(dc, w - dc)
            r = h * (s.class_id + 1) / (config.n_classes + 1)
            dr = rows + 0.5 - r
            blob = np.exp(-0.5 * (dr[:, None] / sigma_row) ** 2) * np.exp(
                -0.5 * (dc[None, :] / sigma_col) ** 2
            )
            frames[f] += blob
    return np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)


def render_labels(scene: SceneSpec, config: GeneratorConfig) -> np.ndarray:
    """Per-frame, per-azimuth-bin class occupancy; -1 marks empty bins.

    When two sources share a bin the later one in the scene's source list
    wins (deterministic tie-break).
    """
    labels = np.full((config.n_frames, config.sem_bins), -1, dtype=np.int8)
    for f in range(config.n_frames):
        t_f = f / config.fps
        for s in scene.sources:
            b = azimuth_to_bin(s.azimuth_at(t_f), config.sem_bins)
            labels[f, b] = s.class_id
    return labels


def render_sample(scene: SceneSpec, config: GeneratorConfig) -> AVSample:
    rotated = None
    if config.s3r_targets:
        rotated = {
            r: render_audio(scene, config, mic_rotation=float(r))
            for r in S3R_ROTATIONS_DEG
        }
    return AVSample(
        frames=render_frames(scene, config),
        audio=render_audio(scene, config),
        labels=render_labels(scene, config),
        scene=scene,
        rotated_audio=rotated,
    )


def _write_sample(directory: Path, sample: AVSample) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "frames.npy", sample.frames)
    np.save(directory / "labels.npy", sample.labels)
    write_wav(directory / "audio.wav", sample.audio)
    if sample.rotated_audio is not None:
        for rot, wav in sample.rotated_audio.items():
            name = f"audio_rot{'p' if rot >= 0 else 'm'}{abs(rot)}.wav"
            write_wav(directory / name, wav)
    (directory / "scene.json").write_text(sample.scene.to_json())


def generate_dataset(
    config: GeneratorConfig, n_samples: int, seed: int, split: str = "train"
) -> DatasetManifest:
    """Write one split of fully reproducible samples and update the root manifest."""
    if n_samples < 1:
        raise SceneError("n_samples must be >= 1")
    root = Path(config.root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset root {root}: {e}") from e
    cfg_hash = stable_hash(config.fingerprint_dict())
    ids = []
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        scene = sample_scene(config, rng)
        sample_id = f"{split}-{i:05d}"
        _write_sample(root / split / sample_id, render_sample(scene, config))
        ids.append(sample_id)

    manifest_path = root / "manifest.json"
    manifest = {"config_hash": cfg_hash, "config": None, "splits": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("config_hash") != cfg_hash:
            raise SceneError(
                "dataset root already holds a different generator config"
            )
    manifest["config_hash"] = cfg_hash
    manifest["config"] = config.fingerprint_dict()
    manifest.setdefault("splits", {})[split] = {"seed": seed, "ids": ids}
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )
    return DatasetManifest(root=str(root), split=split, ids=ids, config_hash=cfg_hash)


class SceneDataset:
    """Read-only view of one generated split."""

    def __init__(self, root: str | Path, split: str):
        self.root = Path(root)
        self.split = split
        manifest = json.loads((self.root / "manifest.json").read_text())
        if split not in manifest["splits"]:
            raise SceneError(f"split '{split}' not present in {self.root}")
        self.ids: list[str] = manifest["splits"][split]["ids"]
        self.config_hash: str = manifest["config_hash"]
        cfg = dict(manifest["config"])
        cfg["velocity_range"] = tuple(cfg["velocity_range"])
        self.config = GeneratorConfig(root=str(self.root), **cfg)

    def __len__(self) -> int:
        return len(self.ids)

    def sample_dir(self, index: int) -> Path:
        return self.root / self.split / self.ids[index]

    def load(self, index: int) -> AVSample:
        return load_sample_dir(self.sample_dir(index))

    def scene(self, index: int) -> SceneSpec:
        return SceneSpec.from_json((self.sample_dir(index) / "scene.json").read_text())

    @property
    def has_s3r_targets(self) -> bool:
        return bool(self.config.s3r_targets)


def load_sample_dir(directory: str | Path) -> AVSample:
    """Load one sample directory laid out as documented at the top of this module.

    Also serves as the ingestion hook for externally recorded data arranged
    in the same layout (untested against any real recording rig).
    """
    directory = Path(directory)
    rotated = None
    rot_files = {
        r: directory / f"audio_rot{'p' if r >= 0 else 'm'}{abs(r)}.wav"
        for r in S3R_ROTATIONS_DEG
    }
    if all(p.exists() for p in rot_files.values()):
        rotated = {r: read_wav(p) for r, p in rot_files.items()}
    return AVSample(
        frames=np.load(directory / "frames.npy"),
        audio=read_wav(directory / "audio.wav"),
        labels=np.load(directory / "labels.npy"),
        scene=SceneSpec.from_json((directory / "scene.json").read_text()),
        rotated_audio=rotated,
    )


def rotate_panorama(frames: np.ndarray, rotation_bin: int, bins: int) -> np.ndarray:
    """Circular column shift by rotation_bin * W / bins.

    The shifted panorama is what a camera rotated by
    panorama_rotation_degrees(rotation_bin, bins) would have seen.
    """
    w = frames.shape[-1]
    if w % bins != 0:
        raise SceneError(f"width {w} not divisible by {bins} rotation bins")
    if not 0 <= rotation_bin < bins:
        raise SceneError("rotation_bin out of range")
    return np.roll(frames, rotation_bin * (w // bins), axis=-1)


def flow_features(
    frames: np.ndarray, precomputed: np.ndarray | None = None
) -> np.ndarray:
    """Motion proxy: per-pixel absolute temporal difference between frames.

    Returns float32 (n_frames - 1, H, W). `precomputed` lets callers swap in
    an external flow estimator with the same shape contract.
    """
    if precomputed is not None:
        return np.asarray(precomputed, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise SceneError("flow needs at least two frames")
    x = frames.astype(np.float32)
    if frames.dtype == np.uint8:
        x = x / 255.0
    return np.abs(np.diff(x, axis=0))
