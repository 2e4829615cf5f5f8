"""Dynamic binaural scene simulation.

Azimuths are measured clockwise from the front in degrees, so 90 deg is on the
listener's right. Elevation is always 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.signal import lfilter

from .audio_core import DEFAULT_SAMPLE_RATE, Waveform, fit_length, gain_for_snr, load_wav
from .conditioning import TextPrompt
from .errors import ConfigurationError, DataError, DegenerateInputError, InputError

HEAD_RADIUS_M = 0.0875
SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ClipRecord:
    id: str
    path: str
    caption: str


class Corpus:
    """Captioned mono clips addressed by id.

    Audio is read lazily from ``path`` (resolved relative to the manifest) or
    taken from the in-memory ``audio`` mapping when present.
    """

    def __init__(self, records: Iterable[ClipRecord], root: str | Path | None = None,
                 audio: dict[str, np.ndarray] | None = None, sample_rate: int = DEFAULT_SAMPLE_RATE):
        self.records = list(records)
        self.by_id = {r.id: r for r in self.records}
        if len(self.by_id) != len(self.records):
            raise DataError("duplicate clip ids in corpus")
        self.root = Path(root) if root is not None else None
        self.sample_rate = sample_rate
        self._audio = dict(audio or {})

    @classmethod
    def from_manifest(cls, path: str | Path, sample_rate: int = DEFAULT_SAMPLE_RATE) -> "Corpus":
        path = Path(path)
        records = []
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    records.append(ClipRecord(str(rec["id"]), str(rec["path"]), str(rec["caption"])))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataError(f"{path}:{line_no}: bad manifest record ({exc})") from exc
        return cls(records, root=path.parent, sample_rate=sample_rate)

    def __len__(self):
        return len(self.records)

    def caption(self, clip_id: str) -> str:
        return self.by_id[clip_id].caption

    def load(self, clip_id: str, frames: int) -> np.ndarray:
        """Mono float64 samples, cropped or zero-padded to ``frames``."""
        if clip_id not in self._audio:
            if clip_id not in self.by_id:
                raise DataError(f"unknown clip id {clip_id!r}")
            p = Path(self.by_id[clip_id].path)
            if not p.is_absolute() and self.root is not None:
                p = self.root / p
            if not p.exists():
                raise DataError(f"clip file missing: {p}")
            self._audio[clip_id] = load_wav(p, self.sample_rate).samples.mean(axis=0)
        return fit_length(np.asarray(self._audio[clip_id], dtype=np.float64), frames)


@dataclass
class SourceSpec:
    clip_id: str
    azimuth_deg: float
    snr_db: float
    caption: str

    def __post_init__(self):
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise InputError(f"azimuth {self.azimuth_deg} outside [0, 360)")


@dataclass
class SceneSpec:
    sources: list[SourceSpec]
    target_index: int = 0
    seed: int = 0
    duration_s: float = 10.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    scene_id: str = ""

    def __post_init__(self):
        if not 2 <= len(self.sources) <= 3:
            raise ConfigurationError(f"scenes hold 2 or 3 sources, got {len(self.sources)}")
        if not 0 <= self.target_index < len(self.sources):
            raise ConfigurationError(f"target_index {self.target_index} out of range")
        if self.sources[self.target_index].snr_db != 0.0:
            raise ConfigurationError("the anchor's snr_db must be 0")

    @property
    def target(self) -> SourceSpec:
        return self.sources[self.target_index]

    @property
    def frames(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    def separation_deg(self) -> float:
        """Circular distance between the target and its nearest interferer."""
        t = self.target.azimuth_deg
        return min(circular_distance(t, s.azimuth_deg)
                   for i, s in enumerate(self.sources) if i != self.target_index)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["sources"] = [SourceSpec(**s) for s in d["sources"]]
        return cls(**d)


@dataclass
class BinauralScene:
    mixture: Waveform
    target: Waveform
    target_azimuth_deg: float
    prompt: TextPrompt
    components: list[Waveform] = field(default_factory=list)
    scene_id: str = ""


def circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def scene_rng(global_seed: int, scene_index: int) -> np.random.Generator:
    """Independent generator for one scene, derived from (global_seed, scene_index)."""
    return np.random.default_rng(np.random.SeedSequence([int(global_seed), int(scene_index)]))


def sample_scene(rng: np.random.Generator, corpus: Corpus, n_sources: int, *,
                 duration_s: float = 10.0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                 snr_range: tuple[float, float] = (-5.0, 5.0), min_separation_deg: float = 5.0,
                 seed: int = 0, scene_id: str = "") -> SceneSpec:
    """Draw a random scene: distinct clips, uniform azimuths, uniform interferer SNRs."""
    if n_sources not in (2, 3):
        raise ConfigurationError(f"n_sources must be 2 or 3, got {n_sources}")
    if len(corpus) < n_sources:
        raise ConfigurationError(f"corpus has {len(corpus)} clips, need at least {n_sources}")
    picks = rng.choice(len(corpus), size=n_sources, replace=False)
    while True:
        az = rng.uniform(0.0, 360.0, size=n_sources)
        if all(circular_distance(az[i], az[j]) >= min_separation_deg
               for i in range(n_sources) for j in range(i + 1, n_sources)):
            break
    snrs = [0.0] + list(rng.uniform(snr_range[0], snr_range[1], size=n_sources - 1))
    sources = []
    for k, (idx, a, snr) in enumerate(zip(picks, az, snrs)):
        rec = corpus.records[int(idx)]
        sources.append(SourceSpec(rec.id, float(a) % 360.0, float(snr), rec.caption))
    return SceneSpec(sources, 0, seed, duration_s, sample_rate, scene_id)


def itd_seconds(azimuth_deg: float, head_radius_m: float = HEAD_RADIUS_M,
                speed_of_sound: float = SPEED_OF_SOUND) -> float:
    """Woodworth interaural time difference; positive when the right ear leads."""
    lateral = math.asin(max(-1.0, min(1.0, math.sin(math.radians(azimuth_deg)))))
    return head_radius_m / speed_of_sound * (lateral + math.sin(lateral))


def ild_db(azimuth_deg: float, max_db: float = 6.0) -> float:
    """Right-minus-left level difference in dB."""
    return max_db * math.sin(math.radians(azimuth_deg))


def fractional_delay(x: np.ndarray, delay: float, half_width: int = 32) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples with a Blackman-windowed sinc; same length out."""
    k0 = int(math.floor(delay)) - half_width
    k = np.arange(k0, k0 + 2 * half_width + 2)
    t = k - delay
    span = half_width + 1
    win = np.where(np.abs(t) <= span,
                   0.42 + 0.5 * np.cos(np.pi * t / span) + 0.08 * np.cos(2 * np.pi * t / span), 0.0)
    h = np.sinc(t) * win
    full = np.convolve(x, h)
    # full[m] corresponds to output index m + k0
    out = np.zeros_like(x)
    lo = max(0, k0)
    src = lo - k0
    n = min(len(x) - lo, len(full) - src)
    out[lo:lo + n] = full[src:src + n]
    return out


def rear_shadow(x: np.ndarray, azimuth_deg: float, strength: float, sample_rate: int,
                cutoff_hz: float = 1500.0) -> np.ndarray:
    """Gentle high-frequency roll-off for sources behind the head (front/back cue)."""
    alpha = strength * max(0.0, -math.cos(math.radians(azimuth_deg)))
    if alpha == 0.0:
        return x
    p = math.exp(-2.0 * math.pi * cutoff_hz / sample_rate)
    low = lfilter([1.0 - p], [1.0, -p], x)
    return (1.0 - alpha) * x + alpha * low


class HrirSet:
    """Measured impulse-response pairs, one stereo ``az_<deg>.wav`` per azimuth."""

    def __init__(self, responses: dict[float, np.ndarray], max_gap_deg: float = 1.0):
        if not responses:
            raise DataError("empty HRIR set")
        self.responses = responses
        self.max_gap_deg = max_gap_deg

    @classmethod
    def from_directory(cls, directory: str | Path, sample_rate: int = DEFAULT_SAMPLE_RATE,
                       max_gap_deg: float = 1.0) -> "HrirSet":
        responses = {}
        for p in sorted(Path(directory).glob("az_*.wav")):
            w = load_wav(p, sample_rate)
            if w.channels != 2:
                raise DataError(f"{p} must be stereo")
            responses[float(p.stem[3:]) % 360.0] = w.samples
        return cls(responses, max_gap_deg)

    def lookup(self, azimuth_deg: float) -> np.ndarray:
        az = min(self.responses, key=lambda a: (circular_distance(a, azimuth_deg), a))
        if circular_distance(az, azimuth_deg) > self.max_gap_deg:
            raise DataError(f"no HRIR within {self.max_gap_deg} deg of azimuth {azimuth_deg}")
        return self.responses[az]


@dataclass
class ParametricHead:
    """Spherical-head renderer: Woodworth ITD, broadband ILD, optional rear roll-off."""

    head_radius_m: float = HEAD_RADIUS_M
    speed_of_sound: float = SPEED_OF_SOUND
    max_ild_db: float = 6.0
    rear_shadow: float = 0.3


def spatialize(mono: Waveform, azimuth_deg: float, renderer: ParametricHead | HrirSet | None = None) -> Waveform:
    """Render a mono source at ``azimuth_deg``; output length equals input length."""
    if mono.channels != 1:
        raise InputError("spatialize expects a mono waveform")
    renderer = ParametricHead() if renderer is None else renderer
    x = mono.samples[0]
    fs = mono.sample_rate
    if isinstance(renderer, HrirSet):
        h = renderer.lookup(azimuth_deg)
        out = np.stack([np.convolve(x, h[0])[: len(x)], np.convolve(x, h[1])[: len(x)]])
        return Waveform(out, fs)
    if isinstance(renderer, ParametricHead):
        x = rear_shadow(x, azimuth_deg, renderer.rear_shadow, fs)
        delay = itd_seconds(azimuth_deg, renderer.head_radius_m, renderer.speed_of_sound) * fs
        left, right = x, x
        if delay > 0:
            left = fractional_delay(x, delay)
        elif delay < 0:
            right = fractional_delay(x, -delay)
        g = 10.0 ** (ild_db(azimuth_deg, renderer.max_ild_db) / 40.0)
        return Waveform(np.stack([left / g, right * g]), fs)
    raise DataError(f"unsupported renderer {type(renderer).__name__}")


def render_scene(spec: SceneSpec, corpus: Corpus, renderer: ParametricHead | HrirSet | None = None) -> BinauralScene:
    """Spatialize, scale and sum the sources of ``spec``.

    Interferer gains are set on the mono clips before spatialization.

    Raises:
        DegenerateInputError: a clip is silent over the scene duration.
    """
    frames = spec.frames
    monos = [corpus.load(s.clip_id, frames) for s in spec.sources]
    for s, m in zip(spec.sources, monos):
        if not np.any(m):
            raise DegenerateInputError(f"clip {s.clip_id!r} is silent")
    anchor = Waveform(monos[spec.target_index], spec.sample_rate)
    components = []
    for i, (s, m) in enumerate(zip(spec.sources, monos)):
        w = Waveform(m, spec.sample_rate)
        if i != spec.target_index:
            w = Waveform(m * gain_for_snr(anchor, w, s.snr_db), spec.sample_rate)
        components.append(spatialize(w, s.azimuth_deg, renderer))
    mixture = components[0].samples.copy()
    for c in components[1:]:
        mixture = mixture + c.samples
    return BinauralScene(
        mixture=Waveform(mixture, spec.sample_rate),
        target=components[spec.target_index],
        target_azimuth_deg=spec.target.azimuth_deg,
        prompt=TextPrompt(spec.target.caption),
        components=components,
        scene_id=spec.scene_id,
    )


def write_scenes(path: str | Path, specs: Iterable[SceneSpec]) -> None:
    with open(path, "w") as fh:
        for s in specs:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_scenes(path: str | Path) -> list[SceneSpec]:
    with open(path) as fh:
        return [SceneSpec.from_dict(json.loads(line)) for line in fh if line.strip()]
