"""Model geometry and presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError

JOINT = "joint"
SEPARATE = "separate"


@dataclass
class ModelConfig:
    d_enc: int = 768
    n_enc_layers: int = 12
    d_dec: int = 512
    n_dec_layers: int = 8
    n_heads_enc: int = 12
    n_heads_dec: int = 8
    mlp_ratio: int = 4
    vision_patch: int = 16
    audio_patch: tuple = (16, 16)
    frames: int = 8
    image_size: int = 224
    n_mels: int = 128
    audio_t_max: int = 40
    encoder_arch: str = JOINT
    decoder_arch: str = SEPARATE
    fusion_layers: int = 2
    # audio frontend parameters carried alongside the model geometry
    sample_rate: int = 44100
    n_fft: int = 2048
    hop: int = 512

    def __post_init__(self):
        if isinstance(self.audio_patch, list):
            self.audio_patch = tuple(self.audio_patch)
        if self.d_enc % self.n_heads_enc or self.d_dec % self.n_heads_dec:
            raise ConfigError("hidden sizes must be divisible by their head counts")
        for name in ("d_enc", "n_enc_layers", "d_dec", "n_dec_layers", "mlp_ratio",
                     "vision_patch", "frames", "image_size", "n_mels", "audio_t_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.image_size % self.vision_patch:
            raise ConfigError("image_size must be divisible by vision_patch")
        if self.n_mels % self.audio_patch[1]:
            raise ConfigError("n_mels must be divisible by the audio patch freq extent")
        if self.encoder_arch not in (JOINT, SEPARATE):
            raise ConfigError(f"unknown encoder_arch {self.encoder_arch!r}")
        if self.decoder_arch not in (JOINT, SEPARATE):
            raise ConfigError(f"unknown decoder_arch {self.decoder_arch!r}")

    # derived extents
    @property
    def vision_grid(self) -> int:
        return self.image_size // self.vision_patch

    @property
    def vision_patch_dim(self) -> int:
        return self.vision_patch * self.vision_patch * 3

    @property
    def audio_patch_dim(self) -> int:
        return self.audio_patch[0] * self.audio_patch[1]

    @property
    def audio_freq_patches(self) -> int:
        return self.n_mels // self.audio_patch[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["audio_patch"] = list(self.audio_patch)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**{**d, "audio_patch": tuple(d["audio_patch"])})


def paper_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides) if overrides else ModelConfig()


def desk_config(**overrides) -> ModelConfig:
    """Laptop-sized preset: the whole acceptance suite runs in minutes."""
    cfg = ModelConfig(
        d_enc=64,
        n_enc_layers=2,
        d_dec=32,
        n_dec_layers=2,
        n_heads_enc=4,
        n_heads_dec=2,
        vision_patch=16,
        audio_patch=(16, 16),
        frames=4,
        image_size=32,
        n_mels=128,
        audio_t_max=48,
        sample_rate=16384,
    )
    return replace(cfg, **overrides) if overrides else cfg


def paper_patch_count_config(**overrides) -> ModelConfig:
    """Paper dims with 16384 Hz input, matching the documented 640x128
    spectrogram footprint for 20 s audio (the 44.1 kHz parameters do not)."""
    cfg = ModelConfig(sample_rate=16384, audio_t_max=48)
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {
    "paper": paper_config,
    "desk": desk_config,
    "paper-patch-count": paper_patch_count_config,
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
