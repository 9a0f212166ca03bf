"""
Run configuration.

A config file is plain text, one ``section.key=value`` per line::

    # attack settings
    attack.lambda=10
    attack.theta_max=10,87,87,1,2,5,1
    campaign.kinds=otsa,baseline

``--set key=value`` overrides file keys and ``--seed`` / ``--out``
override both. When no seed is given anywhere, ``OTSA_SEED`` is read
from the environment (after loading ``.env``).
"""

from __future__ import annotations

import logging
import os
import zlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .ascm import DEFAULT_APERTURE_ANGLE, DEFAULT_BANDWIDTH, DEFAULT_CENTER_FREQUENCY, ImagingParams
from .attack import DEFAULT_THETA_MAX, DEFAULT_THETA_MIN, AttackConfig
from .classifier import TrainConfig
from .dataio import SynthConfig
from .errors import ConfigError, ParameterError
from .evaluation import CampaignConfig


logger = logging.getLogger(__name__)

SEED_ENV_VAR = "OTSA_SEED"
SECTIONS = ("synth", "imaging", "train", "attack", "campaign")
TOP_LEVEL_KEYS = ("seed", "output_dir", "jobs")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)


class SynthSection(_Section):
    num_classes: int = Field(4, ge=2)
    images_per_class: int = Field(100, ge=1)
    image_size: int = Field(128, ge=32)
    speckle: float = Field(0.5, ge=0.0, le=1.0)
    rotation_range: float = Field(10.0, ge=0.0)
    max_shift: float = Field(4.0, ge=0.0)
    shadow_length: float = Field(10.0, ge=0.0)


class ImagingSection(_Section):
    fc: float = Field(DEFAULT_CENTER_FREQUENCY, gt=0)
    bandwidth: float = Field(DEFAULT_BANDWIDTH, gt=0)
    phi_m: float = Field(DEFAULT_APERTURE_ANGLE, gt=0)
    m_star: int = Field(128, ge=2)
    n_star: int = Field(128, ge=2)
    length_in_pixels: bool = False


class TrainSection(_Section):
    epochs: int = Field(80, ge=0)
    learning_rate: float = Field(0.2, gt=0)
    batch_size: int = Field(16, ge=1)
    test_fraction: float = Field(0.25, gt=0, lt=1)


class AttackSection(_Section):
    n_scatterers: int = Field(1, ge=1)
    lam: float = Field(10.0, ge=0, alias="lambda")
    sigma: float = Field(0.4, gt=0)
    max_score: float = Field(0.5, gt=0)
    tau: float = Field(0.10, gt=0, lt=1)
    step_size: float = Field(0.1, gt=0)
    max_iters: int = Field(200, ge=0)
    theta_min: List[float] = Field(default_factory=lambda: list(DEFAULT_THETA_MIN))
    theta_max: List[float] = Field(default_factory=lambda: list(DEFAULT_THETA_MAX))

    @field_validator("theta_min", "theta_max", mode="before")
    @classmethod
    def split_bounds(cls, value: Any) -> Any:
        return _split_list(value)


class CampaignSection(_Section):
    kinds: List[str] = Field(default_factory=lambda: ["otsa", "baseline"])
    n_values: List[int] = Field(default_factory=lambda: [1, 2, 3])
    seeds: List[int] = Field(default_factory=lambda: [0])
    per_class: Optional[int] = Field(None, ge=1)
    fgsm_epsilon: float = Field(0.05, ge=0)

    @field_validator("kinds", "n_values", "seeds", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("per_class", mode="before")
    @classmethod
    def none_keyword(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none", "all"):
            return None
        return value


class RunConfig(_Section):
    """Every setting one CLI invocation needs."""

    seed: int = Field(0, ge=0)
    output_dir: str = "runs"
    jobs: int = Field(1, ge=1)
    synth: SynthSection = Field(default_factory=SynthSection)
    imaging: ImagingSection = Field(default_factory=ImagingSection)
    train: TrainSection = Field(default_factory=TrainSection)
    attack: AttackSection = Field(default_factory=AttackSection)
    campaign: CampaignSection = Field(default_factory=CampaignSection)

    # ----- Component settings -----

    def synth_config(self) -> SynthConfig:
        s = self.synth
        config = SynthConfig(
            num_classes=s.num_classes,
            images_per_class=s.images_per_class,
            image_size=s.image_size,
            speckle=s.speckle,
            rotation_range=s.rotation_range,
            max_shift=s.max_shift,
            shadow_length=s.shadow_length,
            seed=component_seed(self.seed, "synth"),
        )
        try:
            config.validate()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc
        return config

    def imaging_params(self) -> ImagingParams:
        i = self.imaging
        return _checked(
            ImagingParams,
            bandwidth=i.bandwidth,
            center_frequency=i.fc,
            aperture_angle=i.phi_m,
            m_star=i.m_star,
            n_star=i.n_star,
            length_in_pixels=i.length_in_pixels,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return _checked(
            TrainConfig,
            epochs=t.epochs,
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            seed=component_seed(self.seed, "train"),
        )

    def attack_config(self) -> AttackConfig:
        a = self.attack
        return _checked(
            AttackConfig,
            n_scatterers=a.n_scatterers,
            lam=a.lam,
            sigma=a.sigma,
            max_score=a.max_score,
            theta_min=tuple(a.theta_min),
            theta_max=tuple(a.theta_max),
            step_size=a.step_size,
            max_iters=a.max_iters,
            tau=a.tau,
            seed=component_seed(self.seed, "attack"),
            max_scatterers=max(3, a.n_scatterers, *self.campaign.n_values),
        )

    def campaign_config(self) -> CampaignConfig:
        c = self.campaign
        return _checked(
            CampaignConfig,
            kinds=tuple(c.kinds),
            n_values=tuple(c.n_values),
            seeds=tuple(c.seeds),
            per_class=c.per_class,
            fgsm_epsilon=c.fgsm_epsilon,
            sample_seed=component_seed(self.seed, "campaign"),
        )

    def validate_components(self) -> None:
        """Build every component once so invariant violations surface as :class:`ConfigError`."""
        self.synth_config()
        self.imaging_params()
        self.train_config()
        self.attack_config()
        self.campaign_config()


def _checked(factory, **kwargs):
    """Build a component; a :class:`ParameterError` becomes a :class:`ConfigError`."""
    try:
        return factory(**kwargs)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def component_seed(root: int, label: str) -> int:
    """Stable per-component seed derived from *root* and a fixed *label*."""
    sequence = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(label.encode("utf-8")),))
    return int(sequence.generate_state(1)[0])


def seed_from_env() -> Optional[int]:
    load_dotenv()
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_assignment(text: str, where: str = "--set") -> tuple:
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    return key, value.strip()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Flat ``{dotted.key: raw value}`` mapping; later lines win."""
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, value = parse_assignment(stripped, f"{source}:{number}")
        values[key] = value
    return values


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        section, dot, name = key.partition(".")
        if not dot:
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            nested[key] = value
            continue
        if section not in SECTIONS or not name or "." in name:
            raise ConfigError(f"unknown config key {key!r}")
        nested.setdefault(section, {})[name] = value
    return nested


def build_run_config(flat: Dict[str, str]) -> RunConfig:
    try:
        config = RunConfig.model_validate(_nest(flat))
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from exc
    config.validate_components()
    return config


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> RunConfig:
    """Merge file, ``--set`` overrides, dedicated flags and ``OTSA_SEED``."""
    flat: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        flat.update(parse_config_text(text, str(path)))
    for item in overrides:
        key, value = parse_assignment(item)
        flat[key] = value
    if seed is not None:
        flat["seed"] = str(seed)
    if output_dir is not None:
        flat["output_dir"] = output_dir
    if "seed" not in flat:
        env_seed = seed_from_env()
        if env_seed is not None:
            flat["seed"] = str(env_seed)
            logger.debug("root seed %d taken from %s", env_seed, SEED_ENV_VAR)
    return build_run_config(flat)
