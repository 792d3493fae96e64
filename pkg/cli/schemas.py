from pathlib import Path
from typing import List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import settings
from core.errors import SchemaError
from core.files import atomic_write_text
from dataforge.schemas import CourtSpec, SynthConfig
from seqnet.generation import GenerationConfig
from seqnet.schemas import ModelConfig
from trainer.schemas import SearchSpace, TrainConfig

RESOLVED_CONFIG_NAME = "resolved_config.yaml"


class RunConfig(BaseModel):
    """
    Everything a command needs, loaded from one YAML file. Omitted keys take
    the defaults below; unknown keys are rejected. `seed` seeds every stage
    that does not set its own.
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=settings.DEFAULT_SEED, ge=0)
    out_dir: Path = settings.OUTPUT_DIR
    log_level: str = settings.LOG_LEVEL
    synth: SynthConfig = SynthConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    generation: GenerationConfig = GenerationConfig()
    search: Optional[SearchSpace] = None
    # single cutoff for prep/train/eval; None keeps every frame up to the rim
    cutoff_ft: Optional[float] = Field(default=None, ge=0.0)
    cutoffs_ft: List[float] = list(settings.DISTANCE_CUTOFFS_FT)
    include_baseline: bool = False

    @property
    def court(self) -> CourtSpec:
        return self.synth.court

    def with_seed(self, seed: int) -> "RunConfig":
        """Override the run seed along with the synth and training seeds."""
        return self.model_copy(update={
            "seed": seed,
            "synth": self.synth.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
        })

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: expected a mapping at the top level")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise SchemaError(f"{path}: {where}: {first['msg']}") from exc


def write_resolved_config(cfg: RunConfig, out_dir: Optional[Path] = None) -> Path:
    return atomic_write_text(Path(out_dir or cfg.out_dir) / RESOLVED_CONFIG_NAME, cfg.to_yaml())
