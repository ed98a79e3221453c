"""Study configuration schema and the paper-design presets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

STUDIES = ("assumption-check", "cn-study", "residual-acf", "posterior", "simulate", "fit")
NU_GRID = [0.25, 0.5, 1.0, 1.5, 2.0]


class StudyConfig(BaseModel):
    """Declarative description of one study run.

    ``sizes`` holds sample sizes for 1-D grids and side counts for 2-D grids.
    ``phi`` fixes the decay for single-design studies; when it is absent the
    decay is calibrated per ``nu`` so the correlation equals
    ``calibration_level`` at ``calibration_distance``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    study: Literal["assumption-check", "cn-study", "residual-acf", "posterior", "simulate", "fit"]
    dim: Literal[1, 2] = 1
    grid: Literal["grid", "lattice"] = "grid"
    sizes: list[int] = Field(default_factory=lambda: [300])
    nus: list[float] = Field(default_factory=lambda: [0.5])
    sigma2: float = Field(1.0, gt=0)
    phi: Optional[float] = Field(None, gt=0)
    calibration_distance: float = Field(0.2, gt=0)
    calibration_level: float = Field(0.05, gt=0, lt=1)
    k_rule: Literal["fixed", "power", "log", "full"] = "log"
    k_param: float = Field(1.5, gt=0)
    k_values: list[int] = Field(default_factory=lambda: [2, 4, 5, 8])
    phi1_factor: float = Field(1.2, gt=0)
    replicates: int = Field(100, ge=2)
    seed: Optional[int] = Field(None, ge=0)
    likelihoods: list[str] = Field(default_factory=lambda: ["full", "vecchia-4", "vecchia-8", "vecchia-16"])
    iterations: int = Field(2000, ge=100)
    chains: int = Field(3, ge=1)
    step: list[float] = Field(default_factory=lambda: [0.1, 0.1])
    adapt: bool = True
    band: float = Field(0.05, gt=0)
    max_lag: int = Field(30, ge=1)
    bracket_factors: list[float] = Field(default_factory=lambda: [0.1, 10.0])
    input: Optional[str] = None

    @field_validator("sizes")
    @classmethod
    def _sizes(cls, v):
        if not v or any(s < 2 for s in v):
            raise ValueError("sizes must be a nonempty list of integers >= 2")
        return v

    @field_validator("nus")
    @classmethod
    def _nus(cls, v):
        if not v or any(not x > 0 for x in v):
            raise ValueError("nus must be a nonempty list of positive numbers")
        return v

    @field_validator("k_values")
    @classmethod
    def _k_values(cls, v):
        if not v or any(k < 1 for k in v):
            raise ValueError("k_values must be a nonempty list of integers >= 1")
        return v

    @field_validator("step")
    @classmethod
    def _step(cls, v):
        if len(v) != 2 or any(not s > 0 for s in v):
            raise ValueError("step needs two positive proposal scales (log phi, log sigma2)")
        return v

    @field_validator("bracket_factors")
    @classmethod
    def _bracket(cls, v):
        if len(v) != 2 or not 0 < v[0] < v[1]:
            raise ValueError("bracket_factors must be [lo, hi] with 0 < lo < hi")
        return v

    @field_validator("likelihoods")
    @classmethod
    def _tags(cls, v):
        from .bayes import parse_tag

        for tag in v:
            parse_tag(tag)
        return v

    @model_validator(mode="after")
    def _study_requirements(self):
        if self.study == "fit" and not self.input:
            raise ValueError("fit needs 'input', the path of a sample CSV")
        if self.dim == 2 and self.grid == "lattice":
            raise ValueError("the lattice grid is one-dimensional")
        return self

    def resolved(self) -> dict:
        return json.loads(self.model_dump_json())


PRESETS: dict[str, dict] = {
    "paper-fig1": {
        "study": "assumption-check",
        "grid": "lattice",
        "sizes": list(range(100, 1201, 100)),
        "nus": NU_GRID,
        "calibration_distance": 0.2,
        "phi1_factor": 1.2,
    },
    "paper-fig2": {
        "study": "cn-study",
        "dim": 1,
        "sizes": [64, 128, 256, 512, 1024, 2048],
        "nus": NU_GRID,
        "calibration_distance": 0.2,
        "replicates": 100,
    },
    "paper-fig3": {
        "study": "cn-study",
        "dim": 2,
        "sizes": [11, 16, 23, 32, 45, 64],
        "nus": NU_GRID,
        "calibration_distance": 0.4,
        "replicates": 100,
    },
    "smoke-cn": {
        "study": "cn-study",
        "dim": 1,
        "sizes": [64, 128, 256],
        "nus": NU_GRID,
        "replicates": 20,
    },
    "paper-fig4": {
        "study": "residual-acf",
        "dim": 1,
        "sizes": [300],
        "nus": [2.0],
        "phi": 10.7,
        "k_values": [2, 4, 5, 8],
    },
    "paper-fig5": {
        "study": "residual-acf",
        "dim": 2,
        "sizes": [30],
        "nus": [1.5],
        "phi": 9.5,
        "k_values": [4, 6, 8, 10],
    },
    "paper-fig6": {
        "study": "posterior",
        "dim": 1,
        "sizes": [300],
        "nus": [2.0],
        "phi": 10.7,
        "likelihoods": ["full", "vecchia-4", "vecchia-8", "vecchia-16"],
    },
    "paper-fig7": {
        "study": "posterior",
        "dim": 2,
        "sizes": [30],
        "nus": [1.5],
        "phi": 9.5,
        "likelihoods": ["full", "vecchia-4", "vecchia-8", "vecchia-16"],
    },
}


def load_config(
    path: str | Path | None,
    preset: str | None = None,
    overrides: dict | None = None,
    study: str | None = None,
) -> StudyConfig:
    """Merge preset, then file, then flag overrides, and validate.

    ``path`` may be a JSON config, a JSON artifact or a CSV artifact; the
    latter two contribute their embedded resolved config.

    ``study`` (the command being run) replaces a preset's study tag, so a
    preset can supply the design for ``simulate`` or ``fit``; a config file
    naming a different study is rejected.

    Raises
    ------
    pydantic.ValidationError
        With one entry per offending field.
    ValueError
        For unknown presets or unreadable JSON.
    """
    data: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        data.update(PRESETS[preset])
        if study is not None:
            data["study"] = study
    if path is not None:
        text = Path(path).read_text()
        if text.startswith("#"):
            # CSV artifact: the resolved config sits in the "# meta:" header line
            text = next((line[len("# meta: "):] for line in text.splitlines() if line.startswith("# meta: ")), "")
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError(f"config {path} must hold a JSON object")
        # artifacts embed the config under "config"; accept them as input
        if "config" in loaded and "study" not in loaded:
            loaded = loaded["config"]
        if study is not None and loaded.get("study", study) != study:
            raise ValueError(f"study: config file describes {loaded['study']!r} but the command is {study!r}")
        data.update(loaded)
    if study is not None:
        data.setdefault("study", study)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return StudyConfig(**data)
