"""Experiment configuration: a flat dotted key=value text format.

Every key has a default; a config file only needs the keys it overrides.
Lines are `section.key = value`, blank lines and `#` comments are ignored.
The same flat mapping is embedded in run records, so a recorded run can be
replayed bit-for-bit from its snapshot alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import TrainConfig
from .synthdata import CrackSpec, NoiseSpec, SceneSpec

OUTPUT_ROOT_ENV = "CRACKSEG_OUT"

_SCHEMA: dict[str, type] = {
    "run.label": str,
    "run.out": str,
    "data.n_train": int,
    "data.n_test": int,
    "data.seed": int,
    "crack.n_cracks": int,
    "crack.walk_steps": int,
    "crack.step_sigma": float,
    "crack.width_min": float,
    "crack.width_max": float,
    "crack.depth_min": float,
    "crack.depth_max": float,
    "crack.branch_prob": float,
    "scene.height": int,
    "scene.width": int,
    "scene.texture_octaves": int,
    "scene.texture_amplitude": float,
    "scene.speckle_sigma": float,
    "scene.base_intensity": float,
    "noise.under_rate": float,
    "noise.thin_width_max": float,
    "noise.over_rate": float,
    "noise.jitter_px": float,
    "train.epochs": int,
    "train.lr0": float,
    "train.beta": float,
    "train.lambda": float,
    "train.warmup_epochs": int,
    "train.refresh_every": int,
    "train.batch": int,
    "train.seed": int,
    "train.soft_guidance": bool,
    "eval.radius": int,
}


@dataclass
class ExperimentConfig:
    label: str = "run"
    out_dir: str = "runs/run"
    n_train: int = 40
    n_test: int = 20
    data_seed: int = 7
    crack: CrackSpec = field(default_factory=CrackSpec)
    scene: SceneSpec = field(default_factory=SceneSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    radius: int = 3
    soft_guidance: bool = False

    def validate(self) -> None:
        if self.n_train < 1:
            raise ValueError(f"data.n_train must be >= 1, got {self.n_train}")
        if self.n_test < 0:
            raise ValueError(f"data.n_test must be >= 0, got {self.n_test}")
        if self.radius < 0:
            raise ValueError(f"eval.radius must be >= 0, got {self.radius}")
        self.crack.validate()
        self.scene.validate()
        self.noise.validate()
        self.train.validate()


def config_values(cfg: ExperimentConfig) -> dict:
    """Flat snapshot with every schema key present."""
    c, s, n, t = cfg.crack, cfg.scene, cfg.noise, cfg.train
    return {
        "run.label": cfg.label, "run.out": cfg.out_dir,
        "data.n_train": cfg.n_train, "data.n_test": cfg.n_test, "data.seed": cfg.data_seed,
        "crack.n_cracks": c.n_cracks, "crack.walk_steps": c.walk_steps,
        "crack.step_sigma": c.step_sigma,
        "crack.width_min": c.width_range[0], "crack.width_max": c.width_range[1],
        "crack.depth_min": c.depth_range[0], "crack.depth_max": c.depth_range[1],
        "crack.branch_prob": c.branch_prob,
        "scene.height": s.height, "scene.width": s.width,
        "scene.texture_octaves": s.texture_octaves,
        "scene.texture_amplitude": s.texture_amplitude,
        "scene.speckle_sigma": s.speckle_sigma, "scene.base_intensity": s.base_intensity,
        "noise.under_rate": n.under_rate, "noise.thin_width_max": n.thin_width_max,
        "noise.over_rate": n.over_rate, "noise.jitter_px": n.jitter_px,
        "train.epochs": t.epochs, "train.lr0": t.lr0, "train.beta": t.beta,
        "train.lambda": t.lam, "train.warmup_epochs": t.warmup_epochs,
        "train.refresh_every": t.refresh_every, "train.batch": t.batch,
        "train.seed": t.seed, "train.soft_guidance": cfg.soft_guidance,
        "eval.radius": cfg.radius,
    }


def from_values(values: dict) -> ExperimentConfig:
    v = config_values(ExperimentConfig())
    for key in values:
        if key not in _SCHEMA:
            raise ValueError(f"unknown config key: {key}")
    v.update(values)
    cfg = ExperimentConfig(
        label=str(v["run.label"]), out_dir=str(v["run.out"]),
        n_train=int(v["data.n_train"]), n_test=int(v["data.n_test"]),
        data_seed=int(v["data.seed"]),
        crack=CrackSpec(
            n_cracks=int(v["crack.n_cracks"]), walk_steps=int(v["crack.walk_steps"]),
            step_sigma=float(v["crack.step_sigma"]),
            width_range=(float(v["crack.width_min"]), float(v["crack.width_max"])),
            depth_range=(float(v["crack.depth_min"]), float(v["crack.depth_max"])),
            branch_prob=float(v["crack.branch_prob"])),
        scene=SceneSpec(
            height=int(v["scene.height"]), width=int(v["scene.width"]),
            texture_octaves=int(v["scene.texture_octaves"]),
            texture_amplitude=float(v["scene.texture_amplitude"]),
            speckle_sigma=float(v["scene.speckle_sigma"]),
            base_intensity=float(v["scene.base_intensity"])),
        noise=NoiseSpec(
            under_rate=float(v["noise.under_rate"]),
            thin_width_max=float(v["noise.thin_width_max"]),
            over_rate=float(v["noise.over_rate"]), jitter_px=float(v["noise.jitter_px"])),
        train=TrainConfig(
            epochs=int(v["train.epochs"]), lr0=float(v["train.lr0"]),
            beta=float(v["train.beta"]), lam=float(v["train.lambda"]),
            warmup_epochs=int(v["train.warmup_epochs"]),
            refresh_every=int(v["train.refresh_every"]),
            batch=int(v["train.batch"]), seed=int(v["train.seed"])),
        radius=int(v["eval.radius"]),
        soft_guidance=bool(v["train.soft_guidance"]))
    cfg.validate()
    return cfg


def _parse_value(key: str, raw: str):
    kind = _SCHEMA[key]
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"{key}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return from_values(values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    values = config_values(cfg)
    lines = []
    for key in _SCHEMA:
        val = values[key]
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(dump_config(cfg))


def split_seeds(data_seed: int) -> tuple[int, int]:
    """Disjoint derived seeds for the train and test splits."""
    train_seed = int(np.random.SeedSequence([data_seed, 0]).generate_state(1)[0])
    test_seed = int(np.random.SeedSequence([data_seed, 1]).generate_state(1)[0])
    return train_seed, test_seed


def resolve_out_dir(out_dir: str) -> Path:
    """Relative output paths land under $CRACKSEG_OUT when it is set."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(out_dir)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


@dataclass
class RunRecord:
    config: dict                 # flat snapshot, enough to replay the run
    epochs: list[dict]           # per-epoch log rows
    final: dict                  # aggregate metrics on clean test truth
    wall_clock: float
    artifacts: dict[str, str]

    def validate(self) -> None:
        for key in self.config:
            if key not in _SCHEMA:
                raise ValueError(f"run record has unknown config key {key!r}")


def save_run_record(path, record: RunRecord) -> None:
    payload = {"config": record.config, "epochs": record.epochs, "final": record.final,
               "wall_clock": record.wall_clock, "artifacts": record.artifacts}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_run_record(path) -> RunRecord:
    payload = json.loads(Path(path).read_text())
    record = RunRecord(config=payload["config"], epochs=payload["epochs"],
                       final=payload["final"], wall_clock=payload["wall_clock"],
                       artifacts=payload["artifacts"])
    record.validate()
    return record
