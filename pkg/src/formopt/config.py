"""Run-configuration file parsing.

The run config is one JSON object:

{
  "part_id": "...",
  "workdir": ".",                       # results.jsonl / parts.json live here
  "parameters": [{"name", "kind", "lower", "upper", "add_values",
                  "discard_values", "precision"}, ...],
  "targets": {"f_star": {...}, "attention": {...}},
  "surrogate": {"flavor", "matern_nu", "use_input_encoder", "noise_floor",
                "num_latent_gps", "training": {...}},
  "candidates": {"method", "n_star", "steps", "cap", "expansion", "shuffle"},
  "loop": {"p", "strategy", "i_moe", "max_iterations",
           "end_conditions": {...}, "early_termination": {...},
           "mode", "seed", "acquisition_method", "n_mc"},
  "backend": {"type": "virtual_press" | "external", ...}
}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import acquisition as acq
from . import candidates as cand
from . import loop as lp
from . import surrogate as sg
from .press import ExternalAdapterConfig, PressModel
from .records import PartRegistry, ResultStore


class ConfigError(ValueError):
    pass


@dataclass
class RunSetup:
    config: lp.LoopConfig
    backend_factory: Callable[[], object]
    workdir: Path
    results_path: Path
    parts_path: Path

    def open_store(self) -> ResultStore:
        registry = PartRegistry(self.parts_path)
        return ResultStore(self.results_path, registry=registry)

    def build_loop(self, store: Optional[ResultStore] = None) -> lp.OptimizationLoop:
        return lp.OptimizationLoop(
            self.config, store or self.open_store(), self.backend_factory
        )


def _parameter_specs(raw: list) -> list[cand.ParameterSpec]:
    if not raw:
        raise ConfigError("config needs a non-empty 'parameters' list")
    specs = []
    for entry in raw:
        if "name" not in entry:
            raise ConfigError(f"parameter entry without a name: {entry}")
        try:
            specs.append(
                cand.ParameterSpec(
                    name=entry["name"],
                    kind=entry.get("kind", "continuous"),
                    lower=entry.get("lower"),
                    upper=entry.get("upper"),
                    add_values=tuple(entry.get("add_values", ())),
                    discard_values=tuple(entry.get("discard_values", ())),
                    precision=entry.get("precision"),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"parameter {entry['name']}: {exc}") from exc
    return specs


def _target_spec(raw: Optional[dict]) -> acq.TargetSpec:
    if not raw:
        return acq.TargetSpec()
    f_star = acq.default_f_star()
    f_star.update(raw.get("f_star", {}))
    attention = acq.default_attention()
    attention.update(raw.get("attention", {}))
    return acq.TargetSpec(f_star=f_star, attention=attention)


def _surrogate_config(raw: Optional[dict]) -> sg.SurrogateConfig:
    raw = dict(raw or {})
    training = sg.TrainingSettings(**raw.pop("training", {}))
    try:
        return sg.SurrogateConfig(training=training, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"surrogate config: {exc}") from exc


def _candidate_config(raw: Optional[dict]) -> lp.CandidateConfig:
    try:
        return lp.CandidateConfig(**(raw or {}))
    except TypeError as exc:
        raise ConfigError(f"candidates config: {exc}") from exc


def parse_run_config(source, base_dir: Optional[Path] = None) -> RunSetup:
    """Build a RunSetup from a config dict, JSON string, or file path."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        base_dir = base_dir or Path(source).parent
        raw = json.loads(Path(source).read_text(encoding="utf-8"))
    elif isinstance(source, str):
        raw = json.loads(source)
    else:
        raw = dict(source)
    base_dir = Path(base_dir or ".")

    if "part_id" not in raw:
        raise ConfigError("config needs 'part_id'")
    specs = _parameter_specs(raw.get("parameters", []))
    loop_raw = dict(raw.get("loop", {}))
    end = lp.EndConditions(**loop_raw.pop("end_conditions", {}))
    early_raw = loop_raw.pop("early_termination", {})
    early = lp.EarlyTermination(
        threshold=early_raw.get("threshold", 0.9),
        limits=dict(early_raw.get("limits", {})),
    )
    try:
        config = lp.LoopConfig(
            part_id=raw["part_id"],
            specs=specs,
            target=_target_spec(raw.get("targets")),
            surrogate=_surrogate_config(raw.get("surrogate")),
            candidates=_candidate_config(raw.get("candidates")),
            end=end,
            early=early,
            **loop_raw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"loop config: {exc}") from exc

    backend_raw = dict(raw.get("backend", {"type": "virtual_press"}))
    btype = backend_raw.pop("type", "virtual_press")
    if btype == "virtual_press":
        model_kwargs = {
            k: backend_raw[k]
            for k in ("steps", "step_walltime_s", "step_power_w")
            if k in backend_raw
        }
        fixed = backend_raw.get("fixed", {})
        factory = lambda: lp.VirtualPressBackend(PressModel(**model_kwargs), fixed)
    elif btype == "external":
        for key in ("template", "command"):
            if key not in backend_raw:
                raise ConfigError(f"external backend needs '{key}'")
        adapter = ExternalAdapterConfig(
            template_path=base_dir / backend_raw["template"],
            command=list(backend_raw["command"]),
            config_dir=(
                base_dir / backend_raw["config_dir"]
                if backend_raw.get("config_dir")
                else None
            ),
            workdir=(
                base_dir / backend_raw["workdir"]
                if backend_raw.get("workdir")
                else None
            ),
        )
        factory = lambda: lp.ExternalBackend(adapter, specs)
    else:
        raise ConfigError(f"unknown backend type {btype!r}")

    workdir = base_dir / raw.get("workdir", ".")
    workdir.mkdir(parents=True, exist_ok=True)
    return RunSetup(
        config=config,
        backend_factory=factory,
        workdir=workdir,
        results_path=workdir / raw.get("results", "results.jsonl"),
        parts_path=workdir / raw.get("parts", "parts.json"),
    )
