"""Simulation backends: the synthetic "virtual press" and an external adapter.

The virtual press is a deterministic stand-in for a deep-drawing solver.
Its inputs follow the forming-parameter schema (blankholder pressure p,
draw-bead force db, draw-bead count dbn, friction Fr, blank thickness D,
discrete yield strength Rp); its outputs are the seven feasibility
classes L1..L7 in percent, which sum to 100 by softmax construction.
The response coefficients below are invented fixtures of this repo, not
measured values.

The external adapter runs an arbitrary command against a parameter
template file, with per-value config files for discrete parameters, and
parses the targets from the command's JSON output.
"""

from __future__ import annotations

import json
import shutil
import string
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .candidates import ParameterSpec
from .records import JobMeta, TARGET_NAMES

# Default variable-parameter schema: ranges for the continuous inputs and
# the allowed discrete yield strengths.
DEFAULT_RANGES = {
    "p": (50.0, 400.0),
    "db": (0.0, 60.0),
    "dbn": (0.0, 100.0),
    "Fr": (0.05, 0.20),
    "D": (0.5, 2.5),
}
RP_VALUES = (160.0, 220.0, 280.0, 340.0)

# Restraint weights over (z_p, z_db, z_Fr) and capacity weights over
# (z_D, 1 - z_Rp).
RESTRAINT_WEIGHTS = (0.5, 0.3, 0.2)
CAPACITY_WEIGHTS = (0.6, 0.4)

# Per-class piecewise-linear score coefficients. The wrinkle family
# (L1 stretch, L2 wrinkling, L3 tendency) grows as restraint falls below
# theta; the crack family (L5 risk, L6 thinning, L7 cracks) grows as
# restraint exceeds capacity by delta; L4 (safe) peaks where restraint
# matches 0.35 + 0.3 * capacity.
THETA = {"L1": 0.30, "L2": 0.25, "L3": 0.35}
DELTA = {"L5": 0.00, "L6": 0.10, "L7": 0.25}
GAINS = {"L1": 4.0, "L2": 4.0, "L3": 4.0, "L4": 6.0, "L5": 4.0, "L6": 5.0, "L7": 6.0}
SAFE_PEAK_WIDTH = 0.8


class SchemaError(ValueError):
    pass


class BackendError(RuntimeError):
    pass


@dataclass
class ProgressSnapshot:
    progress: float
    targets: dict[str, float]
    walltime_s: float
    energy_j: float


@dataclass
class PressModel:
    """Deterministic synthetic deep-drawing response."""

    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    rp_values: tuple = RP_VALUES
    steps: int = 100
    step_walltime_s: float = 0.05
    step_power_w: float = 200.0

    def parameter_specs(self) -> list[ParameterSpec]:
        specs = [
            ParameterSpec(name, "continuous", lower=lo, upper=hi)
            for name, (lo, hi) in self.ranges.items()
        ]
        specs.append(ParameterSpec("Rp", "discrete", add_values=self.rp_values))
        return specs

    def _validate(self, x: dict):
        for name, (lo, hi) in self.ranges.items():
            if name not in x:
                raise SchemaError(f"missing parameter {name}")
            if not lo <= x[name] <= hi:
                raise SchemaError(f"parameter {name}={x[name]} outside [{lo}, {hi}]")
        if "Rp" not in x:
            raise SchemaError("missing parameter Rp")
        if x["Rp"] not in self.rp_values:
            raise SchemaError(f"parameter Rp={x['Rp']} not in {self.rp_values}")

    def _z(self, x: dict, name: str) -> float:
        lo, hi = self.ranges[name]
        return (x[name] - lo) / (hi - lo)

    def evaluate_final(self, x: dict) -> dict[str, float]:
        """Feasibility classes L1..L7 in percent for a full design point."""
        self._validate(x)
        r = (
            RESTRAINT_WEIGHTS[0] * self._z(x, "p")
            + RESTRAINT_WEIGHTS[1] * self._z(x, "db")
            + RESTRAINT_WEIGHTS[2] * self._z(x, "Fr")
        )
        z_rp = (x["Rp"] - self.rp_values[0]) / (self.rp_values[-1] - self.rp_values[0])
        c = CAPACITY_WEIGHTS[0] * self._z(x, "D") + CAPACITY_WEIGHTS[1] * (1.0 - z_rp)
        scores = np.empty(7)
        for j, name in enumerate(TARGET_NAMES):
            if name in THETA:
                s = GAINS[name] * max(0.0, THETA[name] - r)
            elif name == "L4":
                s = GAINS[name] * max(
                    0.0, 1.0 - abs(r - (0.35 + 0.3 * c)) / SAFE_PEAK_WIDTH
                )
            else:
                s = GAINS[name] * max(0.0, r - c - DELTA[name])
            scores[j] = s
        e = np.exp(scores - scores.max())
        frac = e / e.sum()
        return {name: 100.0 * frac[j] for j, name in enumerate(TARGET_NAMES)}

    def run(
        self,
        x: dict,
        watcher: Optional[Callable[[ProgressSnapshot], bool]] = None,
    ) -> tuple[dict[str, float], JobMeta]:
        """Iterate the press through its progress steps.

        At fraction q the reported targets interpolate linearly between
        the initial state (L4 = 100, others 0) and the final response.
        After every step the watcher (if any) sees a ProgressSnapshot and
        may return True to stop the run early.
        """
        final = self.evaluate_final(x)
        initial = {name: (100.0 if name == "L4" else 0.0) for name in TARGET_NAMES}

        def at(q: float) -> dict[str, float]:
            return {
                name: (1.0 - q) * initial[name] + q * final[name]
                for name in TARGET_NAMES
            }

        if watcher is not None:
            watcher(ProgressSnapshot(0.0, at(0.0), 0.0, 0.0))
        completed = 0
        stopped = False
        for t in range(1, self.steps + 1):
            completed = t
            q = t / self.steps
            walltime = completed * self.step_walltime_s
            energy = walltime * self.step_power_w
            if watcher is not None and t < self.steps:
                if watcher(ProgressSnapshot(q, at(q), walltime, energy)):
                    stopped = True
                    break
        q = completed / self.steps
        meta = JobMeta(
            walltime_s=completed * self.step_walltime_s,
            energy_j=completed * self.step_walltime_s * self.step_power_w,
            progress=q,
            terminated_early=stopped,
        )
        return at(q), meta


def three_input_model() -> tuple[PressModel, dict]:
    """Virtual press restricted to three variable inputs (p, Fr, D).

    Returns the model and the fixed values for the remaining parameters.
    Used by the desk-scale optimization experiments and their oracle.
    """
    model = PressModel()
    fixed = {"db": 30.0, "dbn": 50.0, "Rp": 340.0}
    return model, fixed


def scalarize(targets: dict[str, float], f_star: dict, attention: dict) -> float:
    """Attention-weighted distance to the desired targets (minimized)."""
    return sum(attention[k] * (targets[k] - f_star[k]) for k in f_star)


def brute_force_optimum(
    model: PressModel,
    fixed: dict,
    variable: Sequence[str],
    f_star: dict,
    attention: dict,
    steps: int = 20,
) -> tuple[dict, float]:
    """Grid search over the variable inputs; the oracle optimum fixture."""
    grids = [np.linspace(*model.ranges[name], steps) for name in variable]
    best_x, best_v = None, np.inf
    mesh = np.meshgrid(*grids, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    for row in flat:
        x = dict(fixed)
        x.update({name: float(v) for name, v in zip(variable, row)})
        v = scalarize(model.evaluate_final(x), f_star, attention)
        if v < best_v:
            best_v, best_x = v, x
    return best_x, best_v


@dataclass
class ExternalAdapterConfig:
    template_path: Path
    command: list[str]  # ${file} expands to the patched template's path
    config_dir: Optional[Path] = None
    workdir: Optional[Path] = None


def _format_value(v: float) -> str:
    if float(v) == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def external_run(
    config: ExternalAdapterConfig,
    specs: Sequence[ParameterSpec],
    x: dict,
) -> tuple[dict[str, float], JobMeta]:
    """Patch the template, run the command, parse targets from its output.

    Placeholder syntax is ``${name}``; a literal ``${`` is written as
    ``$${``. Each discrete parameter value must have a matching
    ``<name>_<value>.cfg`` file in config_dir.
    """
    template_path = Path(config.template_path)
    if not template_path.exists():
        raise BackendError(f"template file {template_path} does not exist")
    mapping = {spec.name: _format_value(x[spec.name]) for spec in specs}
    text = template_path.read_text(encoding="utf-8")
    try:
        patched = string.Template(text).substitute(mapping)
    except KeyError as exc:
        raise BackendError(f"unresolved placeholder ${{{exc.args[0]}}} in template") from exc
    for spec in specs:
        if spec.kind != "discrete":
            continue
        if config.config_dir is None:
            raise BackendError(f"missing discrete config dir for {spec.name}")
        cfg = Path(config.config_dir) / f"{spec.name}_{_format_value(x[spec.name])}.cfg"
        if not cfg.exists():
            raise BackendError(
                f"missing discrete config {cfg.name} for {spec.name}={x[spec.name]}"
            )
    workdir = Path(config.workdir) if config.workdir else Path(tempfile.mkdtemp(prefix="formopt_job_"))
    workdir.mkdir(parents=True, exist_ok=True)
    patched_path = workdir / template_path.name
    patched_path.write_text(patched, encoding="utf-8")
    cmd = [
        string.Template(arg).safe_substitute({"file": str(patched_path), **mapping})
        for arg in config.command
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=workdir)
    if proc.returncode != 0:
        raise BackendError(
            f"command {cmd} exited with {proc.returncode}\n"
            f"stdout: {proc.stdout}\nstderr: {proc.stderr}"
        )
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if not lines:
        raise BackendError(f"command produced no output\nstderr: {proc.stderr}")
    try:
        payload = json.loads(lines[-1])
        targets = {name: float(payload[name]) for name in TARGET_NAMES}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise BackendError(
            f"could not parse targets from command output: {exc}\n"
            f"last line: {lines[-1]}"
        ) from exc
    meta = JobMeta(
        walltime_s=float(payload.get("walltime_s", 0.0)),
        energy_j=float(payload.get("energy_j", 0.0)),
        progress=1.0,
        terminated_early=False,
    )
    return targets, meta
