"""The optimization loop: model fit/gating, acquisition, parallel jobs,
early termination, end conditions, and the desk-scale initial predictor.

One cycle runs p simulations; iterations count individual simulations,
so iteration = cycle * p when nothing fails. The model is (re)fit only
at cycle boundaries. Training data is picked through a fallback ladder:
the part's own rows once it has at least two, else rows from parts of
similar stored complexity, else the mixture of experts while the cycle
index is below i_moe, else uniform random sampling from the candidates.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import acquisition as acq
from . import candidates as cand
from . import experts as moe
from . import surrogate as sg
from .press import PressModel, ProgressSnapshot, ExternalAdapterConfig, external_run
from .records import DataFilter, JobMeta, ResultStore, SimulationRecord, TARGET_NAMES


@dataclass
class EndConditions:
    no_improvement_window: int = 5
    constant_minimum_window: int = 5
    energy_budget_j: Optional[float] = None

    def __post_init__(self):
        if self.no_improvement_window < 1 or self.constant_minimum_window < 1:
            raise ValueError("end-condition windows must be >= 1")


@dataclass
class EarlyTermination:
    threshold: float = 0.9
    limits: dict[str, float] = field(default_factory=dict)  # target -> max value

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


def check_early_termination(snapshot: ProgressSnapshot, config: EarlyTermination) -> bool:
    """Stop once progress passed the threshold and any limit is exceeded."""
    if snapshot.progress < config.threshold:
        return False
    return any(
        snapshot.targets.get(name, 0.0) > limit
        for name, limit in config.limits.items()
    )


@dataclass
class CandidateConfig:
    method: str = "linear"  # linear | combination
    n_star: int = 10000
    steps: dict[str, int] = field(default_factory=dict)  # combination only
    cap: Optional[int] = None
    expansion: float = 0.1
    shuffle: bool = True


@dataclass
class LoopConfig:
    part_id: str
    specs: list[cand.ParameterSpec]
    target: acq.TargetSpec = field(default_factory=acq.TargetSpec)
    surrogate: sg.SurrogateConfig = field(default_factory=sg.SurrogateConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    p: int = 1
    strategy: str = "highest_sum"
    i_moe: int = 0
    max_iterations: int = 25
    end: EndConditions = field(default_factory=EndConditions)
    early: EarlyTermination = field(default_factory=EarlyTermination)
    mode: str = "automated"  # automated | human_guided
    seed: int = 0
    acquisition_method: str = "marginal"  # marginal | monte_carlo
    n_mc: int = 10000
    complexity_band: float = 0.1  # half-width around the part's complexity
    batch_size: int = 512

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.mode not in ("automated", "human_guided"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.i_moe < 0:
            raise ValueError("i_moe must be >= 0")


@dataclass
class LoopState:
    iteration: int = 0
    cycle: int = 0
    ei_sum_history: list[float] = field(default_factory=list)
    best_inputs: Optional[dict] = None
    best_targets: Optional[dict] = None
    best_value: float = float("inf")
    cycles_since_improvement: int = 0
    consumed_energy_j: float = 0.0
    status: str = "running"  # running | awaiting_human | stopped
    stop_reason: Optional[str] = None

    def snapshot(self) -> dict:
        return {
            "iteration": self.iteration,
            "cycle": self.cycle,
            "ei_sum_history": list(self.ei_sum_history),
            "best_so_far": None
            if self.best_inputs is None
            else {
                "inputs": dict(self.best_inputs),
                "targets": dict(self.best_targets),
                "value": self.best_value,
            },
            "consumed_energy_j": self.consumed_energy_j,
            "status": self.status,
            "stop_reason": self.stop_reason,
        }


def evaluate_end_conditions(state: LoopState, config: LoopConfig) -> Optional[str]:
    """First matching stop reason, or None to continue."""
    w = config.end.no_improvement_window
    tail = state.ei_sum_history[-w:]
    if len(tail) == w and max(tail) - min(tail) <= 1e-9:
        return "no_improvement"
    if (
        state.best_inputs is not None
        and state.cycles_since_improvement >= config.end.constant_minimum_window
    ):
        return "constant_minimum"
    budget = config.end.energy_budget_j
    if budget is not None and state.consumed_energy_j >= budget:
        return "energy_budget"
    if state.iteration >= config.max_iterations:
        return "max_iterations"
    return None


class VirtualPressBackend:
    """Runs the synthetic press; variable inputs are merged over fixed ones."""

    capabilities = {"supports_progress": True, "reports_energy": True}

    def __init__(self, model: Optional[PressModel] = None, fixed: Optional[dict] = None):
        self.model = model or PressModel()
        self.fixed = dict(fixed or {})

    def run(self, x: dict, watcher=None):
        merged = dict(self.fixed)
        merged.update(x)
        return self.model.run(merged, watcher)


class ExternalBackend:
    capabilities = {"supports_progress": False, "reports_energy": True}

    def __init__(self, config: ExternalAdapterConfig, specs: Sequence[cand.ParameterSpec]):
        self.config = config
        self.specs = list(specs)

    def run(self, x: dict, watcher=None):
        return external_run(self.config, self.specs, x)


class OptimizationLoop:
    """Owns the loop state; one logical owner mutates it, readers get snapshots."""

    def __init__(
        self,
        config: LoopConfig,
        store: ResultStore,
        backend_factory: Callable[[], object],
        expert_models: Optional[dict] = None,
        expert_gating: Optional[moe.GatingDecision] = None,
    ):
        self.config = config
        self.store = store
        self.backend_factory = backend_factory
        self.expert_models = expert_models or {}
        self.expert_gating = expert_gating
        self.state = LoopState()
        self._lock = threading.Lock()
        self._human_queue: list[dict] = []
        self._interrupt = threading.Event()
        # introspection for the acquisition profile
        self.last_model = None
        self.last_candidates: Optional[cand.CandidateSet] = None
        self.last_scores: Optional[acq.AcquisitionScores] = None
        self.last_selected: list[dict] = []
        self._effective: Optional[dict] = None

    # -- data selection -------------------------------------------------

    def _training_records(self):
        part_rows = [
            r for r in self.store.query(DataFilter("part", part_id=self.config.part_id))
            if r.trainable
        ]
        if len(part_rows) >= 2:
            return part_rows, "part"
        registry = self.store.registry
        c = registry.complexity(self.config.part_id) if registry else None
        if c is not None:
            band = (c - self.config.complexity_band, c + self.config.complexity_band)
            rows = [
                r
                for r in self.store.query(DataFilter("complexity", complexity_band=band))
                if r.trainable
            ]
            if len(rows) >= 2:
                return rows, "complexity"
        if (
            self.expert_gating is not None
            and self.expert_models
            and self.state.cycle < self.config.i_moe
        ):
            return [], "moe"
        return [], "random"

    def _effective_ranges(self) -> dict:
        specs = self.config.specs
        try:
            observed = self.store.observed_ranges(DataFilter("all"), specs)
        except ValueError:
            observed = {}
        ranges = {}
        for spec in specs:
            obs = observed.get(spec.name)
            if spec.kind == "continuous":
                # a fully bounded schema defines the search window directly;
                # ranges extracted from stored results only stand in when a
                # bound is missing (narrowing to the visited hull would keep
                # the loop from ever reaching unexplored optima)
                if spec.lower is not None and spec.upper is not None:
                    ranges[spec.name] = (spec.lower, spec.upper)
                elif obs is not None:
                    ranges[spec.name] = obs
                else:
                    raise ValueError(
                        f"parameter {spec.name} has no observed range and no "
                        f"(lower, upper) constraint"
                    )
            else:
                if spec.add_values:
                    ranges[spec.name] = sorted(spec.add_values)
                elif obs is not None:
                    ranges[spec.name] = obs
                else:
                    raise ValueError(
                        f"discrete parameter {spec.name} has no observed values "
                        f"and no add_values"
                    )
        return cand.expand_ranges(ranges, specs, self.config.candidates.expansion)

    def _generate_candidates(self) -> cand.CandidateSet:
        cc = self.config.candidates
        effective = self._effective_ranges()
        self._effective = effective
        seed = self.config.seed + self.state.cycle
        if cc.method == "combination":
            steps = {
                s.name: cc.steps.get(s.name, 5)
                for s in self.config.specs
                if s.kind == "continuous"
            }
            return cand.generate_combination(
                effective, self.config.specs, steps, cap=cc.cap, seed=seed
            )
        return cand.generate_linear(
            effective, self.config.specs, n_star=cc.n_star, seed=seed, shuffle=cc.shuffle
        )

    # -- selection ------------------------------------------------------

    def _score_and_select(self, predictor, candidates) -> tuple[list[dict], float]:
        if self.config.acquisition_method == "monte_carlo":
            pred = predictor(candidates, True)
            scores = acq.ei_monte_carlo(
                pred,
                self.config.target,
                n_mc=self.config.n_mc,
                seed=self.config.seed + self.state.cycle,
            )
        else:
            pred = predictor(candidates, False)
            scores = acq.ei_marginal(pred, self.config.target)
        picks = acq.select_parallel(scores, candidates, self.config.p, self.config.strategy)
        self.last_candidates = candidates
        self.last_scores = scores
        return [x for _, x in picks], float(scores.sum.sum())

    def _random_select(self, candidates) -> list[dict]:
        rng = np.random.default_rng(self.config.seed + self.state.cycle)
        idx = rng.choice(len(candidates), size=self.config.p, replace=False)
        return [candidates.row(int(i)) for i in idx]

    # -- job execution --------------------------------------------------

    def _run_job(self, x: dict, source: str) -> SimulationRecord:
        backend = self.backend_factory()
        watcher = None
        if self.config.early.limits and backend.capabilities.get("supports_progress"):
            def watcher(snapshot, _cfg=self.config.early):
                if self._interrupt.is_set():
                    return True
                return check_early_termination(snapshot, _cfg)
        try:
            targets, meta = backend.run(x, watcher)
        except Exception:
            meta = JobMeta(progress=0.0, failed=True, source=source)
            targets = {t: 0.0 for t in TARGET_NAMES}
            return SimulationRecord(self.config.part_id, dict(x), targets, meta)
        meta.source = source
        return SimulationRecord(self.config.part_id, dict(x), targets, meta)

    def _dispatch(self, points: list[dict], source: str) -> list[SimulationRecord]:
        with ThreadPoolExecutor(max_workers=len(points)) as pool:
            records = list(pool.map(lambda x: self._run_job(x, source), points))
        return records

    # -- the cycle ------------------------------------------------------

    def run_cycle(self) -> list[SimulationRecord]:
        if self.state.status != "running":
            raise RuntimeError(f"loop is {self.state.status}")
        rows, policy = self._training_records()
        candidates = self._generate_candidates()
        input_names = [s.name for s in self.config.specs]
        torch.manual_seed(self.config.seed)

        ei_total = 0.0
        if policy in ("part", "complexity"):
            model = sg.fit_records(rows, input_names, self.config.surrogate)
            self.last_model = model
            predictor = lambda c, full: model.predict(
                c, full_covariance=full, batch_size=self.config.batch_size
            )
            points, ei_total = self._score_and_select(predictor, candidates)
            source = "automated"
        elif policy == "moe":
            predictor = lambda c, full: moe.mixture_predict(
                self.expert_gating, self.expert_models, c,
                batch_size=self.config.batch_size,
            )
            points, ei_total = self._score_and_select(predictor, candidates)
            source = "automated"
        else:
            points = self._random_select(candidates)
            source = "random"

        if self.config.mode == "human_guided":
            with self._lock:
                if not self._human_queue:
                    self.state.status = "awaiting_human"
                    return []
                points = [self._human_queue.pop(0)]
                source = "human"

        selected = points
        self.last_selected = [dict(x) for x in selected]
        records = self._dispatch(selected, source)

        # commit: all state mutations for the cycle happen atomically so
        # snapshot readers never see a half-applied cycle
        with self._lock:
            for i, rec in enumerate(records):
                rec.meta.cycle = self.state.cycle
                rec.meta.iteration = self.state.iteration + i
                self.store.append(rec)

            improved = False
            for rec in records:
                self.state.consumed_energy_j += rec.meta.energy_j
                if rec.trainable:
                    value = self.config.target.scalarize(rec.targets)
                    if value < self.state.best_value:
                        self.state.best_value = value
                        self.state.best_inputs = dict(rec.inputs)
                        self.state.best_targets = dict(rec.targets)
                        improved = True
            if self.state.best_inputs is not None:
                self.state.cycles_since_improvement = (
                    0 if improved else self.state.cycles_since_improvement + 1
                )

            self.state.iteration += len(records)
            self.state.cycle += 1
            self.state.ei_sum_history.append(ei_total)

            if all(r.meta.failed for r in records):
                self.state.status = "stopped"
                self.state.stop_reason = "backend_failure"
                return records

            reason = evaluate_end_conditions(self.state, self.config)
            if reason is not None:
                self.state.status = "stopped"
                self.state.stop_reason = reason
        return records

    def state_snapshot(self) -> dict:
        with self._lock:
            return self.state.snapshot()

    def run(self, on_cycle: Optional[Callable] = None):
        """Run cycles until an end condition (automated) or a human is needed."""
        while self.state.status == "running" and not self._interrupt.is_set():
            records = self.run_cycle()
            if on_cycle is not None and records:
                on_cycle(self.state, records)
        if self._interrupt.is_set() and self.state.status == "running":
            self.state.status = "stopped"
            self.state.stop_reason = "interrupted"
        return self.state

    def interrupt(self):
        self._interrupt.set()

    # -- human guidance -------------------------------------------------

    def validate_point(self, x: dict) -> dict[str, str]:
        """Field-level validation messages for a proposed design point.

        Points are checked against the parameter schema (a human may pick
        outside the current candidate window), falling back to the
        effective ranges only when the schema has no constraint.
        """
        problems = {}

        def effective(name):
            ranges = self._effective or self._effective_ranges()
            return ranges[name]

        for spec in self.config.specs:
            if spec.name not in x:
                problems[spec.name] = "missing"
                continue
            v = x[spec.name]
            if not isinstance(v, (int, float)) or not np.isfinite(v):
                problems[spec.name] = "not a finite number"
                continue
            if spec.kind == "continuous":
                lo = spec.lower if spec.lower is not None else effective(spec.name)[0]
                hi = spec.upper if spec.upper is not None else effective(spec.name)[1]
                if not lo <= v <= hi:
                    problems[spec.name] = f"{v} outside [{lo:g}, {hi:g}]"
            else:
                allowed = list(spec.add_values) or effective(spec.name)
                if v not in allowed:
                    problems[spec.name] = f"{v} not in {allowed}"
        for name in x:
            if name not in {s.name for s in self.config.specs}:
                problems[name] = "unknown parameter"
        return problems

    def submit_selection(self, x: dict):
        problems = self.validate_point(x)
        if problems:
            raise ValueError(f"invalid design point: {problems}")
        with self._lock:
            self._human_queue.append(dict(x))
            if self.state.status == "awaiting_human":
                self.state.status = "running"

    @property
    def awaiting_human(self) -> bool:
        return self.state.status == "awaiting_human"

    # -- acquisition profile --------------------------------------------

    def acquisition_profile(self, sweep_points: int = 51, top_k: int = 5) -> dict:
        """Per-dimension EI sweeps through the incumbent best, plus proposals."""
        if self.last_model is None and self.expert_gating is None:
            return {"available": False, "sweeps": [], "proposals": [],
                    "last_selected": self.last_selected}
        effective = self._effective or self._effective_ranges()
        base = self.state.best_inputs
        if base is None:
            base = {
                s.name: (
                    0.5 * (effective[s.name][0] + effective[s.name][1])
                    if s.kind == "continuous"
                    else effective[s.name][0]
                )
                for s in self.config.specs
            }

        def predict(points: np.ndarray):
            if self.last_model is not None:
                return self.last_model.predict(points, batch_size=self.config.batch_size)
            return moe.mixture_predict(self.expert_gating, self.expert_models, points)

        names = [s.name for s in self.config.specs]
        sweeps = []
        for spec in self.config.specs:
            if spec.kind == "continuous":
                values = np.linspace(*effective[spec.name], sweep_points)
            else:
                values = np.asarray(effective[spec.name], dtype=float)
            pts = np.tile([base[n] for n in names], (len(values), 1))
            col = names.index(spec.name)
            pts[:, col] = values
            pred = predict(pts)
            scores = acq.ei_marginal(pred, self.config.target)
            sweeps.append(
                {
                    "parameter": spec.name,
                    "values": values.tolist(),
                    "ei_sum": scores.sum.tolist(),
                }
            )
        proposals = []
        if self.last_scores is not None and self.last_candidates is not None:
            sums = self.last_scores.sum
            order = np.argsort(-sums)[:top_k]
            pred = predict(self.last_candidates.points[order])
            std = pred.stddev()
            for rank, i in enumerate(order):
                proposals.append(
                    {
                        "inputs": self.last_candidates.row(int(i)),
                        "ei_sum": float(sums[i]),
                        "predicted_mean": {
                            t: float(pred.mean[rank, j])
                            for j, t in enumerate(TARGET_NAMES)
                        },
                        "predicted_std": {
                            t: float(std[rank, j]) for j, t in enumerate(TARGET_NAMES)
                        },
                    }
                )
        return {
            "available": True,
            "sweeps": sweeps,
            "proposals": proposals,
            "last_selected": self.last_selected,
        }


# -- initial configuration predictor ------------------------------------


class _SkipNet(torch.nn.Module):
    """Linear skip plus a small tanh head; exact on linear relationships."""

    def __init__(self, n_in: int, hidden: int = 16):
        super().__init__()
        self.linear = torch.nn.Linear(n_in, 1)
        self.h = torch.nn.Linear(n_in, hidden)
        self.out = torch.nn.Linear(hidden, 1)

    def forward(self, x):
        return self.linear(x) + self.out(torch.tanh(self.h(x)))


@dataclass
class InitialPredictor:
    nets: dict[str, _SkipNet]
    specs: list[cand.ParameterSpec]
    fixed_names: list[str]
    feat_mean: np.ndarray
    feat_std: np.ndarray
    out_scale: dict[str, tuple[float, float]]
    ranges: dict  # clipping ranges / discrete value sets

    def predict(self, fixed: dict, target: acq.TargetSpec) -> dict[str, float]:
        feats = np.array(
            [fixed[n] for n in self.fixed_names]
            + [target.f_star[t] for t in TARGET_NAMES],
            dtype=float,
        )
        z = torch.as_tensor((feats - self.feat_mean) / self.feat_std).unsqueeze(0)
        out = {}
        for spec in self.specs:
            with torch.no_grad():
                raw = float(self.nets[spec.name](z))
            mean, std = self.out_scale[spec.name]
            v = raw * std + mean
            if spec.kind == "continuous":
                lo, hi = self.ranges[spec.name]
                v = min(max(v, lo), hi)
            else:
                allowed = np.asarray(self.ranges[spec.name], dtype=float)
                v = float(allowed[np.argmin(np.abs(allowed - v))])
            out[spec.name] = v
        return out


def train_initial_predictor(
    records: Sequence[SimulationRecord],
    specs: Sequence[cand.ParameterSpec],
    fixed: dict,
    max_steps: int = 2000,
    learning_rate: float = 0.02,
    seed: int = 0,
) -> InitialPredictor:
    """One small regressor per variable parameter.

    Features are the fixed design parameters plus the (desired) target
    vector; the label is the parameter value that produced those targets.
    """
    usable = [r for r in records if r.trainable]
    if len(usable) < 20:
        raise sg.InsufficientDataError(
            f"insufficient data: {len(usable)} records, need >= 20"
        )
    fixed_names = sorted(fixed)
    feats = np.array(
        [
            [fixed[n] for n in fixed_names] + [r.targets[t] for t in TARGET_NAMES]
            for r in usable
        ],
        dtype=float,
    )
    feat_mean = feats.mean(axis=0)
    feat_std = np.where(feats.std(axis=0) > 0, feats.std(axis=0), 1.0)
    z = torch.as_tensor((feats - feat_mean) / feat_std)
    torch.manual_seed(seed)
    nets, out_scale, ranges = {}, {}, {}
    for spec in specs:
        y = np.array([r.inputs[spec.name] for r in usable], dtype=float)
        mean, std = float(y.mean()), float(y.std() or 1.0)
        ty = torch.as_tensor((y - mean) / std).unsqueeze(1)
        net = _SkipNet(feats.shape[1])
        opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
        for _ in range(max_steps):
            opt.zero_grad()
            loss = torch.mean((net(z) - ty) ** 2)
            loss.backward()
            opt.step()
        nets[spec.name] = net
        out_scale[spec.name] = (mean, std)
        if spec.kind == "continuous":
            ranges[spec.name] = (
                spec.lower if spec.lower is not None else float(y.min()),
                spec.upper if spec.upper is not None else float(y.max()),
            )
        else:
            values = sorted(set(y.tolist()) | set(spec.add_values))
            ranges[spec.name] = values
    return InitialPredictor(
        nets=nets,
        specs=list(specs),
        fixed_names=fixed_names,
        feat_mean=feat_mean,
        feat_std=feat_std,
        out_scale=out_scale,
        ranges=ranges,
    )
