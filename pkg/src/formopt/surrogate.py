"""Multi-output latent-variable GP surrogate.

Three flavors are supported:

* ``independent`` -- zero mean, one shared Matern kernel, no cross-output
  covariance.
* ``coupled_mean`` -- like independent, but all output means are produced
  from a shared latent projection of the (encoded) inputs.
* ``lcm`` -- linear model of coregionalization: several latent GPs, each
  with its own Matern kernel, mixed linearly into the outputs; the
  coupled latent mean is kept.

An optional neural input encoder transforms inputs into a latent space
before they reach the kernels. Inputs and targets are standardized
internally; predictions are returned in original units. Everything runs
in float64 so the posterior can be checked against dense linear algebra
at tight tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .candidates import CandidateSet
from .records import SimulationRecord, TARGET_NAMES

torch.set_default_dtype(torch.float64)

FLAVORS = ("independent", "coupled_mean", "lcm")
JITTER_ESCALATIONS = 6


class InsufficientDataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainingSettings:
    max_steps: int = 500
    learning_rate: float = 0.05
    convergence_tol: float = 1e-6
    seed: int = 0


@dataclass
class SurrogateConfig:
    flavor: str = "lcm"
    matern_nu: float = 2.5
    latent_input_dim: Optional[int] = None  # default 2d
    latent_output_dim: Optional[int] = None  # default m
    num_latent_gps: Optional[int] = None  # lcm only, default m
    use_input_encoder: bool = True
    noise_floor: float = 1e-8
    training: TrainingSettings = field(default_factory=TrainingSettings)

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.matern_nu not in (0.5, 1.5, 2.5):
            raise ValueError("matern_nu must be one of 0.5, 1.5, 2.5")
        if self.noise_floor <= 0:
            raise ValueError("noise_floor must be > 0")


@dataclass
class PosteriorPrediction:
    mean: np.ndarray  # (n_star, m)
    variance: Optional[np.ndarray] = None  # (n_star, m) marginal mode
    covariance: Optional[np.ndarray] = None  # (n_star, m, m) full mode

    @property
    def full(self) -> bool:
        return self.covariance is not None

    def stddev(self) -> np.ndarray:
        if self.full:
            diag = np.einsum("ijj->ij", self.covariance)
        else:
            diag = self.variance
        return np.sqrt(np.clip(diag, 0.0, None))


def _matern(r: torch.Tensor, nu: float) -> torch.Tensor:
    if nu == 0.5:
        return torch.exp(-r)
    if nu == 1.5:
        s = math.sqrt(3.0) * r
        return (1.0 + s) * torch.exp(-s)
    s = math.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * torch.exp(-s)


class _Encoder(torch.nn.Module):
    """One hidden tanh layer of width 2d, linear output to the latent dim."""

    def __init__(self, d: int, latent_dim: int):
        super().__init__()
        self.hidden = torch.nn.Linear(d, 2 * d)
        self.out = torch.nn.Linear(2 * d, latent_dim)

    def forward(self, x):
        return self.out(torch.tanh(self.hidden(x)))


class _GPCore(torch.nn.Module):
    def __init__(self, d: int, m: int, config: SurrogateConfig):
        super().__init__()
        self.config = config
        self.m = m
        self.flavor = config.flavor
        if config.use_input_encoder:
            latent_dim = config.latent_input_dim or 2 * d
            self.encoder = _Encoder(d, latent_dim)
        else:
            latent_dim = d
            self.encoder = None
        self.latent_dim = latent_dim
        self.num_q = (config.num_latent_gps or m) if self.flavor == "lcm" else 1
        # log lengthscales (ARD) and log outputscales per latent GP
        self.log_lengthscale = torch.nn.Parameter(torch.zeros(self.num_q, latent_dim))
        self.log_outputscale = torch.nn.Parameter(torch.zeros(self.num_q))
        self.log_noise_var = torch.nn.Parameter(torch.log(torch.tensor(0.1)))
        if self.flavor == "lcm":
            mixing = torch.eye(m, self.num_q) + 0.01 * torch.randn(m, self.num_q)
            self.mixing = torch.nn.Parameter(mixing)
        else:
            self.mixing = None
        if self.flavor in ("coupled_mean", "lcm"):
            latent_out = config.latent_output_dim or m
            self.mean_proj = torch.nn.Linear(latent_dim, latent_out)
            self.mean_out = torch.nn.Linear(latent_out, m)
        else:
            self.mean_proj = None
            self.mean_out = None

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return x if self.encoder is None else self.encoder(x)

    def mean(self, z: torch.Tensor) -> torch.Tensor:
        if self.mean_proj is None:
            return torch.zeros(z.shape[0], self.m, dtype=z.dtype)
        return self.mean_out(self.mean_proj(z))

    def task_covariances(self) -> torch.Tensor:
        """(num_q, m, m) coregionalization matrix per latent GP."""
        if self.mixing is None:
            return torch.eye(self.m).unsqueeze(0)
        return torch.einsum("iq,jq->qij", self.mixing, self.mixing)

    def kernel(self, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
        """(num_q, n1, n2) input-space kernel per latent GP."""
        ell = torch.exp(self.log_lengthscale)  # (q, L)
        out = []
        for q in range(self.num_q):
            a = z1 / ell[q]
            b = z2 / ell[q]
            d2 = (
                (a * a).sum(-1, keepdim=True)
                - 2.0 * a @ b.T
                + (b * b).sum(-1)
            )
            r = torch.sqrt(torch.clamp(d2, min=1e-30))
            out.append(torch.exp(self.log_outputscale[q]) * _matern(r, self.config.matern_nu))
        return torch.stack(out)

    def full_covariance(self, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
        """Dense (n1*m, n2*m) covariance, candidate-major layout."""
        kq = self.kernel(z1, z2)
        cq = self.task_covariances()
        blocks = torch.einsum("qab,qij->aibj", kq, cq)
        n1, n2 = z1.shape[0], z2.shape[0]
        return blocks.reshape(n1 * self.m, n2 * self.m)

    def prior_block(self, z: torch.Tensor) -> torch.Tensor:
        """(n, m, m) prior covariance block at each input."""
        kq = self.kernel(z, z)
        diag = torch.stack([torch.diagonal(kq[q]) for q in range(self.num_q)])
        cq = self.task_covariances()
        return torch.einsum("qa,qij->aij", diag, cq)


def _cholesky_with_jitter(mat: torch.Tensor, floor: float) -> torch.Tensor:
    jitter = 0.0
    for k in range(JITTER_ESCALATIONS + 1):
        try:
            eye = torch.eye(mat.shape[0], dtype=mat.dtype)
            return torch.linalg.cholesky(mat + jitter * eye)
        except torch.linalg.LinAlgError:
            jitter = floor * (10.0**k)
    raise NumericalError(
        f"training covariance not positive definite after jitter up to {jitter:g}"
    )


class FittedSurrogate:
    """Immutable fitted model; safe for concurrent predict calls."""

    def __init__(self, core, config, x_mean, x_std, y_mean, y_std, X, Y, loss_trace):
        self.core = core
        self.config = config
        self.x_mean, self.x_std = x_mean, x_std
        self.y_mean, self.y_std = y_mean, y_std
        self.training_inputs = X  # original units, (n, d) ndarray
        self.training_targets = Y
        self.loss_trace = loss_trace
        self._finalize()

    def _finalize(self):
        with torch.no_grad():
            xs = torch.as_tensor((self.training_inputs - self.x_mean) / self.x_std)
            ys = torch.as_tensor((self.training_targets - self.y_mean) / self.y_std)
            z = self.core.encode(xs)
            k = self.core.full_covariance(z, z)
            noise = torch.exp(self.core.log_noise_var)
            n = xs.shape[0]
            eye = torch.eye(n * self.core.m)
            self._z_train = z
            self._chol = _cholesky_with_jitter(k + noise * eye, self.config.noise_floor)
            resid = (ys - self.core.mean(z)).reshape(-1, 1)
            self._alpha = torch.cholesky_solve(resid, self._chol)

    @property
    def noise_variance(self) -> float:
        """Observation-noise variance in standardized target units."""
        return float(torch.exp(self.core.log_noise_var.detach()))

    def log_marginal_likelihood(self) -> float:
        with torch.no_grad():
            xs = torch.as_tensor((self.training_inputs - self.x_mean) / self.x_std)
            ys = torch.as_tensor((self.training_targets - self.y_mean) / self.y_std)
            return float(_mll(self.core, xs, ys, self.config.noise_floor))

    def predict(
        self,
        candidates,
        full_covariance: bool = False,
        batch_size: int = 512,
    ) -> PosteriorPrediction:
        """Posterior mean and (marginal or full) covariance at candidates."""
        if isinstance(candidates, CandidateSet):
            pts = candidates.points
        else:
            pts = np.asarray(candidates, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.training_inputs.shape[1]:
            raise ValueError(
                f"candidate dimension {pts.shape} does not match training "
                f"dimension {self.training_inputs.shape[1]}"
            )
        m = self.core.m
        means, variances, covs = [], [], []
        with torch.no_grad():
            for start in range(0, pts.shape[0], batch_size):
                chunk = pts[start : start + batch_size]
                xs = torch.as_tensor((chunk - self.x_mean) / self.x_std)
                z = self.core.encode(xs)
                b = z.shape[0]
                k_star = self.core.full_covariance(self._z_train, z)  # (nm, bm)
                mu = self.core.mean(z) + (k_star.T @ self._alpha).reshape(b, m)
                v = torch.linalg.solve_triangular(self._chol, k_star, upper=False)
                prior = self.core.prior_block(z)  # (b, m, m)
                vt = v.T.reshape(b, m, -1)
                correction = torch.einsum("bik,bjk->bij", vt, vt)
                block = prior - correction
                means.append(mu.numpy())
                if full_covariance:
                    covs.append(block.numpy())
                else:
                    variances.append(
                        torch.diagonal(block, dim1=1, dim2=2).numpy()
                    )
        mean = np.concatenate(means) * self.y_std + self.y_mean
        scale = np.outer(self.y_std, self.y_std)
        if full_covariance:
            cov = np.concatenate(covs) * scale
            return PosteriorPrediction(mean=mean, covariance=cov)
        var = np.concatenate(variances) * (self.y_std**2)
        bad = var < -1e-9 * np.maximum(self.y_std**2, 1.0)
        if bad.any():
            raise NumericalError(f"negative posterior variance: {var[bad].min()}")
        return PosteriorPrediction(mean=mean, variance=np.clip(var, 0.0, None))


def _mll(core: _GPCore, xs: torch.Tensor, ys: torch.Tensor, floor: float) -> torch.Tensor:
    z = core.encode(xs)
    k = core.full_covariance(z, z)
    noise = torch.exp(core.log_noise_var)
    nm = k.shape[0]
    chol = _cholesky_with_jitter(k + noise * torch.eye(nm), floor)
    resid = (ys - core.mean(z)).reshape(-1, 1)
    alpha = torch.cholesky_solve(resid, chol)
    return (
        -0.5 * (resid * alpha).sum()
        - torch.log(torch.diagonal(chol)).sum()
        - 0.5 * nm * math.log(2.0 * math.pi)
    )


def _standardizers(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def records_to_arrays(
    records: Sequence[SimulationRecord], input_names: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[r.inputs[k] for k in input_names] for r in records], dtype=float)
    Y = np.array([[r.targets[t] for t in TARGET_NAMES] for r in records], dtype=float)
    return X, Y


def fit(
    X: np.ndarray,
    Y: np.ndarray,
    config: Optional[SurrogateConfig] = None,
) -> FittedSurrogate:
    """Maximize the marginal likelihood of the standardized data.

    X is (n, d) inputs, Y is (n, m) targets, both in original units.
    """
    config = config or SurrogateConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X must be (n, d) and Y (n, m) with matching n")
    n, d = X.shape
    m = Y.shape[1]
    if n < 2:
        raise InsufficientDataError(f"insufficient data: {n} records, need >= 2")
    x_mean, x_std = _standardizers(X)
    y_mean, y_std = _standardizers(Y)
    xs = torch.as_tensor((X - x_mean) / x_std)
    ys = torch.as_tensor((Y - y_mean) / y_std)

    torch.manual_seed(config.training.seed)
    core = _GPCore(d, m, config)
    opt = torch.optim.Adam(core.parameters(), lr=config.training.learning_rate)
    trace = []
    prev = None
    for _ in range(config.training.max_steps):
        opt.zero_grad()
        loss = -_mll(core, xs, ys, config.noise_floor)
        loss.backward()
        opt.step()
        value = float(loss.detach())
        trace.append(value)
        if prev is not None and abs(prev - value) < config.training.convergence_tol:
            break
        prev = value
    return FittedSurrogate(core, config, x_mean, x_std, y_mean, y_std, X, Y, trace)


def fit_records(
    records: Sequence[SimulationRecord],
    input_names: Sequence[str],
    config: Optional[SurrogateConfig] = None,
) -> FittedSurrogate:
    usable = [r for r in records if r.trainable]
    if len(usable) < 2:
        raise InsufficientDataError(
            f"insufficient data: {len(usable)} trainable records, need >= 2"
        )
    X, Y = records_to_arrays(usable, input_names)
    return fit(X, Y, config)
