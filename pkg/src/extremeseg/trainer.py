"""Weakly supervised training from extreme points.

The segmentation network is a per-voxel logistic model over a handful of
image features.  Each step runs a forward pass, recomputes the deep
geodesics from the current probabilities, builds the label field and takes
a Nesterov SGD step on ``loss + lam * R``.
"""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .annotations import (FG, ExtremePointSet, SupervisionMask, initial_supervision,
                          relax_bbox, tight_bbox)
from .crf import PairwiseKernel, RegConfig
from .geodesics import GeodesicConfig, GeodesicSet, Metric, inter_extreme_geodesics
from .losses import combined_loss
from .phantoms import box_smooth
from .volume import Volume, gradient_magnitude, normalize_intensity

log = logging.getLogger(__name__)

FEATURE_NAMES = ("intensity", "smooth_r1", "smooth_r2", "gradient", "x", "y", "z")


class Supervision(str, enum.Enum):
    NAIVE = "naive"
    GEODESIC = "geodesic"
    GEODESIC_REG = "geodesic-reg"


def features(X: Volume) -> np.ndarray:
    """(n_voxels, 7) feature matrix in C order; X is expected in [0, 1]."""
    x = X.data.astype(np.float64)
    cols = [x, box_smooth(x, 1), box_smooth(x, 2), gradient_magnitude(X).data.astype(np.float64)]
    for axis, n in enumerate(X.shape):
        c = np.arange(n, dtype=np.float64) / max(n - 1, 1)
        shape = [1, 1, 1]
        shape[axis] = n
        cols.append(np.broadcast_to(c.reshape(shape), X.shape))
    return np.stack([c.ravel() for c in cols], axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ToyModel:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURE_NAMES)))
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).copy()
        if self.weights.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} weights, got shape {self.weights.shape}")
        self.bias = float(self.bias)

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_theta(cls, theta) -> "ToyModel":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], theta[-1])

    def predict_features(self, phi: np.ndarray) -> np.ndarray:
        return _sigmoid(phi @ self.weights + self.bias)

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": self.bias,
                "features": list(FEATURE_NAMES)}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModel":
        if list(d.get("features", FEATURE_NAMES)) != list(FEATURE_NAMES):
            raise ValueError(f"checkpoint features {d.get('features')} do not match {FEATURE_NAMES}")
        return cls(d["weights"], d["bias"])


def forward(model: ToyModel, X: Volume) -> Volume:
    return X.like(forward_array(model, X))


def forward_array(model: ToyModel, X: Volume) -> np.ndarray:
    """Float64 probabilities shaped like ``X``."""
    return model.predict_features(features(X)).reshape(X.shape)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.99
    iterations: int = 9000
    lr_step: int = 30
    lr_total: int = 300
    lam: float = 1e-4
    margin: int = 4
    geodesic_mode: Metric = Metric.DEEP
    connectivity: int = 26
    reg: RegConfig = RegConfig()
    gamma_focal: float = 2.0
    seed: int = 0
    supervision: Supervision = Supervision.GEODESIC_REG

    def __post_init__(self):
        object.__setattr__(self, "geodesic_mode", Metric(self.geodesic_mode))
        object.__setattr__(self, "supervision", Supervision(self.supervision))
        if isinstance(self.reg, dict):
            object.__setattr__(self, "reg", RegConfig(**self.reg))
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.iterations < 0 or self.lr_step < 1 or self.lr_total < 1:
            raise ValueError("iterations must be >= 0 and lr_step, lr_total >= 1")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")

    @property
    def geodesic(self) -> GeodesicConfig:
        return GeodesicConfig(self.geodesic_mode, connectivity=self.connectivity)

    @property
    def uses_reg(self) -> bool:
        return self.supervision is Supervision.GEODESIC_REG and self.lam > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geodesic_mode"] = self.geodesic_mode.value
        d["supervision"] = self.supervision.value
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build from a flat or nested mapping.

        Regulariser fields may sit at the top level or under ``reg``;
        ``lambda``, ``r``, ``mu`` and ``supervision_mode`` are accepted as
        aliases of ``lam``, ``margin``, ``momentum`` and ``supervision``.
        """
        base = base or cls()
        top, reg = {}, {}
        reg_fields = set(RegConfig.__dataclass_fields__)
        for key, value in d.items():
            if key == "reg":
                reg.update(value)
                continue
            key = _ALIASES.get(key, key)
            if key in reg_fields:
                reg[key] = value
            elif key in cls.__dataclass_fields__:
                top[key] = value
            else:
                raise ValueError(f"unknown config field {key!r}")
        if "lam" in reg:
            top["lam"] = reg.pop("lam")
        unknown = set(reg) - reg_fields
        if unknown:
            raise ValueError(f"unknown regulariser fields: {', '.join(sorted(unknown))}")
        top["reg"] = replace(base.reg, **reg)
        return replace(base, **top)


_ALIASES = {"lambda": "lam", "r": "margin", "mu": "momentum", "supervision_mode": "supervision",
            "sigma_a": "sigma_alpha", "sigma_b": "sigma_beta"}


def poly_lr(it: int, cfg: TrainConfig) -> float:
    """lr0 * (1 - floor(it / lr_step) / lr_total) ** 0.9, zero once exhausted."""
    progress = (it // cfg.lr_step) / cfg.lr_total
    if progress >= 1:
        return 0.0
    return cfg.lr0 * (1.0 - progress) ** 0.9


class Case:
    """A training image with everything that stays fixed across steps."""

    def __init__(self, X: Volume, pts: ExtremePointSet, cfg: TrainConfig):
        pts.check_inside(X.shape)
        self.X = normalize_intensity(X)
        self.pts = pts
        self.phi = features(self.X)
        self.grad = gradient_magnitude(self.X) if min(X.shape) >= 2 else self.X.like(np.zeros(X.shape))
        self.box_tight = tight_bbox(pts)
        self.box_relax = relax_bbox(self.box_tight, cfg.margin, X.shape)
        self.kernel = PairwiseKernel(self.X, cfg.reg) if cfg.uses_reg else None
        self._static_geodesics = None

    def geodesics(self, prob: np.ndarray, cfg: TrainConfig) -> GeodesicSet:
        if cfg.geodesic_mode is Metric.DEEP:
            return inter_extreme_geodesics(cfg.geodesic, self.X, self.grad, self.X.like(prob), self.pts)
        if self._static_geodesics is None:
            self._static_geodesics = inter_extreme_geodesics(cfg.geodesic, self.X, self.grad, None, self.pts)
        return self._static_geodesics


def assemble_supervision(case: Case, prob: np.ndarray, cfg: TrainConfig):
    """Label field for one step and the geodesics it used (None when NAIVE)."""
    mask = initial_supervision(case.pts, case.box_relax, case.X.shape)
    if cfg.supervision is Supervision.NAIVE:
        return mask, None
    geo = case.geodesics(prob, cfg)
    states = mask.states.copy()
    states[geo.mask(states.shape)] = FG
    return SupervisionMask(states), geo


def objective(theta: np.ndarray, case: Case, cfg: TrainConfig, mask: SupervisionMask | None = None):
    """Loss, its gradient w.r.t. theta and the mask used.

    Supervision is rebuilt from the current prediction unless given; it is
    treated as constant when differentiating.
    """
    model = ToyModel.from_theta(theta)
    p = model.predict_features(case.phi).reshape(case.X.shape)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError(f"non-finite prediction for parameters {theta}")
    if mask is None:
        mask, _ = assemble_supervision(case, p, cfg)
    rep = combined_loss(p, mask, cfg.gamma_focal)
    value, dp = rep.total, rep.grad
    if cfg.uses_reg:
        r, dr = case.kernel.value_and_gradient(p)
        value += cfg.lam * r
        dp = dp + cfg.lam * dr
    dz = (dp * p * (1.0 - p)).ravel()
    g = np.append(case.phi.T @ dz, dz.sum())
    return float(value), g, mask


@dataclass
class TrainState:
    model: ToyModel
    velocity: np.ndarray
    iteration: int = 0
    best_val_loss: float = math.inf
    best_model: ToyModel | None = None
    history: list = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    model = ToyModel(rng.normal(0.0, 0.01, size=len(FEATURE_NAMES)), 0.0)
    return TrainState(model, np.zeros(len(FEATURE_NAMES) + 1))


def nesterov_update(theta, velocity, grad, lr, momentum):
    velocity = momentum * velocity - lr * grad
    return theta + momentum * velocity - lr * grad, velocity


def train_step(state: TrainState, case: Case, cfg: TrainConfig) -> TrainState:
    theta = state.model.theta
    try:
        value, g, _ = objective(theta, case, cfg)
    except FloatingPointError as e:
        raise FloatingPointError(f"iteration {state.iteration}: {e}") from e
    if not (math.isfinite(value) and np.all(np.isfinite(g))):
        raise FloatingPointError(
            f"non-finite loss/gradient at iteration {state.iteration}: loss={value}, grad={g}")
    lr = poly_lr(state.iteration, cfg)
    theta, velocity = nesterov_update(theta, state.velocity, g, lr, cfg.momentum)
    state.model = ToyModel.from_theta(theta)
    state.velocity = velocity
    state.iteration += 1
    state.history.append(("train", state.iteration, value))
    return state


def validation_loss(model: ToyModel, cases: list[Case], cfg: TrainConfig) -> float:
    return float(np.mean([objective(model.theta, c, cfg)[0] for c in cases]))


def _as_cases(items, cfg):
    return [c if isinstance(c, Case) else Case(c[0], c[1], cfg) for c in items]


def train(train_set, val_set, cfg: TrainConfig, state: TrainState | None = None) -> ToyModel:
    """Run ``cfg.iterations`` steps and return the best-validation snapshot.

    ``train_set``/``val_set`` hold ``(image, extreme points)`` pairs or
    prepared :class:`Case` objects.  Validation runs before the first step
    and after every pass over the training set.
    """
    train_cases, val_cases = _as_cases(train_set, cfg), _as_cases(val_set, cfg)
    if not train_cases or not val_cases:
        raise ValueError("training and validation sets must be non-empty")
    state = state or init_state(cfg)
    rng = np.random.default_rng(cfg.seed)

    def checkpoint():
        v = validation_loss(state.model, val_cases, cfg)
        state.history.append(("val", state.iteration, v))
        if v < state.best_val_loss:
            state.best_val_loss = v
            state.best_model = copy.deepcopy(state.model)
        log.info("iteration %d: validation loss %.6f", state.iteration, v)

    checkpoint()
    order = []
    while state.iteration < cfg.iterations:
        if not order:
            order = list(rng.permutation(len(train_cases)))
        train_step(state, train_cases[order.pop(0)], cfg)
        if not order or state.iteration == cfg.iterations:
            checkpoint()
    return state.best_model
