"""Silhouette-driven pose fitting.

The loss is the masked mean squared difference between the blurred target
silhouette and the blurred rendered silhouette. Gradients come from central
finite differences, and Adam walks a coarse-to-fine blur schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import JAW, N_PARAMS, ROTATION, TRANSLATION, PoseParams
from .render import DEFAULT_VISIBILITY_WINDOW, blur, gaussian_kernel
from .teeth import TeethModel, scene_diagonal


class FitError(RuntimeError):
    pass


def _region(mask: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        raise ValueError("mouth label is empty")
    return np.array([rows[0], rows[-1], cols[0], cols[-1]], dtype=np.int64)


class SilhouetteLoss:
    """Loss context: one model, one target, one mouth label.

    Calling it with an ``(K, 10)`` array of pose vectors returns ``K`` losses.
    Blurred targets are cached per sigma.
    """

    def __init__(self, model: TeethModel, target_silhouette, mouth_label, sigma: float = 1.5,
                 visibility_window: float = DEFAULT_VISIBILITY_WINDOW):
        target = np.asarray(target_silhouette, dtype=np.float64)
        mask = np.asarray(mouth_label) != 0
        if target.shape != mask.shape:
            raise ValueError(f"target {target.shape} and mouth label {mask.shape} differ in shape")
        if not model.teeth:
            raise ValueError("model has no teeth")
        self.model = model
        self.target = target
        self.mask = np.ascontiguousarray(mask.astype(np.uint8))
        self.bbox = _region(self.mask)
        self.sigma = float(sigma)
        self.visibility_window = float(visibility_window)
        self.scene_diagonal = scene_diagonal(model)
        self._blurred = {}

    def with_sigma(self, sigma: float) -> "SilhouetteLoss":
        other = object.__new__(SilhouetteLoss)
        other.__dict__.update(self.__dict__)
        other.sigma = float(sigma)
        return other

    def _target_for(self, sigma):
        if sigma not in self._blurred:
            self._blurred[sigma] = (np.ascontiguousarray(np.clip(blur(self.target, sigma), 0, 1)),
                                    gaussian_kernel(sigma))
        return self._blurred[sigma]

    def __call__(self, thetas) -> np.ndarray:
        thetas = np.ascontiguousarray(np.atleast_2d(np.asarray(thetas, dtype=np.float64)))
        if thetas.shape[1] != N_PARAMS:
            raise ValueError("pose vectors must have 10 entries")
        target, kernel = self._target_for(self.sigma)
        p = self.model.packed
        out = np.empty(len(thetas))
        _kernels.silhouette_loss_batch(thetas, p.vertices, p.is_lower, p.vert_tooth, p.triangles,
                                       p.tri_tooth, len(p.ids), self.visibility_window, self.mask,
                                       target, kernel, self.bbox, out)
        return out

    def at(self, pose: PoseParams) -> float:
        return float(self(pose.to_vector()[None])[0])


def masked_silhouette_loss(pose: PoseParams, model: TeethModel, target_silhouette, mouth_label,
                           sigma: float = 1.5,
                           visibility_window: float = DEFAULT_VISIBILITY_WINDOW) -> float:
    return SilhouetteLoss(model, target_silhouette, mouth_label, sigma, visibility_window).at(pose)


def silhouette_distance(a, b, region, sigma: float = 1.5) -> float:
    """Mean squared difference of two blurred silhouettes over ``region``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    region = np.asarray(region) != 0
    if a.shape != b.shape or a.shape != region.shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, {region.shape}")
    if not region.any():
        raise ValueError("region is empty")
    d = np.clip(blur(a, sigma), 0, 1) - np.clip(blur(b, sigma), 0, 1)
    return float(np.mean(d[region] ** 2))


@dataclass(frozen=True)
class FDSteps:
    """Central-difference step sizes.

    ``focal`` is relative to the focal length; ``translation`` and ``jaw`` are
    fractions of the scene diagonal; ``rotation`` is in radians. ``dolly`` is
    the step along the scale-preserving depth direction used by the fitter.
    """

    focal: float = 1e-2
    rotation: float = 1e-3
    translation: float = 1e-3
    jaw: float = 1e-3
    dolly: float = 1e-2

    def scaled(self, factor: float) -> "FDSteps":
        return FDSteps(self.focal * factor, self.rotation * factor, self.translation * factor,
                       self.jaw * factor, self.dolly * factor)


def central_difference(fn, x, steps) -> np.ndarray:
    """Gradient of ``fn`` (batched: (K, n) -> (K,)) at ``x`` by central differences."""
    x = np.asarray(x, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    n = len(x)
    probes = np.repeat(x[None], 2 * n, axis=0)
    idx = np.arange(n)
    probes[2 * idx, idx] += steps
    probes[2 * idx + 1, idx] -= steps
    vals = np.asarray(fn(probes), dtype=np.float64)
    return (vals[0::2] - vals[1::2]) / (2 * steps)


def fd_step_vector(pose: PoseParams, steps: FDSteps, scale: float) -> np.ndarray:
    h = np.empty(N_PARAMS)
    h[0] = steps.focal * pose.focal
    h[ROTATION] = steps.rotation
    h[TRANSLATION] = steps.translation * scale
    h[JAW] = steps.jaw * scale
    return h


def fd_gradient(pose: PoseParams, loss, steps: FDSteps = FDSteps(),
                scene_scale: float | None = None) -> np.ndarray:
    """Central-difference gradient of ``loss`` w.r.t. the 10 pose parameters.

    ``loss`` maps an (K, 10) array of pose vectors to K values; a
    :class:`SilhouetteLoss` qualifies and supplies its own scene diagonal.
    """
    if scene_scale is None:
        scene_scale = getattr(loss, "scene_diagonal", 1.0)
    return central_difference(loss, pose.to_vector(), fd_step_vector(pose, steps, scene_scale))


# Optimizer coordinates: [log(focal/tz), rotation(3), tx/D, ty/D, tz/D, jaw/D (3)].

def _to_internal(theta: np.ndarray, diag: float) -> np.ndarray:
    u = np.empty(N_PARAMS)
    tz = theta[6]
    if tz <= 0:
        raise FitError("initial pose places the model origin behind the camera")
    u[0] = math.log(theta[0] / tz)
    u[ROTATION] = theta[ROTATION]
    u[TRANSLATION] = theta[TRANSLATION] / diag
    u[JAW] = theta[JAW] / diag
    return u


def _to_theta(u: np.ndarray, diag: float) -> np.ndarray:
    u = np.atleast_2d(u)
    theta = np.empty_like(u)
    tz = u[:, 6] * diag
    theta[:, 0] = np.exp(u[:, 0]) * tz
    theta[:, ROTATION] = u[:, ROTATION]
    theta[:, TRANSLATION] = u[:, TRANSLATION] * diag
    theta[:, JAW] = u[:, JAW] * diag
    return theta


def _internal_steps(steps: FDSteps) -> np.ndarray:
    h = np.empty(N_PARAMS)
    h[0] = steps.focal
    h[ROTATION] = steps.rotation
    h[4:6] = steps.translation
    h[6] = steps.dolly
    h[JAW] = steps.jaw
    return h


@dataclass(frozen=True)
class FitOptions:
    learning_rate: float = 1e-3
    max_iterations: int = 1000
    loss_threshold: float = 1e-3
    blur_schedule: tuple = ((4.0, 300), (1.5, 700))
    fd_steps: FDSteps = FDSteps()
    visibility_window: float = DEFAULT_VISIBILITY_WINDOW
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.blur_schedule:
            raise ValueError("blur_schedule must not be empty")
        for sigma, count in self.blur_schedule:
            if sigma < 0 or count < 0:
                raise ValueError("blur schedule entries need sigma >= 0 and count >= 0")

    @property
    def final_sigma(self) -> float:
        return float(self.blur_schedule[-1][0])

    def sigma_at(self, iteration: int) -> float:
        """Blur sigma for a 0-based iteration; the last entry absorbs any excess."""
        end = 0
        for sigma, count in self.blur_schedule:
            end += count
            if iteration < end:
                return float(sigma)
        return self.final_sigma


@dataclass(frozen=True)
class FitResult:
    pose: PoseParams
    final_loss: float
    loss_trace: tuple
    iterations_run: int
    converged: bool

    def to_dict(self, include_trace: bool = True) -> dict:
        d = {"pose": self.pose.to_dict(), "final_loss": self.final_loss,
             "converged": self.converged, "iterations_run": self.iterations_run}
        if include_trace:
            d["loss_trace"] = list(self.loss_trace)
        return d

    def to_json(self, include_trace: bool = True) -> str:
        return json.dumps(self.to_dict(include_trace), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        trace = tuple(d.get("loss_trace", ()))
        return cls(PoseParams.from_dict(d["pose"]), float(d["final_loss"]), trace,
                   int(d["iterations_run"]), bool(d["converged"]))


class Adam:
    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, x, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit_pose(model: TeethModel, target_silhouette, mouth_label, initial_pose: PoseParams,
             options: FitOptions = FitOptions(), callback=None) -> FitResult:
    """Minimize the masked silhouette loss from ``initial_pose``.

    Every iteration scores the current pose at the finest sigma (that value
    goes into the trace and decides convergence), then takes one Adam step
    on the finite-difference gradient at the scheduled sigma. The returned
    pose is the best one scored.
    """
    base = SilhouetteLoss(model, target_silhouette, mouth_label, options.final_sigma,
                          options.visibility_window)
    diag = base.scene_diagonal
    fine = base
    stages = {}

    def loss_at(sigma):
        if sigma not in stages:
            stages[sigma] = fine if sigma == fine.sigma else base.with_sigma(sigma)
        return stages[sigma]

    u = _to_internal(initial_pose.to_vector(), diag)
    h = _internal_steps(options.fd_steps)
    adam = Adam(N_PARAMS, options.learning_rate, options.beta1, options.beta2, options.eps)

    # The first iterate is scored at the initial pose itself, not its round trip
    # through the optimizer chart, so a fit started at the optimum returns it.
    theta = initial_pose.to_vector()[None]
    best_theta = theta[0]
    best_loss = math.inf
    trace = []
    converged = False
    current_sigma = None
    for it in range(options.max_iterations):
        sigma = options.sigma_at(it)
        if sigma != current_sigma:
            # Loss scale changes with sigma; restart the moment estimates.
            adam = Adam(N_PARAMS, options.learning_rate, options.beta1, options.beta2, options.eps)
            current_sigma = sigma

        probes = np.repeat(u[None], 2 * N_PARAMS, axis=0)
        idx = np.arange(N_PARAMS)
        probes[2 * idx, idx] += h
        probes[2 * idx + 1, idx] -= h
        if sigma == fine.sigma:
            vals = fine(np.vstack([theta, _to_theta(probes, diag)]))
            fine_loss, diffs = vals[0], vals[1:]
        else:
            fine_loss = fine(theta)[0]
            diffs = loss_at(sigma)(_to_theta(probes, diag))
        if not math.isfinite(fine_loss) or not np.all(np.isfinite(diffs)):
            raise FitError(f"non-finite loss at iteration {it}")
        trace.append(float(fine_loss))
        if fine_loss < best_loss:
            best_loss, best_theta = float(fine_loss), theta[0].copy()
        if callback is not None:
            callback(it, theta[0], fine_loss)
        if fine_loss < options.loss_threshold:
            converged = True
            break
        grad = (diffs[0::2] - diffs[1::2]) / (2 * h)
        u = adam.step(u, grad)
        theta = _to_theta(u, diag)
    else:
        last = float(fine(theta)[0])
        if not math.isfinite(last):
            raise FitError("non-finite loss at the final iterate")
        if last < best_loss:
            best_loss, best_theta = last, theta[0].copy()
        converged = best_loss < options.loss_threshold

    pose = PoseParams.from_vector(best_theta)
    return FitResult(pose, best_loss, tuple(trace), len(trace), converged)
