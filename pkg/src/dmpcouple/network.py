"""Feed-forward coupling network (17 -> 20 ReLU -> 10 ReLU -> 3 sigmoid)
trained with Levenberg-Marquardt.

Targets are mapped per output from their training ``[min, max]`` to
``[0.1, 0.9]`` so the sigmoid can represent them; the inverse map is stored
as ``(out_lo, out_hi)`` and every prediction lies inside that interval.
Inputs are standardized with the training mean and standard deviation.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, TrainingError

log = logging.getLogger(__name__)

SIZES = (17, 20, 10, 3)
TARGET_LO, TARGET_HI = 0.1, 0.9
#: sigmoid outputs are clipped to [SIG_EPS, 1 - SIG_EPS] so denormalized
#: predictions stay strictly inside (out_lo, out_hi)
SIG_EPS = 1e-12
#: a target dimension whose variance is below FLAT_VAR times the largest
#: variance among the dimensions (a spread under 1e-3 of the widest) carries
#: only numerical residue and is treated as constant
FLAT_VAR = 1e-6


def n_params(sizes=SIZES):
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


def unpack(theta, sizes=SIZES):
    """Split a flat parameter vector into ``[(W, b), ...]`` (views, row-major W)."""
    layers, pos = [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        W = theta[pos:pos + o * i].reshape(o, i)
        pos += o * i
        b = theta[pos:pos + o]
        pos += o
        layers.append((W, b))
    return layers


def pack(layers):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def glorot_init(rng, sizes=SIZES):
    layers = []
    for i, o in zip(sizes[:-1], sizes[1:]):
        r = math.sqrt(6.0 / (i + o))
        layers.append((rng.uniform(-r, r, size=(o, i)), rng.uniform(-r, r, size=o)))
    return pack(layers)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class CouplingModel:
    """Trained network plus input standardization and output range."""

    theta: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    out_lo: np.ndarray
    out_hi: np.ndarray
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (n_params(),):
            raise DomainError(f"expected {n_params()} parameters, got {theta.shape}")
        for name, n in (("in_mean", SIZES[0]), ("in_std", SIZES[0]), ("out_lo", SIZES[-1]), ("out_hi", SIZES[-1])):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise DomainError(f"{name} must have {n} entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not (np.all(np.isfinite(theta)) and np.all(self.out_hi > self.out_lo) and np.all(self.in_std > 0)):
            raise DomainError("model parameters must be finite with out_hi > out_lo and in_std > 0")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def layers(self):
        return unpack(self.theta)


def _activations(theta, Z):
    (W1, b1), (W2, b2), (W3, b3) = unpack(theta)
    z1 = Z @ W1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2.T + b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ W3.T + b3
    return z1, a1, z2, a2, sigmoid(z3)


def predict_normalized(theta, Z):
    return _activations(theta, Z)[-1]


def forward(model, x):
    """Coupling prediction for one feature vector ``(17,)`` or a batch ``(B, 17)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != SIZES[0]:
        raise DomainError(f"expected {SIZES[0]} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite network input")
    Z = (np.atleast_2d(x) - model.in_mean) / model.in_std
    y = np.clip(predict_normalized(model.theta, Z), SIG_EPS, 1.0 - SIG_EPS)
    out = model.out_lo + (model.out_hi - model.out_lo) * y
    return out[0] if x.ndim == 1 else out


def jacobian(theta, Z):
    """Sigmoid outputs and their Jacobian with respect to ``theta``.

    Reverse-mode accumulation, one backward pass per output, vectorized over
    the batch.

    Returns
    -------
    y : ndarray, shape (B, 3)
    J : ndarray, shape (B, 3, P)
    """
    z1, a1, z2, a2, y = _activations(theta, Z)
    (W1, _), (W2, _), (W3, _) = unpack(theta)
    B, n_out = y.shape
    n_in, n_h1, n_h2 = SIZES[0], SIZES[1], SIZES[2]
    dsig = y * (1.0 - y)                                        # (B, 3)
    m1 = (z1 > 0).astype(float)
    m2 = (z2 > 0).astype(float)
    g2 = dsig[:, :, None] * W3[None, :, :] * m2[:, None, :]     # (B, 3, 10)
    g1 = (g2 @ W2) * m1[:, None, :]                             # (B, 3, 20)

    J = np.zeros((B, n_out, n_params()))
    pos = 0
    J[:, :, pos:pos + n_h1 * n_in] = (g1[:, :, :, None] * Z[:, None, None, :]).reshape(B, n_out, -1)
    pos += n_h1 * n_in
    J[:, :, pos:pos + n_h1] = g1
    pos += n_h1
    J[:, :, pos:pos + n_h2 * n_h1] = (g2[:, :, :, None] * a1[:, None, None, :]).reshape(B, n_out, -1)
    pos += n_h2 * n_h1
    J[:, :, pos:pos + n_h2] = g2
    pos += n_h2
    for k in range(n_out):
        J[:, k, pos + k * n_h2:pos + (k + 1) * n_h2] = dsig[:, k:k + 1] * a2
    pos += n_out * n_h2
    for k in range(n_out):
        J[:, k, pos + k] = dsig[:, k]
    return y, J


def nmse(pred, target):
    """Per-dimension and mean normalized mean squared error.

    Dimensions whose target variance is zero, or negligible (below
    ``FLAT_VAR`` times the largest variance among the dimensions, i.e.
    numerical residue), get ``nan`` and are left out of the mean (with a
    warning).
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    var = target.var(axis=0)
    mse = ((pred - target) ** 2).mean(axis=0)
    zero = flat_dims(target)
    if np.any(zero):
        warnings.warn(f"zero-variance target dimension(s) {np.flatnonzero(zero).tolist()} excluded from NMSE")
    per_dim = np.where(zero, np.nan, mse / np.where(zero, 1.0, var))
    mean = float(np.nanmean(per_dim)) if not np.all(zero) else float("nan")
    return per_dim, mean


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 500
    lam_init: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 0.1
    lam_max: float = 1e10
    grad_tol: float = 1e-7
    loss_tol: float = 1e-9
    patience: int = 10
    goal: float = 0.0
    seed: int = 0
    restarts: int = 1  # independent initializations; the lowest final loss wins

    def __post_init__(self):
        if not (self.max_iters > 0 and self.lam_init > 0 and self.lam_max > 0 and self.grad_tol > 0
                and self.loss_tol > 0 and self.patience > 0 and self.goal >= 0 and self.restarts > 0):
            raise ConfigError("training settings must be positive")
        if not (self.lam_down < 1.0 < self.lam_up):
            raise ConfigError("need lam_down < 1 < lam_up")

    def to_dict(self):
        return dict(self.__dict__)


def flat_dims(Y):
    """Boolean mask of target dimensions that are constant up to numerical residue."""
    var = np.asarray(Y, dtype=float).var(axis=0)
    return var <= FLAT_VAR * var.max()


def output_range(Y):
    """``(lo, hi)`` such that ``[min, max]`` of ``Y`` lands on ``[0.1, 0.9]`` of the sigmoid.

    Flat dimensions (see :func:`flat_dims`) get a range of the widest span
    centered on their mean, so their residue is not stretched over the
    sigmoid's range.
    """
    mn, mx = Y.min(axis=0), Y.max(axis=0)
    span = mx - mn
    flat = flat_dims(Y) | (span < 1e-12)
    wide = span.max() if span.max() >= 1e-12 else 1.0
    mn = np.where(flat, Y.mean(axis=0) - 0.5 * wide, mn)
    span = np.where(flat, wide, span)
    margin = span * TARGET_LO / (TARGET_HI - TARGET_LO)
    return mn - margin, mn + span + margin


def _normal_equations(theta, Z, Yn, weight, chunk=2048):
    P = n_params()
    H = np.zeros((P, P))
    g = np.zeros(P)
    loss = 0.0
    sw = np.sqrt(weight)
    for i in range(0, len(Z), chunk):
        y, J = jacobian(theta, Z[i:i + chunk])
        r = (Yn[i:i + chunk] - y) * sw
        Js = (J * sw[None, :, None]).reshape(-1, P)
        H += Js.T @ Js
        g += Js.T @ r.ravel()
        loss += float(np.sum(r * r))
    return H, g, loss


def _loss(theta, Z, Yn, weight):
    r = Yn - predict_normalized(theta, Z)
    return float(np.sum(r * r * weight))


def levenberg_marquardt(theta, Z, Yn, weight, cfg=TrainConfig()):
    """Levenberg-Marquardt minimization of the weighted squared error in normalized space.

    Parameters
    ----------
    theta : ndarray, shape (P,)
        Starting parameters.
    Z : ndarray, shape (N, 17)
        Standardized inputs.
    Yn : ndarray, shape (N, 3)
        Targets on the sigmoid scale.
    weight : ndarray, shape (3,)
        Per-output loss weights.
    cfg : TrainConfig

    Returns
    -------
    theta, lam, stop_reason, iterations, history
        ``history`` holds the loss per output entry after each accepted step,
        starting with the initial loss.
    """
    theta = np.array(theta, dtype=float)
    P = n_params()
    n_rows = len(Z)
    lam = cfg.lam_init
    H, g, loss = _normal_equations(theta, Z, Yn, weight)
    history = [loss / (n_rows * SIZES[-1])]
    stall = 0
    reason = "max_iters"
    iters = 0
    eye = np.eye(P)
    for iters in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g)) < cfg.grad_tol:
            reason = "grad_tol"
            break
        accepted = False
        singular = False
        while lam <= cfg.lam_max:
            try:
                delta = np.linalg.solve(H + lam * eye, g)
                singular = not np.all(np.isfinite(delta))
            except np.linalg.LinAlgError:
                singular = True
            if singular:
                lam *= cfg.lam_up
                continue
            trial = theta + delta
            new_loss = _loss(trial, Z, Yn, weight)
            if np.isfinite(new_loss) and new_loss < loss:
                accepted = True
                break
            lam *= cfg.lam_up
        if not accepted:
            if singular:
                raise TrainingError(
                    f"damped normal equations singular up to lambda={cfg.lam_max:g} "
                    f"(iteration {iters}, loss {loss:.6g})"
                )
            reason = "lam_max"
            break
        improvement = (loss - new_loss) / max(loss, 1e-300)
        theta = trial
        lam = max(lam * cfg.lam_down, 1e-20)
        H, g, loss = _normal_equations(theta, Z, Yn, weight)
        history.append(loss / (n_rows * SIZES[-1]))
        stall = stall + 1 if improvement < cfg.loss_tol else 0
        if stall >= cfg.patience:
            reason = "loss_tol"
            break
        if cfg.goal > 0 and history[-1] <= cfg.goal:
            reason = "goal"
            break
    return theta, lam, reason, iters, history


def train_normalized(Z, Yn, weight, cfg=TrainConfig()):
    """Run :func:`levenberg_marquardt` from up to ``cfg.restarts`` Glorot
    initializations drawn from ``cfg.seed`` and keep the run with the lowest
    final loss. Restarting stops once a run reaches ``cfg.goal``."""
    rng = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(cfg.restarts):
        run = levenberg_marquardt(glorot_init(rng), Z, Yn, weight, cfg)
        if best is None or run[-1][-1] < best[-1][-1]:
            best = run
        if cfg.goal > 0 and best[-1][-1] <= cfg.goal:
            break
    return best


def fit_network(X, Y, cfg=TrainConfig()):
    """Train a coupling network on features ``X`` (N, 17) and targets ``Y`` (N, 3).

    Minimizes the squared error on normalized targets, each output weighted
    by the inverse variance of its normalized target so that the loss is
    proportional to the mean NMSE. Flat target dimensions get the smallest
    weight of the others instead. Accepted steps never increase the loss;
    the returned parameters are the last accepted ones.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != SIZES[0] or Y.shape != (len(X), SIZES[-1]):
        raise DomainError(f"need X (N, {SIZES[0]}) and Y (N, {SIZES[-1]})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise DomainError("non-finite training data")
    P = n_params()
    if len(X) < P / 2:
        log.warning("%d training rows for %d parameters", len(X), P)

    in_mean = X.mean(axis=0)
    in_std = X.std(axis=0)
    in_std = np.where(in_std < 1e-12, 1.0, in_std)
    out_lo, out_hi = output_range(Y)
    Z = (X - in_mean) / in_std
    Yn = (Y - out_lo) / (out_hi - out_lo)
    var = Yn.var(axis=0)
    flat = flat_dims(Y) | (var <= 1e-14)
    weight = np.where(flat, 1.0, 1.0 / np.where(flat, 1.0, var))
    if np.any(flat) and not np.all(flat):
        weight[flat] = weight[~flat].min()
    n_rows = len(X)

    theta, lam, reason, iters, history = train_normalized(Z, Yn, weight, cfg)

    model = CouplingModel(theta, in_mean, in_std, out_lo, out_hi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, train_nmse = nmse(forward(model, X), Y)
    meta = {
        "seed": cfg.seed,
        "epochs": iters,
        "final_lambda": lam,
        "final_nmse": train_nmse,
        "stop_reason": reason,
        "loss_history": history,
        "n_rows": n_rows,
        "flat_dims": np.flatnonzero(flat).tolist(),
    }
    log.debug("LM stopped after %d iterations (%s), train NMSE %.4g", iters, reason, train_nmse)
    return CouplingModel(theta, in_mean, in_std, out_lo, out_hi, train_meta=meta)


def train_lm(dataset, cfg=TrainConfig()):
    """Train on the rows of a :class:`~dmpcouple.coupling.CouplingDataset` flagged as training."""
    return fit_network(dataset.X[dataset.train], dataset.Ct[dataset.train], cfg)
