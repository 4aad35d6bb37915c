"""Coupling-term regression targets and feature/target datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dmp import forcing_term, phase_at
from .errors import DomainError, TargetError
from .features import extract_features
from .frame import GRAVITY, build_frame

ENDPOINT_TOL = 1e-3


def compute_targets(demo, baseline, frame=None, tol=ENDPOINT_TOL, gravity=GRAVITY):
    """Per-sample coupling targets of an avoidance demonstration, in the local frame.

    ``C = tau^2 xdd - alpha_v (beta_v (g - x) - tau xd) - f(s)`` with the
    amplitude ratio fixed to 1, which requires the demonstration to share the
    baseline's start and goal (compared in the local frame, within ``tol``).
    The phase of each sample follows the baseline's discretized canonical
    system at the sample time.
    """
    frame = frame or build_frame(demo.start, demo.goal, gravity)
    local = demo.in_frame(frame)
    off = max(np.linalg.norm(local.start - baseline.x0_demo), np.linalg.norm(local.goal - baseline.g_demo))
    if off > tol:
        raise TargetError(f"{demo.demo_id}: start/goal differ from the baseline by {off:.3g} m (> {tol:g})")
    p = baseline.params
    tau = demo.tau
    s = phase_at(demo.t, tau, p)
    return (tau**2 * local.xdd
            - p.alpha_v * (p.beta_v * (local.goal - local.x) - tau * local.xd)
            - forcing_term(s, baseline))


@dataclass(frozen=True, eq=False)
class CouplingDataset:
    """Feature rows, coupling targets and the train/test split.

    Attributes
    ----------
    X : ndarray, shape (N, 17)
    Ct : ndarray, shape (N, 3)
    train : ndarray of bool, shape (N,)
    demo_ids, setting_ids : ndarray of str, shape (N,)
    """

    X: np.ndarray
    Ct: np.ndarray
    train: np.ndarray
    demo_ids: np.ndarray
    setting_ids: np.ndarray

    def __post_init__(self):
        if not (len(self.X) == len(self.Ct) == len(self.train) == len(self.demo_ids)):
            raise DomainError("dataset columns have different lengths")

    @property
    def test(self):
        return ~self.train

    def __len__(self):
        return len(self.X)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_mask(demo_ids, ratio=0.8, mode="row", seed=0):
    """Deterministic train mask: random rows (``"row"``) or whole demonstrations (``"demo"``)."""
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"split ratio must be in (0, 1], got {ratio}")
    demo_ids = np.asarray(demo_ids)
    rng = np.random.default_rng(seed)
    train = np.zeros(len(demo_ids), dtype=bool)
    if mode == "row":
        perm = rng.permutation(len(demo_ids))
        train[perm[:_round_half_up(ratio * len(demo_ids))]] = True
    elif mode == "demo":
        _, first = np.unique(demo_ids, return_index=True)
        ids = demo_ids[np.sort(first)]
        chosen = ids[rng.permutation(len(ids))[:_round_half_up(ratio * len(ids))]]
        train = np.isin(demo_ids, chosen)
    else:
        raise DomainError(f"unknown split mode {mode!r}")
    return train


def demo_rows(demo, baseline, gravity=GRAVITY):
    """Features and targets of every sample of one demonstration."""
    if demo.setting is None:
        raise TargetError(f"{demo.demo_id}: no obstacle setting attached")
    frame = build_frame(demo.start, demo.goal, gravity)
    targets = compute_targets(demo, baseline, frame=frame)
    X = np.vstack([extract_features(demo.setting, frame, x, v, demo.tau).as_array()
                   for x, v in zip(demo.x, demo.xd)])
    return X, targets


def assemble(demos, baseline, split_ratio=0.8, mode="row", seed=0, gravity=GRAVITY):
    demos = list(demos)
    if not demos:
        raise DomainError("no demonstrations")
    Xs, Cs, dids, sids = [], [], [], []
    for demo in demos:
        try:
            X, C = demo_rows(demo, baseline, gravity)
        except TargetError:
            raise
        except Exception as exc:  # name the offending demo
            raise TargetError(f"{demo.demo_id}: {exc}") from exc
        Xs.append(X)
        Cs.append(C)
        dids.append(np.full(len(X), demo.demo_id, dtype=object))
        sids.append(np.full(len(X), demo.setting.setting_id, dtype=object))
    demo_ids = np.concatenate(dids).astype(str)
    return CouplingDataset(
        X=np.vstack(Xs),
        Ct=np.vstack(Cs),
        train=split_mask(demo_ids, split_ratio, mode, seed),
        demo_ids=demo_ids,
        setting_ids=np.concatenate(sids).astype(str),
    )
