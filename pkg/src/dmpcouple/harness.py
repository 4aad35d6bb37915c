"""Experiment protocols and their reports.

Three protocols are supported:

``per-setting``
    one network per obstacle setting, trained on that setting's
    demonstrations and unrolled on it;
``multi``
    one network per obstacle kind over all of its settings, unrolled on each;
``unseen``
    a kind-trained network unrolled on a grid of new obstacle placements,
    next to the uncoupled baseline.

Each protocol returns an :class:`EvalReport`: per-setting rows, aggregates
recomputable from those rows, NMSE histogram bins, and acceptance gates.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .coupling import assemble
from .errors import DmpError
from .network import forward, nmse, train_lm
from .obstacles import signed_distance
from .rollout import rollout

log = logging.getLogger(__name__)

#: NMSE histogram edges: 0.01-wide bins up to 0.2, then one overflow bin
NMSE_BINS = tuple(np.round(np.arange(0.0, 0.2001, 0.01), 2).tolist()) + (math.inf,)


@dataclass
class SettingRow:
    """Metrics of one unrolled setting. Distances in meters."""

    setting_id: str
    kind: str
    train_nmse: float = math.nan
    test_nmse: float = math.nan
    final_goal_dist: float = math.nan
    min_sdist: float = math.nan
    mean_sdist: float = math.nan
    hit: bool = False
    converged: bool = False
    baseline_min_sdist: float = math.nan
    baseline_hit: bool = False
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class Gate:
    name: str
    passed: bool
    value: float
    threshold: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} ({self.threshold})"


def unroll_metrics(result, setting, goal_tol):
    """Distance metrics of an unroll, recomputed from its world positions.

    A hit is any step with negative analytic signed distance; convergence
    means the last state lies within ``goal_tol`` of the goal.
    """
    sd = signed_distance(setting, result.x)
    final = float(np.linalg.norm(result.x[-1] - np.asarray(result.goal)))
    return {
        "final_goal_dist": final,
        "min_sdist": float(np.min(sd)),
        "mean_sdist": float(np.mean(sd)),
        "hit": bool(np.min(sd) < 0.0),
        "converged": bool(final < goal_tol),
    }


def _nmse_quiet(pred, target):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return nmse(pred, target)[1]


@dataclass
class EvalReport:
    protocol: str
    label: str
    rows: list
    model_nmse: Optional[dict] = None
    flagged: bool = False
    unsafe: bool = False
    notes: list = field(default_factory=list)

    # -- aggregates --------------------------------------------------------------
    def aggregates(self):
        ok = [r for r in self.rows if not r.failed]

        def stat(fn, values):
            values = [v for v in values if not math.isnan(v)]
            return float(fn(values)) if values else math.nan

        return {
            "settings": len(self.rows),
            "failures": len(self.rows) - len(ok),
            "hits": sum(r.hit for r in ok),
            "converged": sum(r.converged for r in ok),
            "baseline_hits": sum(r.baseline_hit for r in self.rows),
            "train_nmse_mean": stat(np.mean, [r.train_nmse for r in ok]),
            "train_nmse_max": stat(np.max, [r.train_nmse for r in ok]),
            "test_nmse_mean": stat(np.mean, [r.test_nmse for r in ok]),
            "test_nmse_max": stat(np.max, [r.test_nmse for r in ok]),
            "goal_dist_max": stat(np.max, [r.final_goal_dist for r in ok]),
            "goal_dist_mean": stat(np.mean, [r.final_goal_dist for r in ok]),
            "closest_mean": stat(np.mean, [r.min_sdist for r in ok]),
            "closest_min": stat(np.min, [r.min_sdist for r in ok]),
        }

    def histogram(self):
        """Counts of per-setting train and test NMSE over :data:`NMSE_BINS`."""
        edges = np.array(NMSE_BINS)
        out = {}
        for name in ("train_nmse", "test_nmse"):
            vals = np.array([getattr(r, name) for r in self.rows if not r.failed])
            vals = vals[~np.isnan(vals)]
            idx = np.clip(np.searchsorted(edges, vals, side="right") - 1, 0, len(edges) - 2)
            out[name] = np.bincount(idx, minlength=len(edges) - 1).tolist()
        return {"edges": list(NMSE_BINS), **out}

    # -- gates ------------------------------------------------------------------
    def gates(self, cfg):
        """Acceptance gates for this protocol under ``cfg.gates``; empty for flagged runs."""
        if self.flagged:
            return []
        g = cfg.gates
        agg = self.aggregates()
        n = agg["settings"]
        out = [Gate(f"{self.label} failures", agg["failures"] == 0, agg["failures"], "== 0")]
        if self.protocol == "per-setting":
            out += [
                Gate(f"{self.label} max train NMSE", agg["train_nmse_max"] <= g.per_setting_nmse,
                     agg["train_nmse_max"], f"<= {g.per_setting_nmse}"),
                Gate(f"{self.label} max test NMSE", agg["test_nmse_max"] <= g.per_setting_nmse,
                     agg["test_nmse_max"], f"<= {g.per_setting_nmse}"),
            ]
        elif self.protocol == "multi":
            tr, te = self.model_nmse["train"], self.model_nmse["test"]
            out += [
                Gate(f"{self.label} train NMSE", tr <= g.multi_nmse, tr, f"<= {g.multi_nmse}"),
                Gate(f"{self.label} test NMSE", te <= g.multi_nmse, te, f"<= {g.multi_nmse}"),
                Gate(f"{self.label} hits", agg["hits"] == 0, agg["hits"], "== 0"),
                Gate(f"{self.label} converged", agg["converged"] == n, agg["converged"], f"== {n}"),
            ]
        elif self.protocol == "unseen":
            limit = g.unseen_hit_fraction * n
            need = g.baseline_hit_fraction * n
            out += [
                Gate(f"{self.label} baseline hits", agg["baseline_hits"] >= need, agg["baseline_hits"],
                     f">= {need:g}"),
                Gate(f"{self.label} hits", agg["hits"] <= limit, agg["hits"], f"<= {limit:g}"),
                Gate(f"{self.label} converged", agg["converged"] == n, agg["converged"], f"== {n}"),
            ]
        return out

    # -- output -----------------------------------------------------------------
    def summary(self):
        return {
            "protocol": self.protocol,
            "label": self.label,
            "flagged": self.flagged,
            "unsafe": self.unsafe,
            "model_nmse": self.model_nmse,
            "aggregates": self.aggregates(),
            "histogram": self.histogram(),
            "notes": list(self.notes),
        }

    def rows_table(self):
        names = [f.name for f in dataclasses.fields(SettingRow)]
        lines = [",".join(names)]
        for r in self.rows:
            vals = []
            for n in names:
                v = getattr(r, n)
                if isinstance(v, bool):
                    vals.append(str(int(v)))
                elif isinstance(v, float):
                    vals.append("%.17g" % v)
                elif v is None:
                    vals.append("")
                else:
                    vals.append(str(v).replace(",", ";").replace("\n", " "))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def histogram_table(self):
        h = self.histogram()
        lines = ["lo,hi,train,test"]
        for i in range(len(h["edges"]) - 1):
            lines.append(f"{h['edges'][i]:g},{h['edges'][i + 1]:g},{h['train_nmse'][i]},{h['test_nmse'][i]}")
        return "\n".join(lines) + "\n"

    def write(self, directory, cfg=None):
        """Write ``<label>.rows.csv``, ``<label>.hist.csv`` and ``<label>.summary.json``."""
        from .io import _atomic_write, write_json

        directory = Path(directory)
        prefix = ("UNSAFE-" if self.unsafe else "") + self.label
        summary = self.summary()
        if cfg is not None:
            summary["gates"] = [dataclasses.asdict(g) for g in self.gates(cfg)]
        _atomic_write(directory / f"{prefix}.rows.csv", self.rows_table())
        _atomic_write(directory / f"{prefix}.hist.csv", self.histogram_table())
        write_json(directory / f"{prefix}.summary.json", summary)
        return directory / f"{prefix}.summary.json"


# -- workers ----------------------------------------------------------------------

def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _unroll_row(setting, baseline, model, cfg, row):
    g = cfg.gates
    guards = cfg.guards.to_guards()
    base = rollout(baseline, setting, horizon=g.horizon, gravity=cfg.scene.gravity)
    bm = unroll_metrics(base, setting, g.goal_tol)
    row.baseline_min_sdist = bm["min_sdist"]
    row.baseline_hit = bm["hit"]
    res = rollout(baseline, setting, model, guards=guards, horizon=g.horizon, gravity=cfg.scene.gravity)
    for k, v in unroll_metrics(res, setting, g.goal_tol).items():
        setattr(row, k, v)
    return row, res


def _per_setting_task(args):
    setting, demos, baseline, cfg = args
    row = SettingRow(setting.setting_id, setting.kind)
    model = None
    try:
        ds = assemble(demos, baseline, split_ratio=cfg.data.split_ratio, mode="row",
                      seed=_split_seed(cfg, setting.setting_id), gravity=cfg.scene.gravity)
        model = train_lm(ds, cfg.train_config(setting.setting_id))
        row.train_nmse = _nmse_quiet(forward(model, ds.X[ds.train]), ds.Ct[ds.train])
        if np.any(ds.test):
            row.test_nmse = _nmse_quiet(forward(model, ds.X[ds.test]), ds.Ct[ds.test])
        model.train_meta["test_nmse"] = row.test_nmse
        _unroll_row(setting, baseline, model, cfg, row)
    except DmpError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s failed: %s", setting.setting_id, row.error)
    return row, model


def _split_seed(cfg, *names):
    from .config import substream

    return substream(cfg.seed, "split", *names)


def run_per_setting(settings, demos, baseline, cfg, label="per-setting", workers=None):
    """Train, unroll and score one network per setting.

    Parameters
    ----------
    settings : list of ObstacleSetting
    demos : dict
        Demonstrations per setting id.
    baseline : Dmp
    cfg : RunConfig

    Returns
    -------
    report : EvalReport
    models : dict
        Trained model per setting id (``None`` where training failed).
    """
    workers = cfg.workers if workers is None else workers
    tasks = [(s, demos[s.setting_id], baseline, cfg) for s in settings]
    out = _map(_per_setting_task, tasks, workers)
    rows = [r for r, _ in out]
    models = {s.setting_id: m for s, (_, m) in zip(settings, out)}
    report = EvalReport("per-setting", label, rows, unsafe=not cfg.guards.to_guards().enabled)
    return report, models


def _unroll_task(args):
    setting, baseline, model, cfg, train_nmse, test_nmse = args
    row = SettingRow(setting.setting_id, setting.kind, train_nmse=train_nmse, test_nmse=test_nmse)
    try:
        _unroll_row(setting, baseline, model, cfg, row)
    except DmpError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s failed: %s", setting.setting_id, row.error)
    return row


def train_multi(settings, demos, baseline, cfg, label):
    """One network over the demonstrations of all ``settings`` (split by demonstration)."""
    all_demos = [d for s in settings for d in demos[s.setting_id]]
    ds = assemble(all_demos, baseline, split_ratio=cfg.data.split_ratio, mode=cfg.data.multi_split_mode,
                  seed=_split_seed(cfg, label), gravity=cfg.scene.gravity)
    model = train_lm(ds, cfg.train_config(label))
    return model, ds


def run_multi_setting(settings, demos, baseline, cfg, label="multi", model=None, flagged=False,
                      workers=None):
    """Train one network across ``settings`` (unless ``model`` is given) and unroll it on each.

    ``flagged`` marks comparison runs, such as one network across all
    obstacle kinds, which are reported without acceptance gates.
    """
    workers = cfg.workers if workers is None else workers
    model_nmse = None
    per_setting = {}
    if model is None:
        model, ds = train_multi(settings, demos, baseline, cfg, label)
        pred = forward(model, ds.X)
        model_nmse = {
            "train": _nmse_quiet(pred[ds.train], ds.Ct[ds.train]),
            "test": _nmse_quiet(pred[ds.test], ds.Ct[ds.test]) if np.any(ds.test) else math.nan,
        }
        model.train_meta["test_nmse"] = model_nmse["test"]
        for sid in np.unique(ds.setting_ids):
            m = ds.setting_ids == sid
            tr, te = m & ds.train, m & ds.test
            per_setting[sid] = (
                _nmse_quiet(pred[tr], ds.Ct[tr]) if np.any(tr) else math.nan,
                _nmse_quiet(pred[te], ds.Ct[te]) if np.any(te) else math.nan,
            )
    elif model.train_meta:
        model_nmse = {"train": model.train_meta.get("final_nmse", math.nan),
                      "test": model.train_meta.get("test_nmse", math.nan)}
    tasks = [(s, baseline, model, cfg, *per_setting.get(s.setting_id, (math.nan, math.nan)))
             for s in settings]
    rows = _map(_unroll_task, tasks, workers)
    report = EvalReport("multi", label, rows, model_nmse=model_nmse, flagged=flagged,
                        unsafe=not cfg.guards.to_guards().enabled)
    if flagged:
        report.notes.append("comparison run: no acceptance gates")
    return report, model


def run_unseen(model, grid, baseline, cfg, label="unseen", workers=None):
    """Unroll a kind-trained network on unseen placements, next to the uncoupled baseline."""
    workers = cfg.workers if workers is None else workers
    tasks = [(s, baseline, model, cfg, math.nan, math.nan) for s in grid]
    rows = _map(_unroll_task, tasks, workers)
    return EvalReport("unseen", label, rows, unsafe=not cfg.guards.to_guards().enabled), model
