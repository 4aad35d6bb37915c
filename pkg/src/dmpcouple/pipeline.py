"""End-to-end steps shared by the command line and the acceptance suite:
dataset generation, baseline fitting, training and evaluation, each reading
and writing versioned artifacts under the run's output directory.
"""

from __future__ import annotations

import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import PROTOCOLS, RunConfig, substream
from .errors import ArtifactError, ConfigError
from .harness import run_multi_setting, run_per_setting, run_unseen
from .oracle import (
    OracleParams,
    Scene,
    demo_durations,
    gen_avoidance,
    gen_baseline,
    placement_offset,
    training_settings,
    unseen_grid,
)
from .rollout import fit_baseline

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TIMING = "timing.json"


def scene_of(cfg):
    s = cfg.scene
    return Scene(tuple(s.start), tuple(s.goal), s.tau, tuple(s.gravity))


def oracle_of(cfg):
    return OracleParams(gamma=cfg.oracle.gamma, beta=cfg.oracle.beta, bias=cfg.oracle.bias,
                        soften=cfg.oracle.soften)


def _rel(path, root):
    return Path(path).relative_to(root).as_posix()


@dataclass
class Dataset:
    """A loaded dataset directory."""

    root: Path
    manifest: dict
    baseline_demos: list
    settings: dict = field(default_factory=dict)   # kind -> list of settings
    demos: dict = field(default_factory=dict)      # setting id -> nominal-placement demos
    placed: dict = field(default_factory=dict)     # setting id -> demos with displaced obstacles
    unseen: dict = field(default_factory=dict)     # kind -> list of settings

    def multi_demos(self):
        """Demonstrations per setting used by the one-network-per-kind runs."""
        return {sid: self.placed.get(sid) or demos for sid, demos in self.demos.items()}


def baseline_demos(cfg):
    sc = scene_of(cfg)
    taus = demo_durations(sc.tau, cfg.data.demos_per_setting, cfg.data.duration_spread)
    return [gen_baseline(sc.start, sc.goal, tau, rate=cfg.data.rate,
                         jitter_seed=substream(cfg.seed, "jitter", i), sigma=cfg.data.jitter,
                         demo_id=f"baseline-{i:02d}")
            for i, tau in enumerate(taus)]


def avoidance_demo(cfg, oracle_dmp, setting, index, tau, placed=False):
    """Demonstration ``index`` of ``setting``.

    Nominal demonstrations see the obstacle where the setting puts it. In a
    ``placed`` series the first one does too and the others see it displaced
    by :func:`placement_offset` (``cfg.data.placement_jitter``), recorded in
    the demonstration's metadata.
    """
    demo_id = f"{setting.setting_id}-{'p' if placed else ''}{index:02d}"
    offset = np.zeros(3)
    if placed and index > 0:
        offset = placement_offset(setting, cfg.data.placement_jitter,
                                  substream(cfg.seed, "placement", demo_id), cfg.scene.gravity)
    placed = setting.moved(offset) if np.any(offset) else setting
    d = gen_avoidance(oracle_dmp, placed, oracle_of(cfg), tau=tau, rate=cfg.data.rate,
                      gravity=cfg.scene.gravity, demo_id=demo_id)
    if np.any(offset):
        d.meta["obstacle_offset"] = offset.tolist()
    return d


def generate(cfg, out=None):
    """Write the synthetic dataset of ``cfg`` and return its manifest.

    Layout: ``baseline/*.csv`` demonstrations without obstacle,
    ``settings/<id>.json``, ``demos/<id>/*.csv`` (nominal placement) and
    ``placed/<id>/*.csv`` (displaced obstacles) per training setting,
    ``unseen/<id>.json`` for the unseen grids, and ``manifest.json``.
    An existing dataset directory is replaced; on failure nothing is left behind.
    """
    root = Path(out) if out is not None else cfg.dataset_dir
    log.info("generating dataset in %s (seed %d)", root, cfg.seed)
    tmp = root.with_name(root.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        manifest = _generate_into(cfg, tmp)
        if root.exists():
            shutil.rmtree(root)
        tmp.rename(root)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    log.info("dataset %s: %s", manifest["dataset_hash"][:12], manifest["counts"])
    return manifest


def _generate_into(cfg, root):
    sc = scene_of(cfg)
    params = oracle_of(cfg)
    dmp_params = cfg.dmp_params()
    base = baseline_demos(cfg)
    for d in base:
        io.save_trajectory(root / "baseline" / f"{d.demo_id}.csv", d)
    oracle_dmp = fit_baseline(base, dmp_params, gravity=sc.gravity)
    taus = demo_durations(sc.tau, cfg.data.demos_per_setting, cfg.data.duration_spread)
    placed_taus = demo_durations(sc.tau, cfg.data.multi_demos_per_setting, cfg.data.duration_spread)
    counts = {}
    for kind in cfg.data.kinds:
        cloud_seed = 0  # fixed sampling seed, recorded in every setting file
        settings = training_settings(kind, sc, cfg.data.density, cloud_seed)
        for s in settings:
            io.save_setting(root / "settings" / f"{s.setting_id}.json", s)
            for i, tau in enumerate(taus):
                d = avoidance_demo(cfg, oracle_dmp, s, i, tau)
                io.save_trajectory(root / "demos" / s.setting_id / f"{d.demo_id}.csv", d)
            for i, tau in enumerate(placed_taus):
                d = avoidance_demo(cfg, oracle_dmp, s, i, tau, placed=True)
                io.save_trajectory(root / "placed" / s.setting_id / f"{d.demo_id}.csv", d)
        grid = unseen_grid(kind, sc, cfg.data.density, cloud_seed)
        for s in grid:
            io.save_setting(root / "unseen" / f"{s.setting_id}.json", s)
        counts[kind] = {"settings": len(settings), "demos": len(settings) * len(taus),
                       "placed": len(settings) * len(placed_taus), "unseen": len(grid)}
    files = {_rel(p, root): io.file_hash(p) for p in sorted(root.rglob("*")) if p.is_file()}
    manifest = {
        "type": "dataset-manifest",
        "format_version": io.FORMAT_VERSION,
        "seed": cfg.seed,
        "oracle": {"gamma": params.gamma, "beta": params.beta, "bias": params.bias, "soften": params.soften},
        "scene": cfg.to_dict()["scene"],
        "data": cfg.to_dict()["data"],
        "baseline_demos": len(base),
        "counts": counts,
        "files": files,
        "dataset_hash": _files_hash(files),
    }
    io.write_json(root / MANIFEST, manifest)
    return manifest


def _files_hash(files):
    import hashlib

    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode())
        h.update(files[name].encode())
    return h.hexdigest()


def load_dataset_dir(root, kinds=None, verify=True):
    root = Path(root)
    manifest = io.read_json(root / MANIFEST, "dataset-manifest")
    if verify:
        for name, digest in manifest["files"].items():
            p = root / name
            if not p.is_file():
                raise ArtifactError(f"{p}: listed in the manifest but missing")
            if io.file_hash(p) != digest:
                raise ArtifactError(f"{p}: content does not match the manifest")
    kinds = tuple(kinds or manifest["counts"].keys())
    missing = [k for k in kinds if k not in manifest["counts"]]
    if missing:
        raise ArtifactError(f"{root}: no data for obstacle kind(s) {missing}")
    ds = Dataset(root, manifest, [io.load_trajectory(p) for p in sorted((root / "baseline").glob("*.csv"))])
    for kind in kinds:
        settings = [io.load_setting(p) for p in sorted((root / "settings").glob(f"{kind}-*.json"))]
        ds.settings[kind] = settings
        for s in settings:
            ds.demos[s.setting_id] = [io.load_trajectory(p, setting=s)
                                      for p in sorted((root / "demos" / s.setting_id).glob("*.csv"))]
            ds.placed[s.setting_id] = [io.load_trajectory(p, setting=s)
                                       for p in sorted((root / "placed" / s.setting_id).glob("*.csv"))]
        ds.unseen[kind] = [io.load_setting(p) for p in sorted((root / "unseen").glob(f"unseen-{kind}-*.json"))]
    return ds


def fit_baseline_step(cfg, dataset=None):
    dataset = dataset or load_dataset_dir(cfg.dataset_dir, kinds=())
    dmp = fit_baseline(dataset.baseline_demos, cfg.dmp_params(), gravity=cfg.scene.gravity)
    io.save_dmp(cfg.baseline_path, dmp)
    log.info("baseline fitted to %d demonstrations, forcing fit NMSE %s", len(dataset.baseline_demos), dmp.fit_nmse)
    return dmp


def _kinds(cfg, obstacle):
    if obstacle in (None, "all"):
        return tuple(cfg.data.kinds)
    if obstacle not in cfg.data.kinds:
        raise ConfigError(f"obstacle kind {obstacle!r} not in this run's kinds {list(cfg.data.kinds)}")
    return (obstacle,)


def _model_path(cfg, protocol, name):
    return cfg.model_dir / protocol / f"{name}.json"


def train_step(cfg, protocol="multi", obstacle=None):
    """Train and save the networks of ``protocol``; returns ``{name: model}``."""
    if protocol not in ("per-setting", "multi"):
        raise ConfigError(f"training protocol must be per-setting or multi, got {protocol!r}")
    kinds = _kinds(cfg, obstacle)
    data = load_dataset_dir(cfg.dataset_dir, kinds)
    baseline = io.load_dmp(cfg.baseline_path)
    from .harness import train_multi
    from .network import train_lm
    from .coupling import assemble
    from .harness import _split_seed

    models = {}
    for kind in kinds:
        if protocol == "multi":
            demos = data.multi_demos()
            model, _ = train_multi(data.settings[kind], demos, baseline, cfg, kind)
            models[kind] = model
        else:
            for s in data.settings[kind]:
                ds = assemble(data.demos[s.setting_id], baseline, cfg.data.split_ratio, "row",
                              _split_seed(cfg, s.setting_id), cfg.scene.gravity)
                models[s.setting_id] = train_lm(ds, cfg.train_config(s.setting_id))
    for name, model in models.items():
        io.save_model(_model_path(cfg, protocol, name), model)
        log.info("%s network %s: train NMSE %.4g, %d iterations (%s)", protocol, name,
                 model.train_meta["final_nmse"], model.train_meta["epochs"], model.train_meta["stop_reason"])
    return models


def evaluate(cfg, protocol, obstacle=None, mixed=False, write=True):
    """Run one protocol for the selected obstacle kinds; returns the list of reports.

    ``unseen`` reuses the kind-trained networks under ``models/multi`` when
    present and trains them otherwise. ``mixed`` adds the flagged comparison
    run of one network over every kind (``multi`` only).
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    kinds = _kinds(cfg, obstacle)
    data = load_dataset_dir(cfg.dataset_dir, kinds)
    baseline = io.load_dmp(cfg.baseline_path)
    reports = []
    if protocol == "per-setting":
        for kind in kinds:
            report, models = run_per_setting(data.settings[kind], data.demos, baseline, cfg,
                                             label=f"per-setting-{kind}")
            reports.append(report)
            if write:
                for sid, m in models.items():
                    if m is not None:
                        io.save_model(_model_path(cfg, "per-setting", sid), m)
    elif protocol == "multi":
        demos = data.multi_demos()
        for kind in kinds:
            report, model = run_multi_setting(data.settings[kind], demos, baseline, cfg, label=f"multi-{kind}")
            reports.append(report)
            if write:
                io.save_model(_model_path(cfg, "multi", kind), model)
        if mixed:
            every = [s for k in kinds for s in data.settings[k]]
            report, model = run_multi_setting(every, demos, baseline, cfg, label="multi-mixed", flagged=True)
            reports.append(report)
            if write:
                io.save_model(_model_path(cfg, "multi", "mixed"), model)
    else:
        demos = data.multi_demos()
        for kind in kinds:
            path = _model_path(cfg, "multi", kind)
            if path.exists():
                model = io.load_model(path)
            else:
                from .harness import train_multi

                model, _ = train_multi(data.settings[kind], demos, baseline, cfg, kind)
                if write:
                    io.save_model(path, model)
            report, _ = run_unseen(model, data.unseen[kind], baseline, cfg, label=f"unseen-{kind}")
            reports.append(report)
    for r in reports:
        a = r.aggregates()
        log.info("%s: %d settings, %d failures, %d hits, %d converged, test NMSE max %.4g",
                 r.label, a["settings"], a["failures"], a["hits"], a["converged"], a["test_nmse_max"])
    if write:
        for r in reports:
            r.write(cfg.report_dir, cfg)
        write_run_manifest(cfg, data)
    return reports


def write_run_manifest(cfg, data):
    """Seeds, config hash, dataset hash and the hash of every report and model written so far."""
    out = cfg.out_dir
    files = {}
    for sub in (cfg.report_dir, cfg.model_dir):
        if sub.exists():
            for p in sorted(sub.rglob("*")):
                if p.is_file():
                    files[_rel(p, out)] = io.file_hash(p)
    if cfg.baseline_path.exists():
        files[_rel(cfg.baseline_path, out)] = io.file_hash(cfg.baseline_path)
    manifest = {
        "type": "run-manifest",
        "format_version": io.FORMAT_VERSION,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "dataset_hash": data.manifest["dataset_hash"],
        "files": files,
    }
    io.write_json(out / "run-manifest.json", manifest)
    return manifest


def run_all(cfg, protocols=PROTOCOLS, obstacle=None, mixed=False):
    """gen-demos, fit-baseline, then ``evaluate`` for each protocol.

    The wall-clock time of the whole run is written to ``timing.json``.
    """
    started = time.perf_counter()
    generate(cfg)
    fit_baseline_step(cfg)
    reports = []
    for p in protocols:
        reports += evaluate(cfg, p, obstacle, mixed=mixed and p == "multi")
    seconds = time.perf_counter() - started
    io.write_json(cfg.out_dir / TIMING, {"type": "run-timing", "format_version": io.FORMAT_VERSION,
                                         "seconds": seconds, "protocols": list(protocols)})
    log.info("run finished in %.1f s", seconds)
    return reports
