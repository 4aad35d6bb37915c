"""Versioned on-disk artifacts.

Trajectories and datasets are delimited text with a one-line JSON header
comment; primitives, obstacle settings, models and manifests are JSON.
Floats are written with 17 significant digits so every artifact round-trips
exactly and identical inputs give byte-identical files. Writes go through a
temporary file that is renamed into place, so a failed write never leaves a
partial artifact behind.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demos import Demonstration, finite_differences
from .dmp import Dmp, DmpParams
from .errors import ArtifactError
from .network import SIZES, CouplingModel, n_params, pack
from .obstacles import ObstacleSetting

FORMAT_VERSION = 1
TRAJ_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az")
_FLOAT = "%.17g"
_UNSAFE_STAMP = "# UNSAFE"
UNROLL_COLUMNS = ("t", "s", "x", "y", "z", "raw_cx", "raw_cy", "raw_cz", "cx", "cy", "cz", "sdist")


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_json(path, obj):
    return _atomic_write(path, _dumps(obj))


def read_json(path, kind=None):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"{path}: missing artifact") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"{path}: corrupt JSON ({exc})") from None
    if kind is not None:
        _check_header(obj, kind, path)
    return obj


def _check_header(obj, kind, path):
    if not isinstance(obj, dict) or obj.get("type") != kind:
        raise ArtifactError(f"{path}: not a {kind} artifact")
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported {kind} format version {version!r}")


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def tree_hash(root, pattern="**/*"):
    """Hash of every file below ``root`` (relative names and contents), in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.glob(pattern) if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(file_hash(p).encode())
    return h.hexdigest()


# -- primitives ---------------------------------------------------------------

def dmp_to_dict(dmp):
    return {
        "type": "dmp",
        "format_version": FORMAT_VERSION,
        "params": dmp.params.to_dict(),
        "weights": dmp.weights.tolist(),
        "x0_demo": dmp.x0_demo.tolist(),
        "g_demo": dmp.g_demo.tolist(),
        "tau_demo": dmp.tau_demo,
        "fit_nmse": None if dmp.fit_nmse is None else np.asarray(dmp.fit_nmse).tolist(),
    }


def dmp_from_dict(d, path="<dmp>"):
    _check_header(d, "dmp", path)
    try:
        params = DmpParams.from_dict(d["params"])
        fit = d.get("fit_nmse")
        return Dmp(params, np.array(d["weights"], float), d["x0_demo"], d["g_demo"], d["tau_demo"],
                   None if fit is None else np.array(fit, float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: invalid primitive ({exc})") from None


def save_dmp(path, dmp):
    return write_json(path, dmp_to_dict(dmp))


def load_dmp(path):
    return dmp_from_dict(read_json(path), path)


# -- obstacle settings ----------------------------------------------------------

def setting_to_dict(setting):
    d = {
        "type": "setting",
        "format_version": FORMAT_VERSION,
        "setting_id": setting.setting_id,
        "kind": setting.kind,
        "center": setting.center.tolist(),
        "orientation": setting.orientation.tolist(),
        "dims": list(setting.dims),
        "start": setting.start.tolist(),
        "goal": setting.goal.tolist(),
        "density": setting.density,
        "seed": setting.seed,
    }
    if setting.explicit_cloud:
        d["cloud"] = setting.cloud.tolist()
    return d


def setting_from_dict(d, path="<setting>"):
    _check_header(d, "setting", path)
    try:
        return ObstacleSetting(
            kind=d["kind"], center=d["center"], dims=tuple(d["dims"]), start=d["start"], goal=d["goal"],
            orientation=np.array(d["orientation"], float), cloud=d.get("cloud"),
            density=float(d["density"]), seed=int(d["seed"]), setting_id=d["setting_id"],
        )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"{path}: invalid obstacle setting ({exc})") from None


def save_setting(path, setting):
    return write_json(path, setting_to_dict(setting))


def load_setting(path):
    return setting_from_dict(read_json(path), path)


# -- coupling models -------------------------------------------------------------

def model_to_dict(model):
    layers = [{"W": W.tolist(), "b": b.tolist()} for W, b in model.layers]
    return {
        "type": "model",
        "format_version": FORMAT_VERSION,
        "architecture": {"sizes": list(SIZES), "activations": ["relu", "relu", "sigmoid"]},
        "layers": layers,
        "in_mean": model.in_mean.tolist(),
        "in_std": model.in_std.tolist(),
        "out_lo": model.out_lo.tolist(),
        "out_hi": model.out_hi.tolist(),
        "train_meta": model.train_meta,
    }


def model_from_dict(d, path="<model>"):
    _check_header(d, "model", path)
    sizes = tuple(d.get("architecture", {}).get("sizes", ()))
    if sizes != SIZES:
        raise ArtifactError(f"{path}: architecture {sizes} does not match {SIZES}")
    try:
        layers = []
        for k, layer in enumerate(d["layers"]):
            W = np.array(layer["W"], float)
            b = np.array(layer["b"], float)
            if W.shape != (SIZES[k + 1], SIZES[k]) or b.shape != (SIZES[k + 1],):
                raise ArtifactError(f"{path}: layer {k} has shape {W.shape}/{b.shape}")
            layers.append((W, b))
        if len(layers) != len(SIZES) - 1:
            raise ArtifactError(f"{path}: expected {len(SIZES) - 1} layers, got {len(layers)}")
        theta = pack(layers)
        if theta.shape != (n_params(),):
            raise ArtifactError(f"{path}: parameter count mismatch")
        return CouplingModel(theta, d["in_mean"], d["in_std"], d["out_lo"], d["out_hi"],
                             train_meta=d.get("train_meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: invalid model ({exc})") from None


def save_model(path, model):
    return write_json(path, model_to_dict(model))


def load_model(path):
    return model_from_dict(read_json(path), path)


# -- delimited text ------------------------------------------------------------

def _table_text(header, names, rows):
    buf = _io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write(",".join(names) + "\n")
    for row in rows:
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _read_table(path, kind):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
            if first.startswith(_UNSAFE_STAMP):
                first = fh.readline()
            names = fh.readline().strip().split(",")
            body = fh.read()
    except FileNotFoundError:
        raise ArtifactError(f"{path}: missing artifact") from None
    if not first.startswith("# "):
        raise ArtifactError(f"{path}: missing header line")
    try:
        header = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: corrupt header ({exc})") from None
    _check_header(header, kind, path)
    lines = [ln.split(",") for ln in body.splitlines() if ln.strip()]
    if any(len(ln) != len(names) for ln in lines):
        raise ArtifactError(f"{path}: ragged rows")
    return header, names, lines


def _fmt(values):
    return [_FLOAT % v for v in values]


def save_trajectory(path, demo):
    """Write a demonstration: header with metadata, then ``t,x,y,z,vx..az`` rows."""
    header = {
        "type": "trajectory",
        "format_version": FORMAT_VERSION,
        "demo_id": demo.demo_id,
        "tau": demo.tau,
        "start": demo.start.tolist(),
        "goal": demo.goal.tolist(),
        "setting_id": None if demo.setting is None else demo.setting.setting_id,
        "meta": demo.meta,
    }
    data = np.column_stack([demo.t, demo.x, demo.xd, demo.xdd])
    return _atomic_write(path, _table_text(header, TRAJ_COLUMNS, (_fmt(r) for r in data)))


def load_trajectory(path, setting=None):
    """Read a trajectory file.

    Only ``t,x,y,z`` are required; missing velocity or acceleration columns
    are recomputed by finite differences. A demonstration recorded with its
    obstacle displaced (``obstacle_offset`` in its metadata) is attached to
    ``setting`` moved by that offset.
    """
    header, names, lines = _read_table(path, "trajectory")
    missing = [c for c in TRAJ_COLUMNS[:4] if c not in names]
    if missing:
        raise ArtifactError(f"{path}: missing columns {missing}")
    try:
        data = np.array(lines, dtype=float).reshape(len(lines), len(names))
    except ValueError as exc:
        raise ArtifactError(f"{path}: non-numeric entry ({exc})") from None
    col = {n: data[:, i] for i, n in enumerate(names)}
    t = col["t"]
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise ArtifactError(f"{path}: timestamps must be strictly increasing")
    x = np.column_stack([col[c] for c in ("x", "y", "z")])
    xd, xdd = finite_differences(t, x)
    if all(c in col for c in ("vx", "vy", "vz")):
        xd = np.column_stack([col[c] for c in ("vx", "vy", "vz")])
    if all(c in col for c in ("ax", "ay", "az")):
        xdd = np.column_stack([col[c] for c in ("ax", "ay", "az")])
    if setting is not None and header.get("setting_id") not in (None, setting.setting_id):
        raise ArtifactError(f"{path}: recorded in {header['setting_id']}, not {setting.setting_id}")
    offset = header.get("meta", {}).get("obstacle_offset")
    if setting is not None and offset is not None:
        setting = setting.moved(offset)
    return Demonstration(t=t, x=x, xd=xd, xdd=xdd, tau=header["tau"], start=header["start"],
                         goal=header["goal"], setting=setting, demo_id=header["demo_id"],
                         meta=header.get("meta", {}))


FEATURE_COLUMNS = tuple(f"f{i}" for i in range(SIZES[0]))
TARGET_COLUMNS = ("cx", "cy", "cz")


def save_dataset(path, dataset):
    from .features import FEATURE_NAMES

    header = {"type": "dataset", "format_version": FORMAT_VERSION, "rows": len(dataset),
              "features": list(FEATURE_NAMES)}
    names = FEATURE_COLUMNS + TARGET_COLUMNS + ("train", "demo_id", "setting_id")
    rows = (_fmt(x) + _fmt(c) + [str(int(tr)), d, s]
            for x, c, tr, d, s in zip(dataset.X, dataset.Ct, dataset.train, dataset.demo_ids, dataset.setting_ids))
    return _atomic_write(path, _table_text(header, names, rows))


def load_dataset(path):
    from .coupling import CouplingDataset

    header, names, lines = _read_table(path, "dataset")
    n_num = len(FEATURE_COLUMNS) + len(TARGET_COLUMNS)
    if tuple(names[:n_num]) != FEATURE_COLUMNS + TARGET_COLUMNS:
        raise ArtifactError(f"{path}: unexpected columns")
    if len(lines) != header.get("rows"):
        raise ArtifactError(f"{path}: expected {header.get('rows')} rows, found {len(lines)}")
    try:
        num = np.array([ln[:n_num] for ln in lines], dtype=float).reshape(len(lines), n_num)
    except ValueError as exc:
        raise ArtifactError(f"{path}: non-numeric entry ({exc})") from None
    return CouplingDataset(
        X=num[:, :SIZES[0]], Ct=num[:, SIZES[0]:],
        train=np.array([ln[n_num] == "1" for ln in lines], dtype=bool),
        demo_ids=np.array([ln[n_num + 1] for ln in lines], dtype=str),
        setting_ids=np.array([ln[n_num + 2] for ln in lines], dtype=str),
    )


def save_unroll(path, result):
    """Write an unroll: world positions, local coupling before and after the guards, signed distance."""
    header = {"type": "unroll", "format_version": FORMAT_VERSION, "tau": result.tau,
              "goal": np.asarray(result.goal).tolist(), "unsafe": bool(result.unsafe),
              "backend": result.meta.get("backend"),
              "frame": None if result.frame is None else result.frame.to_dict()}
    names = UNROLL_COLUMNS
    n = len(result.t)
    raw = result.ct_raw if result.ct_raw is not None else np.zeros((n, 3))
    ct = result.ct if result.ct is not None else np.zeros((n, 3))
    sd = result.sdist if result.sdist is not None else np.full(n, np.nan)
    data = np.column_stack([result.t, result.s, result.x, raw, ct, sd])
    text = _table_text(header, names, (_fmt(r) for r in data))
    if result.unsafe:
        text = _UNSAFE_STAMP + ": output guards disabled\n" + text
    return _atomic_write(path, text)


@dataclass
class StoredUnroll:
    """An unroll read back from disk; positions in world coordinates."""

    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    ct_raw: np.ndarray
    ct: np.ndarray
    sdist: np.ndarray
    tau: float
    goal: np.ndarray
    unsafe: bool
    header: dict


def load_unroll(path):
    """Read a file written by :func:`save_unroll`."""
    header, names, lines = _read_table(path, "unroll")
    if tuple(names) != UNROLL_COLUMNS:
        raise ArtifactError(f"{path}: unexpected columns {names}")
    try:
        data = np.array(lines, dtype=float).reshape(len(lines), len(names))
    except ValueError as exc:
        raise ArtifactError(f"{path}: non-numeric entry ({exc})") from None
    return StoredUnroll(t=data[:, 0], s=data[:, 1], x=data[:, 2:5], ct_raw=data[:, 5:8], ct=data[:, 8:11],
                        sdist=data[:, 11], tau=header["tau"], goal=np.array(header["goal"]),
                        unsafe=bool(header["unsafe"]), header=header)
