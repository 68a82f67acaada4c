"""On-disk formats, embedding providers and dataset validation.

Every JSON document is written with Python's shortest round-trip float repr,
so ``load(save(x)) == x`` holds bit for bit.

Dataset directory layout::

    <root>/index.json                 {"schema_version": ..., "scenes": [ids]}
    <root>/scenes/<id>/cloud.ply      ASCII PLY, x y z per vertex
    <root>/scenes/<id>/calib.json     {"P": 3x4, "width": W, "height": H}
    <root>/scenes/<id>/boxes2d.json   {"scene_id", "boxes": [{x1, y1, x2, y2, score?, phrase?}]}
    <root>/scenes/<id>/gt.json        {"scene_id", "boxes": [{center, size, yaw, class}]}
"""
from __future__ import annotations

import json
import math
import socket
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evaluation import LabeledBox3D
from .losses import MODALITIES, FeatureVec
from .scene import Box2D, Box3D, CameraModel, ClassVocabulary, PointCloud, Scene

SCHEMA_VERSION = "1.0"
INDEX_FILE = "index.json"
SCENES_DIR = "scenes"
CLOUD_FILE = "cloud.ply"
CALIB_FILE = "calib.json"
BOXES2D_FILE = "boxes2d.json"
GT_FILE = "gt.json"


class ManifestError(ValueError):
    """Base class for malformed or inconsistent input documents."""


class MalformedDocumentError(ManifestError):
    pass


class MissingIdError(ManifestError, KeyError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"unknown id(s): {', '.join(self.ids)}")

    def __str__(self):
        return self.args[0]


class DimensionMismatchError(ManifestError):
    pass


class InvalidValueError(ManifestError):
    pass


class ProviderTimeoutError(ManifestError, TimeoutError):
    pass


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MalformedDocumentError(f"{path}: cannot read ({e.strerror})") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(f"{path}: invalid JSON ({e})") from e


def _require(doc, key, where, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise MalformedDocumentError(f"{where}: missing field {key!r}")
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise MalformedDocumentError(f"{where}: field {key!r} has wrong type")
    return val


def _num(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise MalformedDocumentError(f"{where}: expected a number, got {x!r}")
    if not math.isfinite(x):
        raise InvalidValueError(f"{where}: non-finite value")
    return float(x)


def _vec(x, n, where):
    if not isinstance(x, list) or len(x) != n:
        raise MalformedDocumentError(f"{where}: expected a list of {n} numbers")
    return [_num(v, where) for v in x]


# ------------------------------------------------------------------ clouds

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path) -> PointCloud:
    """Read vertices from an ASCII or binary PLY. Only x, y, z are kept."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedDocumentError(f"{path}: not a PLY file")
    nl = data.find(b"\n", end)
    body = data[nl + 1:] if nl >= 0 else b""
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # [name, count, [(type, name)]]
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise MalformedDocumentError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[-1]))
            else:
                elements[-1][2].append((tok[1], tok[2]))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MalformedDocumentError(f"{path}: unsupported PLY format {fmt!r}")
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise MalformedDocumentError(f"{path}: no vertex element")
    vi = names.index("vertex")
    _, n, props = elements[vi]
    pnames = [p[1] for p in props]
    for axis in "xyz":
        if axis not in pnames:
            raise MalformedDocumentError(f"{path}: vertex property {axis!r} missing")

    if fmt == "ascii":
        lines = body.decode("ascii").splitlines()
        skip = sum(e[1] for e in elements[:vi])
        rows = lines[skip:skip + n]
        if len(rows) < n:
            raise MalformedDocumentError(f"{path}: expected {n} vertices, found {len(rows)}")
        cols = [pnames.index(a) for a in "xyz"]
        try:
            pts = np.array([[float(r.split()[c]) for c in cols] for r in rows], dtype=np.float64)
        except (ValueError, IndexError) as e:
            raise MalformedDocumentError(f"{path}: bad vertex row ({e})") from e
        return _cloud(pts.reshape(-1, 3), path)

    if vi != 0 or any(p[0] == "list" for p in props):
        raise MalformedDocumentError(f"{path}: binary PLY must start with a fixed-size vertex element")
    order = "<" if fmt == "binary_little_endian" else ">"
    dtype = np.dtype([(name, order + _PLY_TYPES[t]) for t, name in props])
    if len(body) < n * dtype.itemsize:
        raise MalformedDocumentError(f"{path}: truncated binary body")
    arr = np.frombuffer(body, dtype=dtype, count=n)
    return _cloud(np.column_stack([arr[a].astype(np.float64) for a in "xyz"]), path)


def _cloud(pts, path) -> PointCloud:
    try:
        return PointCloud(pts)
    except ValueError as e:
        raise InvalidValueError(f"{path}: {e}") from e


def write_ply(path, cloud: PointCloud) -> None:
    header = ("ply\nformat ascii 1.0\n"
              f"element vertex {len(cloud)}\n"
              "property float x\nproperty float y\nproperty float z\nend_header\n")
    # "float" is the conventional type name; values carry full double precision
    body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist())
    Path(path).write_text(header + body, encoding="ascii")


def read_xyz(path) -> PointCloud:
    rows = []
    for k, line in enumerate(Path(path).read_text().splitlines()):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) < 3:
            raise MalformedDocumentError(f"{path}:{k + 1}: expected 'x y z'")
        try:
            rows.append([float(t) for t in tok[:3]])
        except ValueError as e:
            raise MalformedDocumentError(f"{path}:{k + 1}: {e}") from e
    return _cloud(np.array(rows, dtype=np.float64).reshape(-1, 3), path)


def write_xyz(path, cloud: PointCloud) -> None:
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist()))


def read_cloud(path) -> PointCloud:
    return read_xyz(path) if str(path).endswith(".xyz") else read_ply(path)


# ------------------------------------------------------------- calibration

def camera_from_dict(doc, where="calibration") -> CameraModel:
    P = _require(doc, "P", where, list)
    if len(P) != 3 or not all(isinstance(r, list) and len(r) == 4 for r in P):
        raise MalformedDocumentError(f"{where}: field 'P' must be 3 rows of 4 numbers")
    rows = [_vec(r, 4, f"{where}: P") for r in P]
    w = _require(doc, "width", where)
    h = _require(doc, "height", where)
    if isinstance(w, bool) or isinstance(h, bool) or not isinstance(w, int) or not isinstance(h, int):
        raise MalformedDocumentError(f"{where}: width/height must be integers")
    try:
        return CameraModel(np.array(rows), w, h)
    except ValueError as e:
        raise InvalidValueError(f"{where}: {e}") from e


def camera_to_dict(cam: CameraModel) -> dict:
    return {"P": cam.P.tolist(), "width": int(cam.width), "height": int(cam.height)}


def read_calibration(path) -> CameraModel:
    return camera_from_dict(_load_json(path), str(path))


def write_calibration(path, cam: CameraModel) -> None:
    _dump(camera_to_dict(cam), path)


# ---------------------------------------------------------------- 2D boxes

def box2d_from_dict(d, where) -> Box2D:
    vals = [_num(_require(d, k, where), f"{where}.{k}") for k in ("x1", "y1", "x2", "y2")]
    score = d.get("score")
    if score is not None:
        score = _num(score, f"{where}.score")
    phrase = d.get("phrase")
    if phrase is not None and not isinstance(phrase, str):
        raise MalformedDocumentError(f"{where}.phrase must be a string")
    try:
        return Box2D(*vals, score=score, phrase=phrase)
    except ValueError as e:
        raise InvalidValueError(f"{where}: {e}") from e


def box2d_to_dict(b: Box2D) -> dict:
    d = {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}
    if b.score is not None:
        d["score"] = b.score
    if b.phrase is not None:
        d["phrase"] = b.phrase
    return d


def read_boxes2d(path):
    """Return ``(scene_id, [Box2D])``."""
    doc = _load_json(path)
    where = str(path)
    sid = _require(doc, "scene_id", where, str)
    boxes = _require(doc, "boxes", where, list)
    return sid, [box2d_from_dict(b, f"{where}: boxes[{k}]") for k, b in enumerate(boxes)]


def write_boxes2d(path, scene_id: str, boxes: Sequence[Box2D]) -> None:
    _dump({"scene_id": scene_id, "boxes": [box2d_to_dict(b) for b in boxes]}, path)


# ---------------------------------------------------------------- 3D boxes

def labeled_box_from_dict(d, where) -> LabeledBox3D:
    center = _vec(_require(d, "center", where), 3, f"{where}.center")
    size = _vec(_require(d, "size", where), 3, f"{where}.size")
    yaw = _num(_require(d, "yaw", where), f"{where}.yaw")
    cat = _require(d, "class", where, str)
    score = d.get("score")
    if score is not None:
        score = _num(score, f"{where}.score")
    try:
        return LabeledBox3D(Box3D(tuple(center), tuple(size), yaw), cat, score)
    except ValueError as e:
        raise InvalidValueError(f"{where}: {e}") from e


def labeled_box_to_dict(b: LabeledBox3D) -> dict:
    d = {"center": list(b.box.center), "size": list(b.box.size), "yaw": b.box.yaw, "class": b.category}
    if b.score is not None:
        d["score"] = b.score
    return d


def read_boxes3d(path):
    """Return ``(scene_id, [LabeledBox3D])``."""
    doc = _load_json(path)
    where = str(path)
    sid = _require(doc, "scene_id", where, str)
    boxes = _require(doc, "boxes", where, list)
    return sid, [labeled_box_from_dict(b, f"{where}: boxes[{k}]") for k, b in enumerate(boxes)]


def write_boxes3d(path, scene_id: str, boxes: Sequence[LabeledBox3D]) -> None:
    _dump({"scene_id": scene_id, "boxes": [labeled_box_to_dict(b) for b in boxes]}, path)


def load_box_collection(path, gt: bool = False) -> dict:
    """Load 3D box files keyed by scene id.

    ``path`` may be a single box file, a directory of ``*.json`` box files, or
    a dataset root (``gt=True`` reads each scene's ground truth from it).
    """
    path = Path(path)
    if path.is_file():
        files = [path]
    elif (path / INDEX_FILE).is_file():
        name = GT_FILE if gt else None
        if name is None:
            raise MalformedDocumentError(f"{path}: dataset root given where prediction files were expected")
        files = [path / SCENES_DIR / sid / name for sid in read_index(path)]
    elif path.is_dir():
        files = sorted(path.glob("*.json"))
    else:
        raise MalformedDocumentError(f"{path}: no such file or directory")
    out = {}
    for f in files:
        sid, boxes = read_boxes3d(f)
        if sid in out:
            raise MalformedDocumentError(f"{f}: duplicate scene id {sid!r}")
        out[sid] = boxes
    return out


# --------------------------------------------------------------- embeddings

def features_from_manifest(doc, where="manifest") -> list:
    dim = _require(doc, "dim", where)
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise MalformedDocumentError(f"{where}: 'dim' must be a positive integer")
    entries = _require(doc, "entries", where, list)
    out, seen = [], set()
    for k, e in enumerate(entries):
        w = f"{where}: entries[{k}]"
        eid = _require(e, "id", w, str)
        w = f"{where}: entry {eid!r}"
        if eid in seen:
            raise MalformedDocumentError(f"{w}: duplicate id")
        seen.add(eid)
        mod = _require(e, "modality", w, str)
        if mod not in MODALITIES:
            raise MalformedDocumentError(f"{w}: modality must be one of {MODALITIES}")
        cat = e.get("category")
        if cat is not None and not isinstance(cat, str):
            raise MalformedDocumentError(f"{w}: category must be a string")
        vec = _require(e, "vector", w, list)
        if len(vec) != dim:
            raise DimensionMismatchError(f"{w}: vector length {len(vec)} != dim {dim}")
        vals = []
        for i, v in enumerate(vec):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise MalformedDocumentError(f"{w}: vector[{i}] is not a number")
            if not math.isfinite(v):
                raise InvalidValueError(f"{w}: non-finite value at index {i}")
            vals.append(float(v))
        out.append(FeatureVec(eid, np.array(vals), mod, cat))
    return out


def manifest_from_features(feats: Sequence[FeatureVec]) -> dict:
    dims = {f.dim for f in feats}
    if len(dims) > 1:
        raise DimensionMismatchError(f"inconsistent dimensions {sorted(dims)}")
    entries = []
    for f in feats:
        e = {"id": f.id, "modality": f.modality}
        if f.category is not None:
            e["category"] = f.category
        e["vector"] = f.values.tolist()
        entries.append(e)
    return {"dim": dims.pop() if dims else 1, "entries": entries}


def read_embeddings(path) -> list:
    """Raw manifest contents, no normalisation."""
    return features_from_manifest(_load_json(path), str(path))


def write_embeddings(path, feats: Sequence[FeatureVec]) -> None:
    _dump(manifest_from_features(feats), path)


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "file"
    path: Optional[str] = None
    url: Optional[str] = None
    timeout: float = 10.0

    def __post_init__(self):
        if self.mode not in ("file", "http"):
            raise ValueError(f"provider mode must be 'file' or 'http', got {self.mode!r}")
        if self.mode == "file" and (not self.path or self.url):
            raise ValueError("file provider needs a path and no URL")
        if self.mode == "http" and (not self.url or self.path):
            raise ValueError("http provider needs a URL and no path")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


def _normalised(f: FeatureVec) -> FeatureVec:
    n = np.linalg.norm(f.values)
    if n == 0:
        raise InvalidValueError(f"entry {f.id!r}: zero vector cannot be normalised")
    return FeatureVec(f.id, f.values / n, f.modality, f.category)


def _fetch_http(cfg: ProviderConfig, ids) -> list:
    url = cfg.url.rstrip("/") + "/embeddings"
    req = urllib.request.Request(url, data=json.dumps({"ids": list(ids)}).encode(),
                                 headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            body = resp.read()
    except urllib.error.HTTPError as e:
        if e.code == 404:
            try:
                missing = json.loads(e.read()).get("missing", [])
            except (ValueError, AttributeError):
                missing = []
            raise MissingIdError(missing or ["<unspecified>"]) from e
        raise MalformedDocumentError(f"{url}: HTTP {e.code}") from e
    except (socket.timeout, TimeoutError) as e:
        raise ProviderTimeoutError(f"{url}: no response within {cfg.timeout}s") from e
    except urllib.error.URLError as e:
        if isinstance(e.reason, (socket.timeout, TimeoutError)):
            raise ProviderTimeoutError(f"{url}: no response within {cfg.timeout}s") from e
        raise MalformedDocumentError(f"{url}: {e.reason}") from e
    try:
        doc = json.loads(body)
    except ValueError as e:
        raise MalformedDocumentError(f"{url}: response is not JSON") from e
    return features_from_manifest(doc, url)


def load_embeddings(cfg: ProviderConfig, ids: Optional[Sequence[str]] = None) -> list:
    """Fetch features by id, in request order, L2-normalised.

    ``ids=None`` returns every entry (file mode only).
    """
    if cfg.mode == "file":
        feats = read_embeddings(cfg.path)
    else:
        if ids is None:
            raise ValueError("http provider needs an explicit id list")
        feats = _fetch_http(cfg, ids)
    by_id = {f.id: f for f in feats}
    if ids is None:
        chosen = feats
    else:
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise MissingIdError(missing)
        chosen = [by_id[i] for i in ids]
    dims = {f.dim for f in chosen}
    if len(dims) > 1:
        raise DimensionMismatchError(f"inconsistent dimensions {sorted(dims)}")
    return [_normalised(f) for f in chosen]


# ------------------------------------------------- vocabularies and prompts

def read_vocab(path) -> ClassVocabulary:
    names = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    try:
        return ClassVocabulary(tuple(n for n in names if n))
    except ValueError as e:
        raise InvalidValueError(f"{path}: {e}") from e


def write_vocab(path, vocab: ClassVocabulary) -> None:
    for n in vocab:
        if "\n" in n or n != n.strip():
            raise ValueError(f"category {n!r} cannot be stored one per line")
    Path(path).write_text("".join(n + "\n" for n in vocab), encoding="utf-8")


def read_templates(path):
    from .prompts import PromptTemplateSet
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    try:
        return PromptTemplateSet(tuple(ln for ln in lines if ln.strip()))
    except ValueError as e:
        raise InvalidValueError(f"{path}: {e}") from e


def prompt_filename(category: str) -> str:
    return urllib.parse.quote(category, safe="") + ".txt"


def write_prompt_files(out_dir, prompts: dict) -> list:
    """One UTF-8 file per category, one prompt per line. Returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cat, lines in prompts.items():
        p = out_dir / prompt_filename(cat)
        p.write_text("".join(s + "\n" for s in lines), encoding="utf-8")
        paths.append(p)
    return paths


def read_prompt_file(path):
    """Return ``(category, [prompt])`` from a file written by :func:`write_prompt_files`."""
    path = Path(path)
    cat = urllib.parse.unquote(path.name[:-len(".txt")])
    text = path.read_text(encoding="utf-8")
    return cat, text.split("\n")[:-1] if text else []


def read_description(path):
    doc = _load_json(path)
    where = str(path)
    cat = _require(doc, "class", where, str)
    texts = _require(doc, "texts", where, list)
    if not all(isinstance(t, str) for t in texts):
        raise MalformedDocumentError(f"{where}: 'texts' must hold strings")
    return cat, list(texts)


def write_description(path, category: str, texts: Sequence[str]) -> None:
    _dump({"class": category, "texts": list(texts)}, path)


# ---------------------------------------------------------------- datasets

def read_index(root) -> list:
    doc = _load_json(Path(root) / INDEX_FILE)
    where = str(Path(root) / INDEX_FILE)
    scenes = _require(doc, "scenes", where, list)
    if not all(isinstance(s, str) and s for s in scenes):
        raise MalformedDocumentError(f"{where}: scene ids must be non-empty strings")
    return scenes


def write_index(root, scene_ids: Sequence[str]) -> None:
    _dump({"schema_version": SCHEMA_VERSION, "scenes": list(scene_ids)}, Path(root) / INDEX_FILE)


def scene_dir(root, scene_id: str) -> Path:
    return Path(root) / SCENES_DIR / scene_id


def write_scene(root, scene: Scene, gt: Sequence[LabeledBox3D], boxes2d: Sequence[Box2D]) -> None:
    d = scene_dir(root, scene.scene_id)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / CLOUD_FILE, scene.cloud)
    write_calibration(d / CALIB_FILE, scene.camera)
    write_boxes2d(d / BOXES2D_FILE, scene.scene_id, boxes2d)
    write_boxes3d(d / GT_FILE, scene.scene_id, gt)


def read_scene(root, scene_id: str) -> Scene:
    d = scene_dir(root, scene_id)
    return Scene(scene_id, read_ply(d / CLOUD_FILE), read_calibration(d / CALIB_FILE))


@dataclass(frozen=True)
class Violation:
    severity: str   # "error" or "warning"
    path: str
    field: str
    message: str

    def __str__(self):
        return f"[{self.severity}] {self.path}: {self.field}: {self.message}"


def validate_dataset(root) -> list:
    """Check every file of a dataset directory; returns a list of :class:`Violation`.

    Never raises on bad content and never writes.
    """
    root = Path(root)
    out = []
    if not root.is_dir():
        return [Violation("error", str(root), "", "not a directory")]
    try:
        ids = read_index(root)
    except ManifestError as e:
        return [Violation("error", str(root / INDEX_FILE), "scenes", str(e))]
    if len(set(ids)) != len(ids):
        dup = sorted({s for s in ids if ids.count(s) > 1})
        out.append(Violation("error", str(root / INDEX_FILE), "scenes", f"duplicate scene ids {dup}"))
    known = set(ids)

    for sid in ids:
        d = scene_dir(root, sid)
        if not d.is_dir():
            out.append(Violation("error", str(d), "scene_id", f"scene {sid!r} listed but directory missing"))
            continue
        try:
            read_ply(d / CLOUD_FILE)
        except (ManifestError, OSError, ValueError) as e:
            out.append(Violation("error", str(d / CLOUD_FILE), "points", str(e)))
        try:
            read_calibration(d / CALIB_FILE)
        except (ManifestError, OSError, ValueError) as e:
            msg = str(e)
            fld = "P" if "P" in msg.split(":", 1)[-1] else ("width/height" if "width" in msg else "")
            out.append(Violation("error", str(d / CALIB_FILE), fld, msg))
        for name, reader in ((BOXES2D_FILE, read_boxes2d), (GT_FILE, read_boxes3d)):
            p = d / name
            try:
                ref, _ = reader(p)
            except (ManifestError, OSError, ValueError) as e:
                out.append(Violation("error", str(p), "boxes", str(e)))
                continue
            if ref not in known:
                out.append(Violation("error", str(p), "scene_id", f"references unknown scene {ref!r}"))
            elif ref != sid:
                out.append(Violation("error", str(p), "scene_id", f"stored under {sid!r} but names {ref!r}"))

    sdir = root / SCENES_DIR
    if sdir.is_dir():
        for extra in sorted(p.name for p in sdir.iterdir() if p.is_dir() and p.name not in known):
            out.append(Violation("warning", str(sdir / extra), "scene_id", "directory not listed in index"))
    return out


def has_errors(violations) -> bool:
    return any(v.severity == "error" for v in violations)
