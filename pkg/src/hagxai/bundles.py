"""Explanation bundles: exported activations plus per-object gradients.

A bundle holds everything needed to explain one image at one captured
layer: the activation stack of each scale branch and, for every detected
object, the gradient of its class score with respect to its branch's
activations.  Bundles cross the process boundary as archives — a
directory (or zip) containing ``manifest.json`` and one NPY file per
tensor:

* ``act_b{i}.npy``   — activations of the i-th branch in manifest order
* ``grad_o{j}.npy``  — gradients of the j-th object in manifest order

NPY payloads must be format version 1.0, little-endian float32, C-order;
anything else is rejected with the offending file named.  Writing is
deterministic: identical bundles produce byte-identical archives.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .errors import DataError

MANIFEST_NAME = "manifest.json"


@dataclass
class BranchTensors:
    """Activation stack of one scale branch of the captured layer."""

    branch_id: int
    activations: np.ndarray  # float32 (h, w, channels)
    layer_name: str = ""

    def __post_init__(self):
        self.activations = _check_stack(self.activations, f"branch {self.branch_id} activations")


@dataclass
class ObjectSlot:
    """One detected object: gradients, score, and detection metadata."""

    object_id: int
    branch_index: int
    gradients: np.ndarray  # float32, same shape as the branch activations
    score: float
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1 in image pixels
    class_label: str = ""

    def __post_init__(self):
        self.gradients = _check_stack(self.gradients, f"object {self.object_id} gradients")


@dataclass
class ExplanationBundle:
    """Exported tensors and detections for one image at one layer."""

    image_id: str
    image_h: int
    image_w: int
    branches: list[BranchTensors] = field(default_factory=list)
    objects: list[ObjectSlot] = field(default_factory=list)
    model_id: str = ""
    exporter_version: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.image_h < 1 or self.image_w < 1:
            raise DataError(f"{self.image_id}: image extent must be positive")
        if not self.branches:
            raise DataError(f"{self.image_id}: bundle has no branches")
        for obj in self.objects:
            if not 0 <= obj.branch_index < len(self.branches):
                raise DataError(
                    f"{self.image_id}: object {obj.object_id} references branch {obj.branch_index} "
                    f"of {len(self.branches)}"
                )
            branch = self.branches[obj.branch_index]
            if obj.gradients.shape != branch.activations.shape:
                raise DataError(
                    f"{self.image_id}: object {obj.object_id} gradient shape {obj.gradients.shape} "
                    f"!= branch activation shape {branch.activations.shape}"
                )
            if not 0.0 <= obj.score <= 1.0:
                raise DataError(f"{self.image_id}: object {obj.object_id} score {obj.score} outside [0, 1]")
            x0, y0, x1, y1 = obj.bbox
            if not (x0 < x1 and y0 < y1):
                raise DataError(f"{self.image_id}: object {obj.object_id} has degenerate bbox {obj.bbox}")
            if x0 < 0 or y0 < 0 or x1 > self.image_w or y1 > self.image_h:
                raise DataError(f"{self.image_id}: object {obj.object_id} bbox {obj.bbox} outside image bounds")

    @property
    def max_branch_shape(self) -> tuple[int, int]:
        """Largest branch spatial resolution (by pixel count)."""
        best = max(self.branches, key=lambda b: b.activations.shape[0] * b.activations.shape[1])
        return best.activations.shape[0], best.activations.shape[1]


def _check_stack(arr, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DataError(f"{what}: expected (h, w, channels) stack, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what}: contains NaN or Inf")
    return arr


def _manifest_dict(bundle: ExplanationBundle) -> dict:
    return {
        "image_id": bundle.image_id,
        "image_h": bundle.image_h,
        "image_w": bundle.image_w,
        "layer_name": bundle.branches[0].layer_name if bundle.branches else "",
        "branches": [
            {"branch_id": b.branch_id, "shape": list(b.activations.shape), "layer_name": b.layer_name}
            for b in bundle.branches
        ],
        "objects": [
            {
                "object_id": o.object_id,
                "branch_index": o.branch_index,
                "score": o.score,
                "bbox": list(o.bbox),
                "class_label": o.class_label,
            }
            for o in bundle.objects
        ],
        "model_id": bundle.model_id,
        "exporter_version": bundle.exporter_version,
    }


def _write_npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    npy_format.write_array(buf, np.ascontiguousarray(arr, dtype="<f4"), version=(1, 0))
    return buf.getvalue()


def write_bundle(bundle: ExplanationBundle, path) -> Path:
    """Write a bundle archive directory; byte layout is deterministic."""
    bundle.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_dict(bundle)
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for i, branch in enumerate(bundle.branches):
        (path / f"act_b{i}.npy").write_bytes(_write_npy_bytes(branch.activations))
    for j, obj in enumerate(bundle.objects):
        (path / f"grad_o{j}.npy").write_bytes(_write_npy_bytes(obj.gradients))
    return path


def _read_strict_npy(data: bytes, name: str) -> np.ndarray:
    """Decode an NPY payload, enforcing version 1.0, <f4, C-order."""
    buf = io.BytesIO(data)
    try:
        version = npy_format.read_magic(buf)
    except ValueError as exc:
        raise DataError(f"{name}: not an NPY file ({exc})") from exc
    if version != (1, 0):
        raise DataError(f"{name}: NPY format version {version} unsupported, need 1.0")
    shape, fortran_order, dtype = npy_format.read_array_header_1_0(buf)
    if dtype != np.dtype("<f4"):
        raise DataError(f"{name}: dtype {dtype} unsupported, need little-endian float32")
    if fortran_order:
        raise DataError(f"{name}: Fortran-order arrays unsupported, need C-order")
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf.read(), dtype="<f4", count=count).reshape(shape)
    return np.ascontiguousarray(arr)


class _ArchiveReader:
    """Uniform byte access to directory and zip archives."""

    def __init__(self, path: Path):
        self.path = Path(path)
        if self.path.is_dir():
            self._zip = None
        elif zipfile.is_zipfile(self.path):
            self._zip = zipfile.ZipFile(self.path)
        else:
            raise DataError(f"{path}: not a bundle directory or zip archive")

    def read(self, name: str) -> bytes:
        if self._zip is None:
            member = self.path / name
            if not member.exists():
                raise DataError(f"missing tensor file: {member}")
            return member.read_bytes()
        try:
            return self._zip.read(name)
        except KeyError:
            raise DataError(f"missing tensor file: {self.path}!{name}") from None


def read_bundle(path) -> ExplanationBundle:
    """Load and validate a bundle archive (directory or zip)."""
    reader = _ArchiveReader(Path(path))
    try:
        manifest = json.loads(reader.read(MANIFEST_NAME).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: manifest is not valid JSON ({exc})") from exc

    for key in ("image_id", "image_h", "image_w", "branches", "objects"):
        if key not in manifest:
            raise DataError(f"{path}: manifest missing key {key!r}")

    branches = []
    for i, entry in enumerate(manifest["branches"]):
        name = f"act_b{i}.npy"
        arr = _read_strict_npy(reader.read(name), name)
        declared = tuple(entry["shape"])
        if arr.shape != declared:
            raise DataError(f"{path}/{name}: manifest shape {declared} != stored shape {arr.shape}")
        branches.append(
            BranchTensors(
                branch_id=int(entry["branch_id"]),
                activations=arr,
                layer_name=entry.get("layer_name", manifest.get("layer_name", "")),
            )
        )

    objects = []
    for j, entry in enumerate(manifest["objects"]):
        name = f"grad_o{j}.npy"
        arr = _read_strict_npy(reader.read(name), name)
        objects.append(
            ObjectSlot(
                object_id=int(entry["object_id"]),
                branch_index=int(entry["branch_index"]),
                gradients=arr,
                score=float(entry["score"]),
                bbox=tuple(float(v) for v in entry["bbox"]),
                class_label=entry.get("class_label", ""),
            )
        )

    return ExplanationBundle(
        image_id=str(manifest["image_id"]),
        image_h=int(manifest["image_h"]),
        image_w=int(manifest["image_w"]),
        branches=branches,
        objects=objects,
        model_id=manifest.get("model_id", ""),
        exporter_version=manifest.get("exporter_version", ""),
    )


def find_bundles(root) -> list[Path]:
    """Discover bundle archives under a directory (subdirs with manifests, or zips)."""
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        return [root]
    found = [p for p in sorted(root.iterdir()) if p.is_dir() and (p / MANIFEST_NAME).exists()]
    found += [p for p in sorted(root.glob("*.zip")) if zipfile.is_zipfile(p)]
    return found
