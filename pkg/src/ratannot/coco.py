"""COCO-style JSON documents for the keypoint task and the body-part task.

Two document flavors share one envelope::

    {"schema_version": "...", "task": "keypoints" | "parts",
     "images": [...], "categories": [...], "annotations": [...]}

The keypoint task uses a single "rat" category (id 1) with keypoints
[head, tail_base, tail_end]; the part task uses categories head=1, body=2,
tail=3 with one annotation per part. Masks are serialized as uncompressed
row-major RLE starting with a run of zeros. Writers emit canonical JSON
(sorted keys, fixed separators) so identical inputs give identical bytes.
"""
from __future__ import annotations

import importlib.resources
import json
from pathlib import Path

import jsonschema
import numpy as np

from .annotate import InstanceAnnotation, Keypoints, PartLabel
from .errors import SchemaError
from .raster import BinaryMask, mask_to_rle, rle_to_mask, bounding_box

SCHEMA_VERSION = "1.0"
KEYPOINT_NAMES = ["head", "tail_base", "tail_end"]
RAT_CATEGORY = {
    "id": 1,
    "name": "rat",
    "keypoints": KEYPOINT_NAMES,
    "skeleton": [[1, 2], [2, 3]],
}
PART_CATEGORIES = [
    {"id": int(PartLabel.HEAD), "name": "head"},
    {"id": int(PartLabel.BODY), "name": "body"},
    {"id": int(PartLabel.TAIL), "name": "tail"},
]


def _schema() -> dict:
    text = (
        importlib.resources.files("ratannot").joinpath("data/annotation_schema.json")
    ).read_text()
    return json.loads(text)


def image_entry(image_id: int, file_name: str, width: int, height: int) -> dict:
    return {
        "id": int(image_id),
        "file_name": str(file_name),
        "width": int(width),
        "height": int(height),
    }


def keypoint_annotation(
    ann_id: int, image_id: int, ann: InstanceAnnotation, score: float | None = None
) -> dict:
    kps = ann.keypoints
    flat = kps.as_flat()
    entry = {
        "id": int(ann_id),
        "image_id": int(image_id),
        "category_id": 1,
        "segmentation": mask_to_rle(ann.mask),
        "area": int(ann.mask.area),
        "bbox": ann.bbox.as_xywh(),
        "iscrowd": 0,
        "keypoints": [round(float(v), 3) for v in flat],
        "num_keypoints": sum(1 for kp in (kps.head, kps.tail_base, kps.tail_end) if kp.v > 0),
        "source": ann.source,
        "quality_flags": sorted(ann.quality_flags),
    }
    if score is not None:
        entry["score"] = float(score)
    return entry


def part_annotations(
    first_id: int, image_id: int, ann: InstanceAnnotation, score: float | None = None
) -> list[dict]:
    out = []
    ann_id = first_id
    for label in PartLabel:
        region = BinaryMask(ann.parts.data == int(label))
        if region.area == 0:
            continue
        entry = {
            "id": int(ann_id),
            "image_id": int(image_id),
            "category_id": int(label),
            "segmentation": mask_to_rle(region),
            "area": int(region.area),
            "bbox": bounding_box(region).as_xywh(),
            "iscrowd": 0,
            "source": ann.source,
        }
        if score is not None:
            entry["score"] = float(score)
        out.append(entry)
        ann_id += 1
    return out


def build_keypoint_doc(
    images: list[dict],
    per_image_annotations: dict[int, list[InstanceAnnotation]],
    scores: dict[int, list[float]] | None = None,
) -> dict:
    annotations = []
    next_id = 1
    for im in images:
        for idx, ann in enumerate(per_image_annotations.get(im["id"], [])):
            score = scores[im["id"]][idx] if scores else None
            annotations.append(keypoint_annotation(next_id, im["id"], ann, score))
            next_id += 1
    return {
        "schema_version": SCHEMA_VERSION,
        "task": "keypoints",
        "images": images,
        "categories": [RAT_CATEGORY],
        "annotations": annotations,
    }


def build_parts_doc(
    images: list[dict],
    per_image_annotations: dict[int, list[InstanceAnnotation]],
    scores: dict[int, list[float]] | None = None,
) -> dict:
    annotations = []
    next_id = 1
    for im in images:
        for idx, ann in enumerate(per_image_annotations.get(im["id"], [])):
            score = scores[im["id"]][idx] if scores else None
            entries = part_annotations(next_id, im["id"], ann, score)
            annotations.extend(entries)
            next_id += len(entries)
    return {
        "schema_version": SCHEMA_VERSION,
        "task": "parts",
        "images": images,
        "categories": PART_CATEGORIES,
        "annotations": annotations,
    }


def validate_document(doc: dict) -> None:
    """Check a document against the shipped JSON schema; SchemaError on failure."""
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"annotation document invalid: {exc.message}") from exc
    counts_ok = all(
        sum(a["segmentation"]["counts"]) ==
        a["segmentation"]["size"][0] * a["segmentation"]["size"][1]
        for a in doc.get("annotations", [])
        if isinstance(a.get("segmentation"), dict)
    )
    if not counts_ok:
        raise SchemaError("RLE counts do not cover their rasters")


def save_json(path, doc: dict) -> None:
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{p}: not valid JSON: {exc}") from exc


def annotation_mask(entry: dict) -> BinaryMask:
    return rle_to_mask(entry["segmentation"])


def annotation_keypoints(entry: dict) -> Keypoints:
    return Keypoints.from_flat(entry["keypoints"])
