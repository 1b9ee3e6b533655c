"""File formats: datasets, detections, predictions, tables.

Dataset files are JSON Lines. Line 1 is a header::

    {"format": "sgselfsup-dataset", "version": 1,
     "taxonomy": {"predicates": [...], "types": [...], "trivial": [...]},
     "classes": [...], "d_vis": 16}

and every following line is one image::

    {"id": "img0", "width": 640, "height": 480,
     "objects": [{"box": [x, y, w, h], "class": 3, "feature": [...]}, ...],
     "triplets": [[subject_idx, predicate_id, object_idx], ...]}

Floats are written with ``repr`` precision, so save -> load is exact.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import (GEOMETRIC, OTHER, POSSESSIVE, SEMANTIC, Dataset, Detection, DetectionSet,
                   ImageMeta, ObjectInstance, PredicateTaxonomy, SceneGraphAnnotation)
from .evaluation import RelationshipPrediction
from .geometry import BoundingBox, ValidationError

DATASET_FORMAT = "sgselfsup-dataset"
DETECTIONS_FORMAT = "sgselfsup-detections"
FORMAT_VERSION = 1


@contextmanager
def atomic_write(path, mode="w", newline=None):
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ----------------------------------------------------------------- dataset

def _dataset_header(ds: Dataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "version": ds.version,
        "taxonomy": {"predicates": list(ds.taxonomy.names),
                     "types": list(ds.taxonomy.types),
                     "trivial": sorted(ds.taxonomy.trivial_ids)},
        "classes": list(ds.class_names),
        "d_vis": ds.d_vis,
    }


def _image_record(ann: SceneGraphAnnotation) -> dict:
    objs = []
    for o in ann.objects:
        rec = {"box": [o.box.x, o.box.y, o.box.w, o.box.h], "class": o.class_id}
        if o.feature is not None:
            rec["feature"] = list(o.feature)
        objs.append(rec)
    return {"id": ann.image.id, "width": ann.image.width, "height": ann.image.height,
            "objects": objs, "triplets": [list(t) for t in ann.triplets]}


def save_dataset(ds: Dataset, path) -> None:
    with atomic_write(path) as fh:
        fh.write(json.dumps(_dataset_header(ds)) + "\n")
        for ann in ds.images:
            fh.write(json.dumps(_image_record(ann)) + "\n")


def _record_error(line_no: int, image_id, msg: str) -> ValidationError:
    where = f"line {line_no}" + (f" (image {image_id!r})" if image_id is not None else "")
    return ValidationError(f"{where}: {msg}")


def _parse_image(rec: dict, line_no: int, header: dict) -> SceneGraphAnnotation:
    image_id = rec.get("id")
    try:
        img = ImageMeta(str(rec["id"]), float(rec["width"]), float(rec["height"]))
    except KeyError as e:
        raise _record_error(line_no, image_id, f"missing field {e.args[0]!r}") from None
    except (ValidationError, TypeError, ValueError) as e:
        raise _record_error(line_no, image_id, str(e)) from None
    objects = []
    for k, o in enumerate(rec.get("objects", [])):
        try:
            x, y, w, h = (float(v) for v in o["box"])
        except (KeyError, TypeError, ValueError):
            raise _record_error(line_no, image_id, f"object {k}: field 'box' must be [x, y, w, h]") from None
        for name, v in (("w", w), ("h", h)):
            if not v > 0:
                raise _record_error(line_no, image_id, f"object {k}: field '{name}' must be > 0, got {v}")
        try:
            box = BoundingBox(x, y, w, h)
        except ValidationError as e:
            raise _record_error(line_no, image_id, f"object {k}: field 'box': {e}") from None
        if "class" not in o:
            raise _record_error(line_no, image_id, f"object {k}: missing field 'class'")
        feat = o.get("feature")
        objects.append(ObjectInstance(box, int(o["class"]),
                                      None if feat is None else tuple(float(v) for v in feat)))
    triplets = []
    for t, trip in enumerate(rec.get("triplets", [])):
        if len(trip) != 3:
            raise _record_error(line_no, image_id, f"triplet {t}: expected [subject, predicate, object]")
        triplets.append(tuple(int(v) for v in trip))
    ann = SceneGraphAnnotation(img, tuple(objects), tuple(triplets))
    try:
        ann.validate(len(header["classes"]), len(header["taxonomy"]["predicates"]),
                     int(header.get("d_vis", 0)))
    except ValidationError as e:
        raise _record_error(line_no, None, str(e)) from None
    return ann


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValidationError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: line 1: {e}") from None
    if header.get("format") != DATASET_FORMAT or "version" not in header:
        raise ValidationError(f"{path}: line 1: not a {DATASET_FORMAT} header (format/version)")
    tax = header["taxonomy"]
    taxonomy = PredicateTaxonomy(tuple(tax["predicates"]), tuple(tax["types"]),
                                 frozenset(int(i) for i in tax.get("trivial", [])))
    images = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise _record_error(line_no, None, f"malformed JSON: {e}") from None
        images.append(_parse_image(rec, line_no, header))
    return Dataset(taxonomy, tuple(header["classes"]), images, int(header.get("d_vis", 0)),
                   int(header["version"]))


# Predicate types for the common 50-predicate Visual Genome split; anything
# not listed is typed Other. Files may override with "predicate_types".
VG_PREDICATE_TYPES = {
    **dict.fromkeys(["above", "across", "against", "along", "and", "at", "attached to",
                     "behind", "between", "in front of", "near", "on", "on back of",
                     "over", "under"], GEOMETRIC),
    **dict.fromkeys(["belonging to", "has", "in", "of", "part of", "wearing", "wears",
                     "with"], POSSESSIVE),
    **dict.fromkeys(["carrying", "covered in", "covering", "eating", "flying in",
                     "growing on", "hanging from", "holding", "laying on", "looking at",
                     "lying on", "mounted on", "painted on", "parked on", "playing",
                     "riding", "says", "sitting on", "standing on", "to", "using",
                     "walking in", "walking on", "watching"], SEMANTIC),
    **dict.fromkeys(["for", "from", "made of"], OTHER),
}
VG_TRIVIAL = {"in_image", "in image"}


def load_vg_simplified(path) -> Dataset:
    """Adapter for a reduced Visual Genome layout.

    The input is one JSON document::

        {"images": [{"image_id": 1, "width": 800, "height": 600,
                     "objects": [{"object_id": 7, "x": 0, "y": 0, "w": 10, "h": 10,
                                  "names": ["man"], "feature": [...]?}],
                     "relationships": [{"subject_id": 7, "object_id": 9,
                                        "predicate": "ON"}]}],
         "predicate_types": {"on": "Geometric", ...}?}

    Class and predicate vocabularies are the sorted lowercase names seen in
    the file. Relationships naming unknown object ids are rejected.
    """
    with open(path) as fh:
        doc = json.load(fh)
    raw = doc["images"] if isinstance(doc, dict) else doc
    overrides = {k.lower(): v for k, v in (doc.get("predicate_types", {}) if isinstance(doc, dict) else {}).items()}
    class_names = sorted({o["names"][0].strip().lower() for im in raw for o in im["objects"]})
    predicates = sorted({r["predicate"].strip().lower() for im in raw for r in im["relationships"]})
    cls_idx = {c: i for i, c in enumerate(class_names)}
    pred_idx = {p: i for i, p in enumerate(predicates)}
    types = tuple(overrides.get(p, VG_PREDICATE_TYPES.get(p, OTHER)) for p in predicates)
    trivial = frozenset(i for p, i in pred_idx.items() if p in VG_TRIVIAL)
    d_vis = 0
    images = []
    for n, im in enumerate(raw):
        image_id = str(im.get("image_id", n))
        img = ImageMeta(image_id, float(im["width"]), float(im["height"]))
        id_map, objects = {}, []
        for k, o in enumerate(im["objects"]):
            try:
                box = BoundingBox(float(o["x"]), float(o["y"]), float(o["w"]), float(o["h"]))
            except ValidationError as e:
                raise ValidationError(f"image {image_id!r} object {k}: {e}") from None
            feat = o.get("feature")
            if feat is not None:
                d_vis = len(feat)
            id_map[o["object_id"]] = len(objects)
            objects.append(ObjectInstance(box, cls_idx[o["names"][0].strip().lower()],
                                          None if feat is None else tuple(map(float, feat))))
        triplets = []
        for t, r in enumerate(im["relationships"]):
            if r["subject_id"] not in id_map or r["object_id"] not in id_map:
                raise ValidationError(f"image {image_id!r} relationship {t}: unknown object id")
            s, ob = id_map[r["subject_id"]], id_map[r["object_id"]]
            if s != ob:
                triplets.append((s, pred_idx[r["predicate"].strip().lower()], ob))
        images.append(SceneGraphAnnotation(img, tuple(objects), tuple(triplets)))
    ds = Dataset(PredicateTaxonomy(tuple(predicates), types, trivial), tuple(class_names),
                 images, d_vis)
    ds.validate()
    return ds


INGEST_FORMATS = {"native": load_dataset, "vg": load_vg_simplified}


def ingest(path, format_id: str = "native") -> Dataset:
    try:
        loader = INGEST_FORMATS[format_id]
    except KeyError:
        raise ValidationError(f"unknown dataset format {format_id!r}; "
                              f"choose from {sorted(INGEST_FORMATS)}") from None
    return loader(path)


# -------------------------------------------------------------- detections

def save_detections(dets: DetectionSet, path) -> None:
    doc = {"format": DETECTIONS_FORMAT, "version": FORMAT_VERSION,
           "normalized": dets.normalized, "images": {}}
    for image_id in sorted(dets.images):
        doc["images"][image_id] = [
            {"box": [d.box.x, d.box.y, d.box.w, d.box.h], "scores": list(d.class_scores),
             **({"feature": list(d.feature)} if d.feature is not None else {})}
            for d in dets.images[image_id]]
    with atomic_write(path) as fh:
        json.dump(doc, fh)


def load_detections(path) -> DetectionSet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != DETECTIONS_FORMAT:
        raise ValidationError(f"{path}: not a detections file")
    images = {}
    for image_id, recs in doc["images"].items():
        out = []
        for k, r in enumerate(recs):
            try:
                box = BoundingBox(*(float(v) for v in r["box"]))
            except ValidationError as e:
                raise ValidationError(f"{path}: image {image_id!r} detection {k}: {e}") from None
            feat = r.get("feature")
            out.append(Detection(box, tuple(float(v) for v in r["scores"]),
                                 None if feat is None else tuple(map(float, feat))))
        images[image_id] = out
    return DetectionSet(images, bool(doc.get("normalized", True)))


# ------------------------------------------------------------- predictions

def prediction_record(p: RelationshipPrediction) -> dict:
    return {"image_id": p.image_id, "sub_idx": p.sub_idx, "obj_idx": p.obj_idx,
            "subject_box": [p.subject_box.x, p.subject_box.y, p.subject_box.w, p.subject_box.h],
            "object_box": [p.object_box.x, p.object_box.y, p.object_box.w, p.object_box.h],
            "sub_class": p.sub_class, "obj_class": p.obj_class,
            "p_sub": p.p_sub, "p_obj": p.p_obj, "p_rel": [float(v) for v in p.p_rel]}


def save_predictions(predictions: dict, path) -> None:
    with atomic_write(path) as fh:
        for image_id in sorted(predictions):
            for p in predictions[image_id]:
                fh.write(json.dumps(prediction_record(p)) + "\n")


def load_predictions(path) -> dict:
    out: dict = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                p = RelationshipPrediction(
                    str(r["image_id"]), int(r["sub_idx"]), int(r["obj_idx"]),
                    BoundingBox(*map(float, r["subject_box"])),
                    BoundingBox(*map(float, r["object_box"])),
                    int(r["sub_class"]), int(r["obj_class"]), float(r["p_sub"]),
                    float(r["p_obj"]), np.asarray(r["p_rel"], dtype=np.float64))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise ValidationError(f"{path}: line {line_no}: bad prediction record ({e})") from None
            out.setdefault(p.image_id, []).append(p)
    return out


# ------------------------------------------------------------------ tables

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_table(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
