"""On-disk instance sets: ``<id>_labels.pgm`` plus ``<id>_classes.csv``.

The classes CSV has columns
``instance_id,class,confidence,x0,y0,w,h,label`` where ``label`` is the
instance's value in the label map (0 when it has no visible pixels). Only
``instance_id`` and ``class`` are required; a missing ``label`` defaults to
the instance id, a missing box to the mask's tight box and a missing
confidence to 1.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .pipeline import Instance, InstanceSet
from .raster import BBox, BitMask, ObjectClass, read_label_map, write_label_map

CLASS_COLUMNS = ["instance_id", "class", "confidence", "x0", "y0", "w", "h", "label"]


class DatasetError(ValueError):
    pass


def atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def classes_csv(instances: InstanceSet, labels: dict[int, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CLASS_COLUMNS)
    for inst in instances.instances:
        b = inst.box
        w.writerow([inst.id, inst.cls.label, f"{inst.confidence:.6f}", b.x0, b.y0, b.w, b.h,
                    labels.get(inst.id, 0)])
    return buf.getvalue()


def write_instances(out_dir: Path, instances: InstanceSet, width: int, height: int) -> dict[int, int]:
    out_dir = Path(out_dir)
    lm, labels = instances.to_label_map(width, height)
    atomic_write(out_dir / f"{instances.image_id}_labels.pgm", write_label_map(lm))
    atomic_write(out_dir / f"{instances.image_id}_classes.csv", classes_csv(instances, labels))
    return labels


def list_image_ids(directory: Path) -> list[str]:
    return sorted(p.name[: -len("_labels.pgm")] for p in Path(directory).glob("*_labels.pgm"))


def read_instances(directory: Path, image_id: str) -> InstanceSet:
    directory = Path(directory)
    lm = read_label_map((directory / f"{image_id}_labels.pgm").read_bytes())
    masks = lm.instance_masks()
    out = InstanceSet(image_id, width=lm.width, height=lm.height)
    csv_path = directory / f"{image_id}_classes.csv"
    if not csv_path.exists():
        for k, m in sorted(masks.items()):
            out.instances.append(Instance(k, ObjectClass.CRYSTAL, m, m.tight_box(), 1.0))
        return out

    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    seen_labels = set()
    for lineno, row in enumerate(rows, start=2):
        try:
            inst_id = int(row["instance_id"])
            cls = ObjectClass.parse(row["class"])
            conf = float(row.get("confidence") or 1.0)
            label = int(row["label"]) if row.get("label") not in (None, "") else inst_id
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{csv_path}:{lineno}: {exc}") from None
        if label:
            if label not in masks:
                raise DatasetError(f"{csv_path}:{lineno}: label {label} not present in label map")
            seen_labels.add(label)
        mask = masks.get(label)
        if row.get("x0") not in (None, ""):
            box = BBox(int(row["x0"]), int(row["y0"]), int(row["w"]), int(row["h"]))
        elif mask is not None:
            box = mask.tight_box()
        else:
            raise DatasetError(f"{csv_path}:{lineno}: instance has neither pixels nor a box")
        if mask is None:
            mask = BitMask(np.zeros((box.h, box.w), dtype=bool), box.x0, box.y0)
        out.instances.append(Instance(inst_id, cls, mask, box, conf))
    orphans = sorted(set(masks) - seen_labels)
    if orphans:
        raise DatasetError(f"{csv_path}: label map ids {orphans} have no row")
    return out


def read_counts(path: Path) -> dict[str, int]:
    """``image_id,count`` CSV, as shipped for count-only ground truth."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "count"} <= set(reader.fieldnames):
            raise DatasetError(f"{path}: expected columns image_id,count")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["image_id"]] = int(row["count"])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return out
