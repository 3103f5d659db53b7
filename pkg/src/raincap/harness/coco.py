"""Ingestion of COCO-style caption annotations."""
import json
import logging
import os
from dataclasses import dataclass

from .. import captioner as cp
from .imageio import import_image

log = logging.getLogger(__name__)


@dataclass
class CocoRecord:
    image_id: int
    file_name: str
    image: object
    captions: list


@dataclass
class CocoDataset:
    records: list
    warnings: list

    def __len__(self):
        return len(self.records)


class AnnotationError(ValueError):
    pass


def ingest_coco_captions(annotation_file, image_dir, vocab=None, max_len=cp.MAX_LEN):
    """Join ``images`` and ``annotations`` into records of (image, captions).

    Images that are missing on disk and annotations pointing at unknown image
    ids are skipped and counted in ``warnings``. With ``vocab`` given, each
    caption becomes a CaptionSample; otherwise captions stay strings.
    """
    with open(annotation_file, encoding="utf-8") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{annotation_file}: malformed JSON at line {exc.lineno} column {exc.colno} (char {exc.pos})") from exc
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise AnnotationError(f"{annotation_file}: expected top-level 'images' and 'annotations'")
    files = {}
    for entry in doc["images"]:
        try:
            files[int(entry["id"])] = entry["file_name"]
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{annotation_file}: bad image entry {entry!r}") from exc
    caps, warnings = {}, []
    for ann in doc["annotations"]:
        try:
            iid, text = int(ann["image_id"]), str(ann["caption"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{annotation_file}: bad annotation {ann!r}") from exc
        if iid not in files:
            warnings.append(f"annotation references unknown image id {iid}")
            continue
        caps.setdefault(iid, []).append(text)
    records = []
    for iid in sorted(caps):
        path = os.path.join(image_dir, files[iid])
        if not os.path.exists(path):
            warnings.append(f"image file missing: {path}")
            continue
        texts = caps[iid]
        if vocab is not None:
            texts = [cp.make_sample(iid, t, vocab, max_len) for t in texts]
        records.append(CocoRecord(iid, files[iid], import_image(path), texts))
    for w in warnings:
        log.warning(w)
    return CocoDataset(records, warnings)
