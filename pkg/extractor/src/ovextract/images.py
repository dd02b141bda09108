"""Execute augmentation jobs on image files before encoding.

A job carries crop fractions, a flip bit, and multiplicative jitter factors;
this module applies them exactly as specified, then resizes to the encoder
input size. Identity jobs (full-frame crop, no flip, unit factors) reduce to
the plain resize path, so their encodings match un-augmented encodings
bit-exactly with a deterministic encoder.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

from PIL import Image, ImageEnhance, ImageOps

DEFAULT_ENCODER_SIZE = 224


@dataclass(frozen=True)
class AugmentationJob:
    class_id: str
    exemplar_id: str
    variant: int
    crop: tuple[float, float, float, float]
    flip: bool
    brightness: float
    contrast: float
    saturation: float

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AugmentationJob":
        jitter = obj.get("jitter", {})
        return cls(class_id=obj["class"], exemplar_id=obj["exemplar"],
                   variant=int(obj.get("variant", 0)),
                   crop=tuple(float(v) for v in obj["crop"]),
                   flip=bool(obj.get("flip", False)),
                   brightness=float(jitter.get("brightness", 1.0)),
                   contrast=float(jitter.get("contrast", 1.0)),
                   saturation=float(jitter.get("saturation", 1.0)))


def load_jobs(path: str) -> list[AugmentationJob]:
    jobs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                jobs.append(AugmentationJob.from_json_obj(json.loads(line)))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad job line ({exc})") from exc
    return jobs


def apply_job(image: Image.Image, job: AugmentationJob,
              target_size: int = DEFAULT_ENCODER_SIZE) -> Image.Image:
    """Crop -> flip -> jitter -> resize, honoring the job parameters exactly."""
    width, height = image.size
    x, y, w, h = job.crop
    left = round(x * width)
    top = round(y * height)
    right = max(left + 1, round((x + w) * width))
    bottom = max(top + 1, round((y + h) * height))
    right = min(right, width)
    bottom = min(bottom, height)
    out = image.crop((left, top, right, bottom))
    if job.flip:
        out = ImageOps.mirror(out)
    if job.brightness != 1.0:
        out = ImageEnhance.Brightness(out).enhance(job.brightness)
    if job.contrast != 1.0:
        out = ImageEnhance.Contrast(out).enhance(job.contrast)
    if job.saturation != 1.0:
        out = ImageEnhance.Color(out).enhance(job.saturation)
    return out.resize((target_size, target_size), Image.BICUBIC)


def encode_pixels(image: Image.Image) -> bytes:
    """Canonical byte serialization of processed pixels for hashing encoders."""
    buf = io.BytesIO()
    image.convert("RGB").save(buf, format="PPM")
    return buf.getvalue()
