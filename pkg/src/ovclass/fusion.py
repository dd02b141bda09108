"""Multi-modal fusion, the mean-vector baseline, and TTA job planning."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ValidationError
from .exemplars import ExemplarCatalog

_ANTIPODAL_EPS = 1e-6


def _unit(vector: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateInputError(f"{name} is a zero vector; direction undefined")
    return v / norm


def fuse_multimodal(w_text: np.ndarray, w_img: np.ndarray) -> np.ndarray:
    """Sum of the L2-normalized per-modality classifiers."""
    t = np.asarray(w_text, dtype=np.float64)
    v = np.asarray(w_img, dtype=np.float64)
    if t.shape != v.shape:
        raise ValidationError(f"modality dimensions differ: {t.shape} vs {v.shape}")
    fused = _unit(t, "text classifier") + _unit(v, "vision classifier")
    if float(np.linalg.norm(fused)) < _ANTIPODAL_EPS:
        raise DegenerateInputError("antipodal classifiers fuse to zero")
    return fused


def mean_baseline(exemplars: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Component-wise mean of exemplar embeddings, L2-normalized."""
    matrix = np.asarray(exemplars, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValidationError("mean baseline needs a nonempty (k, dim) matrix")
    mean = matrix.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise DegenerateInputError("exemplar mean is the zero vector")
    return mean / norm


# ---------------------------------------------------------------------------
# test-time augmentation planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TtaRecipe:
    name: str
    variants: int = 5
    crop_scale: tuple[float, float] = (0.8, 1.0)
    horizontal_flip: bool = True
    jitter: float = 0.4  # max fractional change of brightness/contrast/saturation

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"invalid crop scale range {self.crop_scale}")
        if self.variants < 1:
            raise ConfigError("variants must be >= 1")
        if not 0.0 <= self.jitter < 1.0:
            raise ConfigError("jitter must lie in [0, 1)")


_RECIPES = {
    "none": TtaRecipe("none", variants=1, crop_scale=(1.0, 1.0),
                      horizontal_flip=False, jitter=0.0),
    "harsh": TtaRecipe("harsh", variants=5, crop_scale=(0.5, 1.0)),
    "gentle": TtaRecipe("gentle", variants=5, crop_scale=(0.8, 1.0)),
}

_ASPECT_LO, _ASPECT_HI = 3.0 / 4.0, 4.0 / 3.0


def get_recipe(name: str) -> TtaRecipe:
    try:
        return _RECIPES[name]
    except KeyError:
        raise ConfigError(f"unknown TTA recipe {name!r}") from None


@dataclass(frozen=True)
class TtaJob:
    class_id: str
    exemplar_id: str
    variant: int
    crop: tuple[float, float, float, float]  # x, y, w, h fractions
    flip: bool
    brightness: float
    contrast: float
    saturation: float

    def to_json_obj(self) -> dict:
        return {
            "class": self.class_id,
            "exemplar": self.exemplar_id,
            "variant": self.variant,
            "crop": list(self.crop),
            "flip": self.flip,
            "jitter": {
                "brightness": self.brightness,
                "contrast": self.contrast,
                "saturation": self.saturation,
            },
        }


def _sample_crop(rng: np.random.Generator, scale_lo: float, scale_hi: float
                 ) -> tuple[float, float, float, float]:
    """Random-resized-crop rectangle whose area fraction always stays inside
    [scale_lo, scale_hi]: the aspect ratio is clamped so neither side
    exceeds the frame."""
    area = float(rng.uniform(scale_lo, scale_hi))
    ratio_lo = max(_ASPECT_LO, area)
    ratio_hi = min(_ASPECT_HI, 1.0 / area)
    ratio = float(np.exp(rng.uniform(np.log(ratio_lo), np.log(ratio_hi))))
    w = float(np.sqrt(area * ratio))
    h = float(np.sqrt(area / ratio))
    x = float(rng.uniform(0.0, 1.0 - w)) if w < 1.0 else 0.0
    y = float(rng.uniform(0.0, 1.0 - h)) if h < 1.0 else 0.0
    return (x, y, w, h)


def plan_tta(catalog: ExemplarCatalog, recipe: TtaRecipe, seed: int
             ) -> tuple[list[TtaJob], list[dict]]:
    """Expand each catalog class into variants x exemplars augmentation jobs.

    Classes with zero exemplars are skipped and reported. Identity recipes
    emit one identity job per exemplar.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    jobs: list[TtaJob] = []
    skipped: list[dict] = []
    identity = recipe.name == "none"
    for class_id in sorted(catalog.entries):
        entry = catalog.entries[class_id]
        if entry.count == 0:
            skipped.append({"class": class_id, "reason": "no exemplars", "tier": entry.tier})
            continue
        for exemplar_id, _source in entry.exemplars:
            for variant in range(recipe.variants):
                if identity:
                    jobs.append(TtaJob(class_id, exemplar_id, variant,
                                       (0.0, 0.0, 1.0, 1.0), False, 1.0, 1.0, 1.0))
                    continue
                crop = _sample_crop(rng, *recipe.crop_scale)
                flip = bool(rng.uniform() < 0.5) if recipe.horizontal_flip else False
                j = recipe.jitter
                factors = [float(rng.uniform(1.0 - j, 1.0 + j)) for _ in range(3)]
                jobs.append(TtaJob(class_id, exemplar_id, variant, crop, flip, *factors))
    return jobs, skipped


def jobs_to_jsonl(jobs: list[TtaJob]) -> str:
    return "\n".join(json.dumps(j.to_json_obj(), sort_keys=True) for j in jobs) + ("\n" if jobs else "")
