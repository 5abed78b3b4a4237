"""
Augmentation - Geometric transforms for candling images
Rotation, flips, shear, rescale and translation, plus a seeded sampler that
draws transform instances from a policy's ranges
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from skimage.transform import warp

from .errors import InvalidTransform
from .seeding import seed_sequence

TECHNIQUES = ("rotation", "flip", "scale", "translation", "reflection")


class AugmentationPolicy(BaseModel):
    """Parameter ranges for the five transforms"""

    model_config = ConfigDict(frozen=True)

    rotation_range_deg: Tuple[float, float] = (-5.0, 5.0)
    x_reflection: bool = True
    y_reflection: bool = True
    shear_range_deg: Tuple[float, float] = (-5.0, 5.0)
    scale_range: Tuple[float, float] = (0.9, 1.1)
    translation_range_frac: Tuple[float, float] = (-0.05, 0.05)
    fill_value: int = Field(0, ge=0, le=255)

    @model_validator(mode="after")
    def _check_ranges(self) -> "AugmentationPolicy":
        for name in ("rotation_range_deg", "shear_range_deg", "scale_range", "translation_range_frac"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name}: min {low} exceeds max {high}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale factors must be positive")
        if self.translation_range_frac[0] < -0.5 or self.translation_range_frac[1] > 0.5:
            raise ValueError("translation fractions must lie in [-0.5, 0.5]")
        if max(abs(v) for v in self.shear_range_deg) >= 90:
            raise ValueError("shear angles must lie strictly inside (-90, 90)")
        return self


class TransformInstance(BaseModel):
    """One concrete draw from an AugmentationPolicy"""

    model_config = ConfigDict(frozen=True)

    rotation_deg: float = 0.0
    flip_x: bool = False
    flip_y: bool = False
    shear_x_deg: float = 0.0
    shear_y_deg: float = 0.0
    scale: float = 1.0
    translate_x_px: int = 0
    translate_y_px: int = 0

    @property
    def is_identity(self) -> bool:
        return self == TransformInstance()


def identity_policy(fill_value: int = 0) -> AugmentationPolicy:
    """Policy whose only draw is the identity transform"""
    return AugmentationPolicy(
        rotation_range_deg=(0.0, 0.0),
        x_reflection=False,
        y_reflection=False,
        shear_range_deg=(0.0, 0.0),
        scale_range=(1.0, 1.0),
        translation_range_frac=(0.0, 0.0),
        fill_value=fill_value,
    )


def single_technique_policy(policy: AugmentationPolicy, technique: Optional[str]) -> AugmentationPolicy:
    """
    Keep one technique's ranges from policy and collapse the rest

    'flip' keeps horizontal reflection, 'reflection' keeps vertical reflection
    and 'scale' keeps both rescale and shear ranges. None gives the identity
    policy.
    """
    base = identity_policy(policy.fill_value)
    if technique is None:
        return base
    if technique not in TECHNIQUES:
        raise InvalidTransform(f"Unknown augmentation technique '{technique}'")
    keep = {
        "rotation": {"rotation_range_deg": policy.rotation_range_deg},
        "flip": {"x_reflection": policy.x_reflection},
        "reflection": {"y_reflection": policy.y_reflection},
        "scale": {"scale_range": policy.scale_range, "shear_range_deg": policy.shear_range_deg},
        "translation": {"translation_range_frac": policy.translation_range_frac},
    }[technique]
    return base.model_copy(update=keep)


# Affine helpers in (x = column, y = row) homogeneous coordinates


def _center(image: np.ndarray) -> Tuple[float, float]:
    return (image.shape[1] - 1) / 2.0, (image.shape[0] - 1) / 2.0


def _about_center(linear: np.ndarray, center: Tuple[float, float]) -> np.ndarray:
    cx, cy = center
    to_origin = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    return back @ linear @ to_origin


def _rotation_matrix(angle_deg: float, center: Tuple[float, float]) -> np.ndarray:
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # counter-clockwise on screen with rows growing downwards
    linear = np.array([[cos_t, sin_t, 0.0], [-sin_t, cos_t, 0.0], [0.0, 0.0, 1.0]])
    return _about_center(linear, center)


def _shear_matrix(shear_x_deg: float, shear_y_deg: float, center: Tuple[float, float]) -> np.ndarray:
    for value in (shear_x_deg, shear_y_deg):
        if not math.isfinite(value) or abs(value) >= 90.0:
            raise InvalidTransform(f"Shear angle must lie strictly inside (-90, 90) degrees, got {value}")
    linear = np.array([
        [1.0, math.tan(math.radians(shear_x_deg)), 0.0],
        [math.tan(math.radians(shear_y_deg)), 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return _about_center(linear, center)


def _scale_matrix(factor: float, center: Tuple[float, float]) -> np.ndarray:
    if not math.isfinite(factor) or factor <= 0:
        raise InvalidTransform(f"Scale factor must be positive, got {factor}")
    return _about_center(np.diag([factor, factor, 1.0]), center)


def _translation_matrix(image: np.ndarray, dx: float, dy: float) -> np.ndarray:
    height, width = image.shape[:2]
    if abs(dx) > width / 2.0 or abs(dy) > height / 2.0:
        raise InvalidTransform(f"Shift ({dx}, {dy}) exceeds half the image size {width}x{height}")
    return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])


def _warp(image: np.ndarray, forward: np.ndarray, fill_value: int) -> np.ndarray:
    """Bilinear resampling of image under a forward affine map"""
    if np.array_equal(forward, np.eye(3)):
        return image.copy()
    warped = warp(
        image,
        np.linalg.inv(forward),
        order=1,
        mode="constant",
        cval=float(fill_value),
        preserve_range=True,
    )
    return np.clip(np.rint(warped), 0, 255).astype(np.uint8)


def _check_image(image: np.ndarray) -> None:
    if image.size == 0 or image.ndim not in (2, 3):
        raise InvalidTransform(f"Expected a non-empty image, got shape {image.shape}")


# Transforms


def rotate(image: np.ndarray, angle_deg: float, fill_value: int = 0) -> np.ndarray:
    """Rotate about the image center; exposed corners take fill_value"""
    _check_image(image)
    if angle_deg == 0:
        return image.copy()
    return _warp(image, _rotation_matrix(angle_deg, _center(image)), fill_value)


def flip(image: np.ndarray, axis: str) -> np.ndarray:
    """
    Mirror an image exactly

    Args:
        image: Input image
        axis: 'horizontal' reverses columns, 'vertical' reverses rows
    """
    _check_image(image)
    if axis == "horizontal":
        return image[:, ::-1].copy()
    if axis == "vertical":
        return image[::-1].copy()
    raise InvalidTransform(f"Unknown flip axis '{axis}'")


def shear(image: np.ndarray, shear_x_deg: float, shear_y_deg: float, fill_value: int = 0) -> np.ndarray:
    """Shear about the image center along x and y"""
    _check_image(image)
    matrix = _shear_matrix(shear_x_deg, shear_y_deg, _center(image))
    return _warp(image, matrix, fill_value)


def rescale(image: np.ndarray, factor: float, fill_value: int = 0) -> np.ndarray:
    """Scale content about the center on an unchanged canvas"""
    _check_image(image)
    return _warp(image, _scale_matrix(factor, _center(image)), fill_value)


def translate(image: np.ndarray, dx_px: float, dy_px: float, fill_value: int = 0) -> np.ndarray:
    """Shift content by (dx, dy) pixels; vacated pixels take fill_value"""
    _check_image(image)
    return _warp(image, _translation_matrix(image, dx_px, dy_px), fill_value)


def transform_matrix(image: np.ndarray, t: TransformInstance) -> np.ndarray:
    """Forward affine map of rotate -> shear -> rescale -> translate"""
    center = _center(image)
    matrix = _rotation_matrix(t.rotation_deg, center)
    matrix = _shear_matrix(t.shear_x_deg, t.shear_y_deg, center) @ matrix
    matrix = _scale_matrix(t.scale, center) @ matrix
    return _translation_matrix(image, t.translate_x_px, t.translate_y_px) @ matrix


def apply(image: np.ndarray, t: TransformInstance, fill_value: int = 0) -> np.ndarray:
    """
    Apply a transform instance

    Flips run first as exact reversals; rotation, shear, rescale and
    translation are composed in that order and resampled once.

    Args:
        image: H x W (x C) uint8 image
        t: Transform instance
        fill_value: Intensity for exposed pixels

    Returns:
        Transformed image with the input's dimensions
    """
    _check_image(image)
    out = image
    if t.flip_x:
        out = flip(out, "horizontal")
    if t.flip_y:
        out = flip(out, "vertical")
    return _warp(out, transform_matrix(out, t), fill_value)


# Sampling


def sample_transform(
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    image_size: Tuple[int, int]
) -> TransformInstance:
    """
    Draw one transform instance

    Every field is drawn on every call, so the generator advances by the same
    amount whatever the policy switches are.

    Args:
        policy: Ranges and switches
        rng: Generator advanced in place
        image_size: (height, width) used to turn translation fractions into pixels
    """
    height, width = image_size
    rotation = float(rng.uniform(*policy.rotation_range_deg))
    flip_x = bool(rng.random() < 0.5)
    flip_y = bool(rng.random() < 0.5)
    shear_x = float(rng.uniform(*policy.shear_range_deg))
    shear_y = float(rng.uniform(*policy.shear_range_deg))
    scale = float(rng.uniform(*policy.scale_range))
    frac_x = float(rng.uniform(*policy.translation_range_frac))
    frac_y = float(rng.uniform(*policy.translation_range_frac))
    return TransformInstance(
        rotation_deg=rotation,
        flip_x=flip_x and policy.x_reflection,
        flip_y=flip_y and policy.y_reflection,
        shear_x_deg=shear_x,
        shear_y_deg=shear_y,
        scale=scale,
        translate_x_px=int(round(frac_x * width)),
        translate_y_px=int(round(frac_y * height)),
    )


class AugmentationSampler:
    """Sequential transform sampler; one per worker, never shared across threads"""

    def __init__(self, policy: AugmentationPolicy, base_seed: int, worker_index: int = 0):
        """
        Initialize sampler

        Args:
            policy: Augmentation policy
            base_seed: Run-level augmentation seed
            worker_index: Index mixed into the seed
        """
        self.policy = policy
        self._rng = np.random.default_rng(seed_sequence([base_seed, worker_index]))

    def sample(self, image_size: Tuple[int, int]) -> TransformInstance:
        return sample_transform(self.policy, self._rng, image_size)

    def augment(self, image: np.ndarray) -> np.ndarray:
        """Draw an instance for this image and apply it"""
        t = self.sample(image.shape[:2])
        return apply(image, t, self.policy.fill_value)


def contact_sheet(tiles: Sequence[np.ndarray], cols: int, gutter: int = 2) -> np.ndarray:
    """Arrange equally sized tiles in a grid separated by black gutters"""
    if not tiles:
        raise InvalidTransform("Contact sheet needs at least one tile")
    height, width = tiles[0].shape[:2]
    rows = math.ceil(len(tiles) / cols)
    channels = tiles[0].shape[2:] if tiles[0].ndim == 3 else ()
    sheet = np.zeros(
        (rows * height + (rows - 1) * gutter, cols * width + (cols - 1) * gutter) + channels,
        dtype=np.uint8,
    )
    for index, tile in enumerate(tiles):
        r, c = divmod(index, cols)
        top, left = r * (height + gutter), c * (width + gutter)
        sheet[top:top + height, left:left + width] = tile
    return sheet


def grid_shape(n: int) -> Tuple[int, int]:
    """Rows and columns of the most square grid holding n tiles"""
    cols = math.ceil(math.sqrt(n))
    return math.ceil(n / cols), cols


def preview_tiles(
    image: np.ndarray,
    policy: AugmentationPolicy,
    n: int,
    seed: int
) -> List[np.ndarray]:
    """n augmented variants of one image from a fresh sampler"""
    sampler = AugmentationSampler(policy, seed)
    return [sampler.augment(image) for _ in range(n)]
