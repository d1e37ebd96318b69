"""
影像轉換基本元件

每個轉換分成兩步：sample() 以給定的亂數產生器抽出參數，apply() 只依參數轉換影像。
影像一律為 C×H×W 的 float64 numpy 陣列，值域 [0,1]。
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Any, ClassVar, Dict, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from errors import ConfigError

logger = logging.getLogger(__name__)

Params = Dict[str, Any]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CROP_ATTEMPTS = 10


# ---------------------------------------------------------------------------
# 取樣輔助
# ---------------------------------------------------------------------------

def resize_bilinear(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """
    雙線性縮放（像素中心對齊）

    Args:
        image: C×H×W
        size: 目標 (H, W)
    """
    _, height, width = image.shape
    out_h, out_w = size
    if (height, width) == (out_h, out_w):
        return image.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * height / out_h - 0.5, 0, height - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * width / out_w - 0.5, 0, width - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def sample_bilinear(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """在任意座標做雙線性取樣，影像外以 0 填補"""
    _, height, width = image.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    dy = ys - y0
    dx = xs - x0

    def fetch(yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        valid = (yy >= 0) & (yy < height) & (xx >= 0) & (xx < width)
        values = image[:, np.clip(yy, 0, height - 1), np.clip(xx, 0, width - 1)]
        return np.where(valid[None], values, 0.0)

    return (fetch(y0, x0) * ((1 - dy) * (1 - dx))[None]
            + fetch(y0, x0 + 1) * ((1 - dy) * dx)[None]
            + fetch(y0 + 1, x0) * (dy * (1 - dx))[None]
            + fetch(y0 + 1, x0 + 1) * (dy * dx)[None])


def grayscale_of(image: np.ndarray) -> np.ndarray:
    """亮度（1×H×W）；單通道影像原樣回傳"""
    if image.shape[0] == 1:
        return image.copy()
    return np.tensordot(LUMA_WEIGHTS, image, axes=([0], [0]))[None]


# ---------------------------------------------------------------------------
# 轉換基底
# ---------------------------------------------------------------------------

@dataclass
class Transform:
    """轉換基底類別；子類別的欄位即為可覆寫的參數範圍"""
    name: ClassVar[str] = "transform"

    def sample(self, rng: np.random.Generator, shape: Tuple[int, ...]) -> Params:
        return {}

    def apply(self, image: np.ndarray, params: Params) -> np.ndarray:
        raise NotImplementedError

    def with_overrides(self, overrides: Dict[str, Any]) -> "Transform":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"{self.name}: 未知參數 {', '.join(unknown)}")
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in overrides.items():
            values[key] = tuple(value) if isinstance(value, list) else value
        return type(self)(**values)


@dataclass
class RandomResizedCrop(Transform):
    """隨機面積與長寬比裁切後縮放至輸出尺寸"""
    name: ClassVar[str] = "random_resized_crop"
    scale: Tuple[float, float] = (0.08, 1.0)
    ratio: Tuple[float, float] = (3 / 4, 4 / 3)
    output_size: Tuple[int, int] = (32, 32)

    def sample(self, rng, shape):
        _, height, width = shape
        if tuple(self.scale) == (1.0, 1.0):
            return {"top": 0, "left": 0, "height": height, "width": width, "fallback": False}
        area = height * width
        log_low, log_high = math.log(self.ratio[0]), math.log(self.ratio[1])
        for _ in range(CROP_ATTEMPTS):
            target = area * rng.uniform(self.scale[0], self.scale[1])
            aspect = math.exp(rng.uniform(log_low, log_high))
            crop_w = int(round(math.sqrt(target * aspect)))
            crop_h = int(round(math.sqrt(target / aspect)))
            if 0 < crop_w <= width and 0 < crop_h <= height:
                top = int(rng.integers(0, height - crop_h + 1))
                left = int(rng.integers(0, width - crop_w + 1))
                return {"top": top, "left": left, "height": crop_h, "width": crop_w,
                        "fallback": False}
        logger.warning("random_resized_crop: %d 次嘗試皆無法在 %s 影像中取得裁切窗，改為整張縮放",
                       CROP_ATTEMPTS, shape)
        return {"top": 0, "left": 0, "height": height, "width": width, "fallback": True}

    def apply(self, image, params):
        top, left = params["top"], params["left"]
        window = image[:, top:top + params["height"], left:left + params["width"]]
        return resize_bilinear(window, tuple(self.output_size))


@dataclass
class Resize(Transform):
    name: ClassVar[str] = "resize"
    output_size: Tuple[int, int] = (32, 32)

    def apply(self, image, params):
        return resize_bilinear(image, tuple(self.output_size))


@dataclass
class HorizontalFlip(Transform):
    name: ClassVar[str] = "hflip"
    p: float = 0.5

    def sample(self, rng, shape):
        return {"flip": bool(rng.random() < self.p)}

    def apply(self, image, params):
        return image[:, :, ::-1].copy() if params["flip"] else image


@dataclass
class VerticalFlip(Transform):
    name: ClassVar[str] = "vflip"
    p: float = 0.5

    def sample(self, rng, shape):
        return {"flip": bool(rng.random() < self.p)}

    def apply(self, image, params):
        return image[:, ::-1, :].copy() if params["flip"] else image


@dataclass
class Rotate(Transform):
    """以影像中心旋轉 U(−max_degrees, max_degrees)，雙線性取樣、外部補 0"""
    name: ClassVar[str] = "rotate"
    max_degrees: float = 45.0
    p: float = 1.0

    def sample(self, rng, shape):
        apply = bool(rng.random() < self.p)
        angle = float(rng.uniform(-self.max_degrees, self.max_degrees)) if apply else 0.0
        return {"degrees": angle}

    def apply(self, image, params):
        angle = params["degrees"]
        if angle == 0.0:
            return image.copy()
        _, height, width = image.shape
        theta = math.radians(angle)
        cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
        ys, xs = np.meshgrid(np.arange(height) - cy, np.arange(width) - cx, indexing="ij")
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        src_x = cos_t * xs + sin_t * ys + cx
        src_y = -sin_t * xs + cos_t * ys + cy
        return sample_bilinear(image, src_y, src_x)


@dataclass
class ColorJitter(Transform):
    """
    色彩扭曲：亮度、對比、飽和度各 ±0.8·strength，色相 ±0.2·strength
    """
    name: ClassVar[str] = "color_jitter"
    strength: float = 1.0
    p: float = 0.8

    def sample(self, rng, shape):
        apply = bool(rng.random() < self.p)
        spread = 0.8 * self.strength
        factors = rng.uniform(max(0.0, 1 - spread), 1 + spread, size=3)
        hue = float(rng.uniform(-0.2 * self.strength, 0.2 * self.strength))
        return {"apply": apply, "brightness": float(factors[0]), "contrast": float(factors[1]),
                "saturation": float(factors[2]), "hue": hue}

    def apply(self, image, params):
        if not params["apply"]:
            return image
        out = np.clip(image * params["brightness"], 0, 1)
        gray_mean = float(grayscale_of(out).mean())
        out = np.clip((out - gray_mean) * params["contrast"] + gray_mean, 0, 1)
        if out.shape[0] != 3:
            return out
        gray = grayscale_of(out)
        out = np.clip(gray + (out - gray) * params["saturation"], 0, 1)
        if params["hue"] != 0.0:
            hsv = rgb_to_hsv(out.transpose(1, 2, 0))
            hsv[..., 0] = np.mod(hsv[..., 0] + params["hue"], 1.0)
            out = hsv_to_rgb(hsv).transpose(2, 0, 1)
        return out


@dataclass
class RandomGrayscale(Transform):
    name: ClassVar[str] = "grayscale"
    p: float = 0.2

    def sample(self, rng, shape):
        return {"apply": bool(rng.random() < self.p)}

    def apply(self, image, params):
        if not params["apply"] or image.shape[0] == 1:
            return image
        return np.repeat(grayscale_of(image), image.shape[0], axis=0)


@dataclass
class BrightnessAdditive(Transform):
    """加性亮度調整 x + δ，δ ~ U(−max_delta, max_delta)"""
    name: ClassVar[str] = "brightness_additive"
    max_delta: float = 0.2
    p: float = 1.0

    def sample(self, rng, shape):
        apply = bool(rng.random() < self.p)
        delta = float(rng.uniform(-self.max_delta, self.max_delta))
        return {"delta": delta if apply else 0.0}

    def apply(self, image, params):
        return image + params["delta"]


@dataclass
class ContrastMultiplicative(Transform):
    """以各通道平均為中心乘上 (1+s)，s ~ U(−max_s, max_s)"""
    name: ClassVar[str] = "contrast_multiplicative"
    max_s: float = 0.2
    p: float = 1.0

    def sample(self, rng, shape):
        apply = bool(rng.random() < self.p)
        s = float(rng.uniform(-self.max_s, self.max_s))
        return {"s": s if apply else 0.0}

    def apply(self, image, params):
        means = image.mean(axis=(1, 2), keepdims=True)
        return (image - means) * (1.0 + params["s"]) + means


@dataclass
class GaussianBlur(Transform):
    """高斯模糊；核大小約為影像邊長的 kernel_fraction，取奇數"""
    name: ClassVar[str] = "gaussian_blur"
    p: float = 0.5
    sigma: Tuple[float, float] = (0.1, 2.0)
    kernel_fraction: float = 0.1

    def sample(self, rng, shape):
        apply = bool(rng.random() < self.p)
        sigma = float(rng.uniform(self.sigma[0], self.sigma[1]))
        return {"apply": apply, "sigma": sigma}

    def kernel_size(self, side: int) -> int:
        size = max(3, int(round(self.kernel_fraction * side)))
        return size if size % 2 == 1 else size + 1

    def apply(self, image, params):
        if not params["apply"]:
            return image
        _, height, width = image.shape
        out = image
        for axis, side in ((1, height), (2, width)):
            size = min(self.kernel_size(side), 2 * (side - 1) + 1)
            radius = size // 2
            offsets = np.arange(size) - radius
            weights = np.exp(-(offsets ** 2) / (2.0 * params["sigma"] ** 2))
            weights /= weights.sum()
            pad = [(0, 0)] * 3
            pad[axis] = (radius, radius)
            padded = np.pad(out, pad, mode="reflect")
            blurred = np.zeros_like(out)
            for index, weight in enumerate(weights):
                window = [slice(None)] * 3
                window[axis] = slice(index, index + side)
                blurred += weight * padded[tuple(window)]
            out = blurred
        return out


TRANSFORMS = {
    cls.name: cls
    for cls in (RandomResizedCrop, Resize, HorizontalFlip, VerticalFlip, Rotate, ColorJitter,
                RandomGrayscale, BrightnessAdditive, ContrastMultiplicative, GaussianBlur)
}


__all__ = [
    'Transform',
    'RandomResizedCrop',
    'Resize',
    'HorizontalFlip',
    'VerticalFlip',
    'Rotate',
    'ColorJitter',
    'RandomGrayscale',
    'BrightnessAdditive',
    'ContrastMultiplicative',
    'GaussianBlur',
    'TRANSFORMS',
    'resize_bilinear',
    'sample_bilinear',
    'grayscale_of',
]
