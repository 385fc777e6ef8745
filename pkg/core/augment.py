"""
AugRL Bench - Image transformations on frame stacks
Parameterized transforms T_ψ, their identity ψ₀, sampling distributions over
Ψ and finite-difference tangent vectors used by tangent prop.

A frame stack is a float array of shape (c, h, w) with values in [0, 1];
every frame of a stack receives the same parameter.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import product
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from config.settings import (
    SHIFT_MAX_PAD,
    OVERLAY_BETA,
    RANDCONV_KERNEL_SIZE,
    ROTATION_ANGLES,
    BLUR_SIGMA_RANGE,
    BLUR_KERNEL_SIZE,
    COMPLEX_TRANSFORM_KINDS,
    TANGENT_STEPS,
    TEXTURE_CELL,
)
from core.errors import InvalidInputError, ParameterDomainError, UnsupportedError
from utils.logger import get_logger

logger = get_logger(__name__)

FrameStack = np.ndarray
INFINITE = "infinite"


class TransformKind(str, Enum):
    NONE = "none"
    SHIFT = "shift"
    OVERLAY = "overlay"
    RANDCONV = "randconv"
    ROTATION = "rotation"
    BLUR = "blur"


# ==================== PARAMETERS ====================

@dataclass(frozen=True)
class NoneParam:
    kind = TransformKind.NONE


@dataclass(frozen=True)
class ShiftParam:
    dx: int = 0
    dy: int = 0
    kind = TransformKind.SHIFT


@dataclass(frozen=True)
class OverlayParam:
    seed: int = 0
    beta: float = 0.0
    kind = TransformKind.OVERLAY


@dataclass(frozen=True)
class RandConvParam:
    weights: Tuple[float, ...] = ()
    kind = TransformKind.RANDCONV


@dataclass(frozen=True)
class RotationParam:
    angle: int = 0
    kind = TransformKind.ROTATION


@dataclass(frozen=True)
class BlurParam:
    sigma: float = 0.0
    kind = TransformKind.BLUR


TransformParam = Union[NoneParam, ShiftParam, OverlayParam, RandConvParam, RotationParam, BlurParam]

_PARAM_TYPES = {
    TransformKind.NONE: NoneParam,
    TransformKind.SHIFT: ShiftParam,
    TransformKind.OVERLAY: OverlayParam,
    TransformKind.RANDCONV: RandConvParam,
    TransformKind.ROTATION: RotationParam,
    TransformKind.BLUR: BlurParam,
}


def format_param(param: TransformParam) -> str:
    """Canonical text form, e.g. `shift:dx=2,dy=-1`"""
    if isinstance(param, NoneParam):
        return "none"
    if isinstance(param, ShiftParam):
        return f"shift:dx={param.dx},dy={param.dy}"
    if isinstance(param, OverlayParam):
        return f"overlay:seed={param.seed},beta={param.beta!r}"
    if isinstance(param, RandConvParam):
        return "randconv:w=" + "|".join(repr(float(w)) for w in param.weights)
    if isinstance(param, RotationParam):
        return f"rotation:angle={param.angle}"
    if isinstance(param, BlurParam):
        return f"blur:sigma={param.sigma!r}"
    raise ParameterDomainError(f"not a transform parameter: {param!r}")


def _split_fields(text: str) -> Tuple[str, dict]:
    kind, _, body = text.strip().partition(":")
    fields = {}
    if body:
        for item in body.split(","):
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ParameterDomainError(f"malformed field {item!r} in {text!r}")
            fields[key.strip()] = value.strip()
    return kind.strip().lower(), fields


def parse_param(text: str) -> TransformParam:
    """Inverse of format_param"""
    kind, fields = _split_fields(text)
    try:
        if kind == "none":
            param = NoneParam()
        elif kind == "shift":
            param = ShiftParam(dx=int(fields.pop("dx", 0)), dy=int(fields.pop("dy", 0)))
        elif kind == "overlay":
            param = OverlayParam(seed=int(fields.pop("seed", 0)), beta=float(fields.pop("beta", 0.0)))
        elif kind == "randconv":
            raw = fields.pop("w", "")
            param = RandConvParam(weights=tuple(float(w) for w in raw.split("|") if w))
        elif kind == "rotation":
            param = RotationParam(angle=int(fields.pop("angle", 0)))
        elif kind == "blur":
            param = BlurParam(sigma=float(fields.pop("sigma", 0.0)))
        else:
            raise ParameterDomainError(f"unknown transform kind {kind!r}")
    except ValueError as e:
        if isinstance(e, ParameterDomainError):
            raise
        raise ParameterDomainError(f"cannot parse {text!r}: {e}")
    if fields:
        raise ParameterDomainError(f"unknown fields for {kind}: {sorted(fields)}")
    return param


# ==================== SPECS ====================

@dataclass(frozen=True)
class TransformSpec:
    """
    A transform family T with its bounds.

    `region` = (row0, row1, col0, col1) restricts the transform to a
    sub-image; pixels outside it are passed through untouched.
    """
    kind: TransformKind
    max_pad: int = SHIFT_MAX_PAD
    beta: float = OVERLAY_BETA
    kernel_size: int = RANDCONV_KERNEL_SIZE
    angles: Tuple[int, ...] = ROTATION_ANGLES
    sigma_range: Tuple[float, float] = BLUR_SIGMA_RANGE
    blur_kernel: int = BLUR_KERNEL_SIZE
    region: Optional[Tuple[int, int, int, int]] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", TransformKind(self.kind))
        except ValueError:
            raise ParameterDomainError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "angles", tuple(int(a) for a in self.angles))
        object.__setattr__(self, "sigma_range", tuple(float(s) for s in self.sigma_range))
        if self.max_pad < 0:
            raise ParameterDomainError(f"max_pad must be >= 0, got {self.max_pad}")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterDomainError(f"overlay beta must lie in [0, 1], got {self.beta}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterDomainError(f"randconv kernel size must be odd, got {self.kernel_size}")
        if any(a not in ROTATION_ANGLES for a in self.angles) or 0 not in self.angles:
            raise ParameterDomainError(f"rotation angles must be quarter turns including 0: {self.angles}")
        lo, hi = self.sigma_range
        if not 0.0 <= lo <= hi:
            raise ParameterDomainError(f"invalid blur sigma range {self.sigma_range}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ParameterDomainError(f"blur kernel must be odd, got {self.blur_kernel}")
        if self.region is not None:
            r0, r1, c0, c1 = (int(v) for v in self.region)
            if not (0 <= r0 < r1 and 0 <= c0 < c1):
                raise ParameterDomainError(f"empty transform region {self.region}")
            object.__setattr__(self, "region", (r0, r1, c0, c1))

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        """`shift`, `shift:max_pad=2`, `blur:sigma_min=0.1,sigma_max=1.5`, ..."""
        kind, fields = _split_fields(text)
        kwargs = {}
        try:
            if "max_pad" in fields:
                kwargs["max_pad"] = int(fields.pop("max_pad"))
            if "beta" in fields:
                kwargs["beta"] = float(fields.pop("beta"))
            if "kernel_size" in fields:
                kwargs["kernel_size"] = int(fields.pop("kernel_size"))
            if "sigma_min" in fields or "sigma_max" in fields:
                kwargs["sigma_range"] = (
                    float(fields.pop("sigma_min", BLUR_SIGMA_RANGE[0])),
                    float(fields.pop("sigma_max", BLUR_SIGMA_RANGE[1])),
                )
        except ValueError as e:
            raise ParameterDomainError(f"cannot parse transform spec {text!r}: {e}")
        if fields:
            raise ParameterDomainError(f"unknown spec fields: {sorted(fields)}")
        return cls(kind=kind, **kwargs)

    @property
    def is_finite(self) -> bool:
        return self.kind in (TransformKind.NONE, TransformKind.SHIFT, TransformKind.ROTATION)

    @property
    def is_complex(self) -> bool:
        return self.kind.value in COMPLEX_TRANSFORM_KINDS

    @property
    def supports_tangent(self) -> bool:
        return self.kind in (TransformKind.SHIFT, TransformKind.BLUR, TransformKind.OVERLAY)

    def identity(self) -> TransformParam:
        """ψ₀ of this family"""
        if self.kind == TransformKind.RANDCONV:
            k = self.kernel_size
            weights = np.zeros(k * k)
            weights[(k * k) // 2] = 1.0
            return RandConvParam(weights=tuple(float(w) for w in weights))
        return _PARAM_TYPES[self.kind]()


def check_param(spec: TransformSpec, param: TransformParam) -> None:
    """Raise ParameterDomainError unless param lies inside spec's bounds"""
    expected = _PARAM_TYPES[spec.kind]
    if not isinstance(param, expected):
        raise ParameterDomainError(
            f"{type(param).__name__} does not belong to a {spec.kind.value} transform"
        )
    if isinstance(param, ShiftParam):
        if int(param.dx) != param.dx or int(param.dy) != param.dy:
            raise ParameterDomainError(f"shift offsets must be integers: {param}")
        if abs(param.dx) > spec.max_pad or abs(param.dy) > spec.max_pad:
            raise ParameterDomainError(f"shift {param} exceeds max_pad={spec.max_pad}")
    elif isinstance(param, OverlayParam):
        if param.seed < 0 or not 0.0 <= param.beta <= 1.0:
            raise ParameterDomainError(f"overlay {param} outside seed >= 0, beta in [0, 1]")
    elif isinstance(param, RandConvParam):
        if len(param.weights) != spec.kernel_size ** 2:
            raise ParameterDomainError(
                f"randconv needs {spec.kernel_size ** 2} weights, got {len(param.weights)}"
            )
        if not np.all(np.isfinite(param.weights)):
            raise ParameterDomainError("randconv weights must be finite")
    elif isinstance(param, RotationParam):
        if param.angle not in spec.angles:
            raise ParameterDomainError(f"rotation angle {param.angle} not in {spec.angles}")
    elif isinstance(param, BlurParam):
        if not 0.0 <= param.sigma <= spec.sigma_range[1]:
            raise ParameterDomainError(
                f"blur sigma {param.sigma} outside [0, {spec.sigma_range[1]}]"
            )


# ==================== KERNELS AND TEXTURES ====================

def gaussian_kernel_1d(sigma: float, size: int = BLUR_KERNEL_SIZE) -> np.ndarray:
    """Truncated, normalized Gaussian; sigma = 0 gives the unit impulse"""
    half = size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    spread = 2.0 * sigma ** 2
    # sigma**2 can underflow to 0 for tiny positive sigma
    if not spread > 0.0:
        return (offsets == 0).astype(np.float64)
    kernel = np.exp(-(offsets ** 2) / spread)
    return kernel / kernel.sum()


def gaussian_kernel_2d(sigma: float, size: int = BLUR_KERNEL_SIZE) -> np.ndarray:
    k = gaussian_kernel_1d(sigma, size)
    return np.outer(k, k)


@lru_cache(maxsize=256)
def value_noise_texture(seed: int, height: int, width: int) -> np.ndarray:
    """
    Procedural value-noise texture in [0, 1], deterministic in (seed, size).
    Three octaves of bilinearly interpolated lattice noise.
    """
    rng = np.random.default_rng(seed)
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    texture = np.zeros((height, width))
    for cell, weight in ((2 * TEXTURE_CELL, 0.5), (TEXTURE_CELL, 0.3), (max(TEXTURE_CELL // 2, 1), 0.2)):
        lattice = rng.random((height // cell + 2, width // cell + 2))
        grid_r, grid_c = np.meshgrid(rows / cell, cols / cell, indexing="ij")
        texture += weight * ndimage.map_coordinates(lattice, [grid_r, grid_c], order=1, mode="nearest")
    texture = np.clip(texture, 0.0, 1.0)
    texture.flags.writeable = False
    return texture


# ==================== APPLY ====================

def as_frame_stack(x) -> FrameStack:
    x = np.asarray(x)
    if x.ndim != 3 or x.size == 0:
        raise InvalidInputError(f"frame stack must be a nonempty (c, h, w) array, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return x


def is_identity(spec: TransformSpec, param: TransformParam) -> bool:
    if isinstance(param, RandConvParam):
        return param == spec.identity()
    if isinstance(param, OverlayParam):
        return param.beta == 0.0
    return param == _PARAM_TYPES[spec.kind]()


def _shift(x: np.ndarray, param: ShiftParam, pad: int) -> np.ndarray:
    # replicate-edge pad, then crop so that content moves by (+dx, +dy)
    _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    top = pad - param.dy
    left = pad - param.dx
    return padded[:, top:top + h, left:left + w].copy()


def _rotate(x: np.ndarray, param: RotationParam) -> np.ndarray:
    quarter_turns = (param.angle // 90) % 4
    if quarter_turns % 2 == 1 and x.shape[1] != x.shape[2]:
        raise ParameterDomainError(
            f"rotation by {param.angle} needs square frames, got {x.shape[1]}x{x.shape[2]}"
        )
    return np.rot90(x, k=quarter_turns, axes=(1, 2)).copy()


def _correlate(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ndimage.correlate(x, kernel[np.newaxis], mode="nearest")


def _apply_kind(spec: TransformSpec, param: TransformParam, x: np.ndarray) -> np.ndarray:
    if isinstance(param, ShiftParam):
        return _shift(x, param, spec.max_pad)
    if isinstance(param, RotationParam):
        return _rotate(x, param)
    if isinstance(param, BlurParam):
        return _correlate(x, gaussian_kernel_2d(param.sigma, spec.blur_kernel))
    if isinstance(param, RandConvParam):
        k = spec.kernel_size
        return _correlate(x, np.asarray(param.weights, dtype=x.dtype).reshape(k, k))
    if isinstance(param, OverlayParam):
        texture = value_noise_texture(param.seed, x.shape[1], x.shape[2])
        return (1.0 - param.beta) * x + param.beta * texture[np.newaxis]
    return x.copy()


def apply_transform(spec: TransformSpec, param: TransformParam, x: FrameStack) -> FrameStack:
    """
    Apply T_ψ to every frame of x.

    Returns a new array of the same shape and dtype, clamped to [0, 1].
    ψ₀ returns an exact copy of x.
    """
    x = as_frame_stack(x)
    check_param(spec, param)
    if is_identity(spec, param):
        return x.copy()

    if spec.region is None:
        out = _apply_kind(spec, param, x)
    else:
        r0, r1, c0, c1 = spec.region
        if r1 > x.shape[1] or c1 > x.shape[2]:
            raise InvalidInputError(f"transform region {spec.region} exceeds frame {x.shape[1:]}")
        out = x.copy()
        out[:, r0:r1, c0:c1] = _apply_kind(spec, param, np.ascontiguousarray(x[:, r0:r1, c0:c1]))
    return np.clip(out, 0.0, 1.0).astype(x.dtype, copy=False)


def apply_batch(spec: TransformSpec, params: Sequence[TransformParam], xs: np.ndarray) -> np.ndarray:
    """Apply params[i] to xs[i] for a batch of shape (N, c, h, w)"""
    if len(params) != len(xs):
        raise InvalidInputError(f"{len(params)} params for {len(xs)} frame stacks")
    return np.stack([apply_transform(spec, p, x) for p, x in zip(params, xs)])


# ==================== DISTRIBUTIONS ====================

@dataclass(frozen=True)
class ParamDistribution:
    """
    Distribution over Ψ. A finite distribution carries its support and
    weights; support=None is the uniform-continuous law of the family.
    """
    spec: TransformSpec
    support: Optional[Tuple[TransformParam, ...]] = None
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.support is None:
            if self.weights is not None:
                raise InvalidInputError("weights given without a support")
            if self.spec.is_finite:
                raise InvalidInputError(
                    f"{self.spec.kind.value} is finite; use ParamDistribution.uniform"
                )
            return
        support = tuple(self.support)
        if not support:
            raise InvalidInputError("empty support")
        for param in support:
            check_param(self.spec, param)
        weights = self.weights
        if weights is None:
            weights = tuple(1.0 / len(support) for _ in support)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(support):
            raise InvalidInputError(f"{len(weights)} weights for {len(support)} params")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise ParameterDomainError(f"weights must be nonnegative and sum to 1, got {weights}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, spec: TransformSpec) -> "ParamDistribution":
        support = enumerate_params(spec)
        if support == INFINITE:
            return cls(spec=spec)
        return cls(spec=spec, support=tuple(support))

    @classmethod
    def point_mass(cls, spec: TransformSpec, param: TransformParam = None) -> "ParamDistribution":
        param = spec.identity() if param is None else param
        return cls(spec=spec, support=(param,), weights=(1.0,))

    @classmethod
    def from_weights(cls, spec: TransformSpec, support, weights) -> "ParamDistribution":
        return cls(spec=spec, support=tuple(support), weights=tuple(weights))

    @property
    def is_finite(self) -> bool:
        return self.support is not None

    @property
    def is_point_mass(self) -> bool:
        return self.is_finite and sum(1 for w in self.weights if w > 0) == 1

    def probability(self, param: TransformParam) -> float:
        if not self.is_finite:
            raise UnsupportedError("probability of a single point under a continuous law")
        return float(sum(w for p, w in zip(self.support, self.weights) if p == param))


def sample_params(dist: ParamDistribution, n: int, rng: np.random.Generator) -> List[TransformParam]:
    """n i.i.d. draws from dist; deterministic given the stream state"""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    spec = dist.spec
    if dist.is_finite:
        idx = rng.choice(len(dist.support), size=n, p=np.asarray(dist.weights))
        return [dist.support[i] for i in idx]
    if spec.kind == TransformKind.OVERLAY:
        seeds = rng.integers(0, 2 ** 31 - 1, size=n)
        return [OverlayParam(seed=int(s), beta=spec.beta) for s in seeds]
    if spec.kind == TransformKind.RANDCONV:
        k = spec.kernel_size
        draws = rng.normal(0.0, 1.0 / k, size=(n, k * k))
        return [RandConvParam(weights=tuple(float(w) for w in row)) for row in draws]
    if spec.kind == TransformKind.BLUR:
        lo, hi = spec.sigma_range
        return [BlurParam(sigma=float(s)) for s in rng.uniform(lo, hi, size=n)]
    raise UnsupportedError(f"no continuous law for {spec.kind.value}")


def enumerate_params(spec: TransformSpec) -> Union[List[TransformParam], Literal["infinite"]]:
    """All of Ψ for finite families, INFINITE otherwise"""
    if spec.kind == TransformKind.NONE:
        return [NoneParam()]
    if spec.kind == TransformKind.SHIFT:
        r = range(-spec.max_pad, spec.max_pad + 1)
        return [ShiftParam(dx=dx, dy=dy) for dy in r for dx in r]
    if spec.kind == TransformKind.ROTATION:
        return [RotationParam(angle=a) for a in spec.angles]
    return INFINITE


# ==================== TANGENTS ====================

def _tangent_axes(spec: TransformSpec, param: TransformParam, delta) -> List[Tuple[TransformParam, TransformParam, float]]:
    """(upper, lower, step) parameter pairs, one per transform axis"""
    step = TANGENT_STEPS.get(spec.kind.value) if delta is None else delta
    pairs = []
    if isinstance(param, ShiftParam):
        step = int(step)
        if step < 1:
            raise ParameterDomainError(f"shift tangent step must be >= 1 pixel, got {step}")
        for axis in ("dx", "dy"):
            value = getattr(param, axis)
            moved = ShiftParam(**{**{"dx": param.dx, "dy": param.dy}, axis: value + step})
            if abs(value + step) <= spec.max_pad:
                pairs.append((moved, param, float(step)))
            else:
                back = ShiftParam(**{**{"dx": param.dx, "dy": param.dy}, axis: value - step})
                pairs.append((param, back, float(step)))
    elif isinstance(param, BlurParam):
        if param.sigma + step <= spec.sigma_range[1]:
            pairs.append((BlurParam(param.sigma + step), param, float(step)))
        else:
            lower = BlurParam(max(param.sigma - step, 0.0))
            span = param.sigma - lower.sigma
            if span <= 0.0:
                raise ParameterDomainError(f"blur range {spec.sigma_range} too narrow for a tangent step of {step}")
            pairs.append((param, lower, float(span)))
    elif isinstance(param, OverlayParam):
        if param.beta + step <= 1.0:
            pairs.append((OverlayParam(param.seed, param.beta + step), param, float(step)))
        else:
            pairs.append((param, OverlayParam(param.seed, param.beta - step), float(step)))
    else:
        raise UnsupportedError(f"no tangent for {spec.kind.value} transforms")
    return pairs


def tangent_vector(spec: TransformSpec, param: TransformParam, delta, x: FrameStack) -> np.ndarray:
    """
    Finite-difference tangent (T_{ψ+δ}(x) − T_ψ(x)) / δ, one per axis.

    Returns shape (n_axes, c, h, w): shift has axes (dx, dy), blur has σ,
    overlay has β. When ψ+δ leaves the family's bounds the backward
    difference (T_ψ(x) − T_{ψ−δ}(x)) / δ is used instead, with ψ−δ clamped to
    the family bounds and δ shrunk to the span actually covered. delta=None picks
    the family's default step.
    """
    x = as_frame_stack(x)
    check_param(spec, param)
    out = []
    for upper, lower, step in _tangent_axes(spec, param, delta):
        diff = apply_transform(spec, upper, x).astype(np.float64) - apply_transform(spec, lower, x)
        out.append(diff / step)
    return np.stack(out)


# ==================== CHAINS ====================

ChainParams = Tuple[TransformParam, ...]


@dataclass(frozen=True)
class TransformChain:
    """Composition of independently drawn transforms, applied left to right"""
    dists: Tuple[ParamDistribution, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))
        if not self.dists:
            raise InvalidInputError("a transform chain needs at least one distribution")

    @classmethod
    def single(cls, dist: ParamDistribution) -> "TransformChain":
        return cls(dists=(dist,))

    @property
    def specs(self) -> Tuple[TransformSpec, ...]:
        return tuple(d.spec for d in self.dists)

    @property
    def name(self) -> str:
        return "+".join(s.kind.value for s in self.specs)

    @property
    def is_finite(self) -> bool:
        return all(d.is_finite for d in self.dists)

    @property
    def is_point_mass(self) -> bool:
        return all(d.is_point_mass for d in self.dists)

    def kinds(self) -> List[str]:
        return [s.kind.value for s in self.specs]

    def identity(self) -> ChainParams:
        return tuple(s.identity() for s in self.specs)

    def sample(self, n: int, rng: np.random.Generator) -> List[ChainParams]:
        columns = [sample_params(d, n, rng) for d in self.dists]
        return list(zip(*columns))

    def enumerate(self) -> List[Tuple[ChainParams, float]]:
        """Exact support with probabilities; finite chains only"""
        if not self.is_finite:
            raise UnsupportedError(f"chain {self.name} has an infinite parameter space")
        out = []
        for combo in product(*(zip(d.support, d.weights) for d in self.dists)):
            params = tuple(p for p, _ in combo)
            prob = float(np.prod([w for _, w in combo]))
            out.append((params, prob))
        return out

    def apply(self, params: ChainParams, x: FrameStack) -> FrameStack:
        if len(params) != len(self.dists):
            raise InvalidInputError(f"{len(params)} params for a chain of {len(self.dists)}")
        for spec, param in zip(self.specs, params):
            x = apply_transform(spec, param, x)
        return x

    def apply_batch(self, params: Sequence[ChainParams], xs: np.ndarray) -> np.ndarray:
        if len(params) != len(xs):
            raise InvalidInputError(f"{len(params)} param tuples for {len(xs)} frame stacks")
        return np.stack([self.apply(p, x) for p, x in zip(params, xs)])
