"""View-gated feature fusion: softmax weighting of per-view feature maps.

The layer takes K per-view feature maps (replicated network tails that do not
share weights) and K view logits, turns the logits into probabilities, and
sums the probability-weighted maps. Because each map is scaled by its view
probability, the gradient reaching map k in the backward pass is the upstream
gradient scaled by exactly w_k: the dominant predicted view receives almost
the whole gradient, the others are nearly blocked.

Also here: assembly of the 17-channel network input (3 color channels plus 14
joint-confidence maps), the max-projection used to visualize joint maps, the
output-size arithmetic of the view-predictor head, per-view mean images, and
a finite-difference gradient checker for the layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .errors import ValidationError

VIEW_CLASSES = ("front", "back", "side")
IMAGE_CHANNELS = 3
POSE_CHANNELS = 14
INPUT_CHANNELS = IMAGE_CHANNELS + POSE_CHANNELS
POSE_JOINT_NAMES = (
    "right_ankle", "right_knee", "right_hip",
    "left_hip", "left_knee", "left_ankle",
    "right_wrist", "right_elbow", "right_shoulder",
    "left_shoulder", "left_elbow", "left_wrist",
    "chin", "top_of_head",
)


@dataclass(frozen=True)
class PoseMapSet:
    """14 joint-confidence maps. Values are raw scores, deliberately unclamped."""

    channels: np.ndarray                       # (14, H, W)
    joint_names: tuple[str, ...] = POSE_JOINT_NAMES

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.ndim != 3 or channels.shape[0] != POSE_CHANNELS:
            raise ValidationError(
                f"pose maps must have shape ({POSE_CHANNELS}, H, W), got {channels.shape}"
            )
        if len(self.joint_names) != POSE_CHANNELS:
            raise ValidationError(
                f"expected {POSE_CHANNELS} joint names, got {len(self.joint_names)}"
            )
        if channels.size and not np.isfinite(channels).all():
            raise ValidationError("pose maps contain non-finite values")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_parameter_errors: tuple[float, ...]   # worst instance, logits then map entries
    per_instance_max: tuple[float, ...]
    step: float

    def to_json_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "per_parameter_errors": list(self.per_parameter_errors),
            "per_instance_max": list(self.per_instance_max),
            "step": self.step,
            "instances": len(self.per_instance_max),
        }


def load_pose_maps(path: str | Path, joint_names: tuple[str, ...] = POSE_JOINT_NAMES) -> PoseMapSet:
    """Read a (14, H, W) joint-confidence tensor from an RTEN container."""
    values = formats.read_tensor(path)
    return PoseMapSet(values.astype(np.float64), joint_names)


def save_pose_maps(pose: PoseMapSet, path: str | Path) -> None:
    formats.write_tensor(path, pose.channels)


def softmax_view_weights(logits) -> np.ndarray:
    """Numerically stable softmax over the view logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 1:
        raise ValidationError(f"logits must be a non-empty vector, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValidationError("logits contain non-finite values")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _check_stack(stack: np.ndarray, k: int) -> np.ndarray:
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim < 2 or stack.shape[0] != k:
        raise ValidationError(
            f"expected a stack of {k} equally shaped maps, got shape {stack.shape}"
        )
    if stack.size and not np.isfinite(stack).all():
        raise ValidationError("feature maps contain non-finite values")
    return stack


def fuse_view_units(stack, weights) -> np.ndarray:
    """Weighted sum of the per-view maps: out = sum_k w_k * map_k."""
    weights = np.asarray(weights, dtype=np.float64)
    stack = _check_stack(stack, weights.shape[0])
    return np.tensordot(weights, stack, axes=1)


def fuse_backward(grad_out, stack, logits) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the fused output w.r.t. the map stack and the logits.

    grad_map_k = w_k * grad_out (the gradient-modulation property), and the
    logit gradient chains <grad_out, map_j> through the softmax Jacobian:
    grad_z_k = w_k * (s_k - sum_j s_j w_j) with s_j = <grad_out, map_j>.
    """
    logits = np.asarray(logits, dtype=np.float64)
    weights = softmax_view_weights(logits)
    stack = _check_stack(stack, weights.shape[0])
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != stack.shape[1:]:
        raise ValidationError(
            f"grad_out shape {grad_out.shape} does not match map shape {stack.shape[1:]}"
        )
    grad_stack = weights.reshape((-1,) + (1,) * grad_out.ndim) * grad_out[None]
    weight_grads = np.tensordot(stack, grad_out, axes=grad_out.ndim)
    grad_logits = weights * (weight_grads - float(weight_grads @ weights))
    return grad_stack, grad_logits


def assemble_pose_input(image, pose) -> np.ndarray:
    """Stack color channels and joint maps into the 17-channel network input."""
    image = np.asarray(image, dtype=np.float64)
    channels = pose.channels if isinstance(pose, PoseMapSet) else np.asarray(pose, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != IMAGE_CHANNELS:
        raise ValidationError(
            f"image must have shape ({IMAGE_CHANNELS}, H, W), got {image.shape}"
        )
    if channels.ndim != 3 or channels.shape[0] != POSE_CHANNELS:
        raise ValidationError(
            f"pose maps must have shape ({POSE_CHANNELS}, H, W), got {channels.shape}"
        )
    if image.shape[1:] != channels.shape[1:]:
        raise ValidationError(
            f"image spatial size {image.shape[1:]} does not match "
            f"pose map size {channels.shape[1:]}"
        )
    return np.concatenate([image, channels], axis=0)


def split_pose_input(combined) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of assemble_pose_input."""
    combined = np.asarray(combined, dtype=np.float64)
    if combined.ndim != 3 or combined.shape[0] != INPUT_CHANNELS:
        raise ValidationError(
            f"combined input must have shape ({INPUT_CHANNELS}, H, W), got {combined.shape}"
        )
    return combined[:IMAGE_CHANNELS].copy(), combined[IMAGE_CHANNELS:].copy()


def pose_map_visualize(pose) -> np.ndarray:
    """Collapse the joint maps to one gray channel via a per-pixel maximum."""
    channels = pose.channels if isinstance(pose, PoseMapSet) else np.asarray(pose, dtype=np.float64)
    if channels.ndim != 3 or channels.shape[0] < 1:
        raise ValidationError(f"expected (C, H, W) pose maps, got shape {channels.shape}")
    return channels.max(axis=0, keepdims=True)


def view_head_stage_dims(extent: int) -> tuple[int, int, int]:
    """Spatial sizes after the head's stride-3, stride-2 and 5x5-valid stages.

    The two strided convolutions use same padding (ceil division); the final
    5x5 convolution is unpadded. 28 maps through 10 and 5 to 1; 56 maps
    through 19 and 10 to 6.
    """
    if extent < 1:
        raise ValidationError(f"input extent must be >= 1, got {extent}")
    d1 = -(-extent // 3)
    d2 = -(-d1 // 2)
    if d2 < 5:
        raise ValidationError(
            f"input too small for 5x5 valid convolution: extent {extent} shrinks to {d2}"
        )
    return d1, d2, d2 - 4


def view_head_output_dims(input_hw: tuple[int, int]) -> tuple[int, int]:
    """Final spatial size of the view-predictor head for an (H, W) input."""
    h, w = input_hw
    return view_head_stage_dims(h)[-1], view_head_stage_dims(w)[-1]


def mean_view_images(images, labels, classes=VIEW_CLASSES) -> dict[str, np.ndarray | None]:
    """Pixelwise mean image per predicted view class; empty classes map to None."""
    images = [np.asarray(img, dtype=np.float64) for img in images]
    labels = list(labels)
    if len(images) != len(labels):
        raise ValidationError(f"{len(images)} images but {len(labels)} labels")
    unknown = sorted(set(labels) - set(classes))
    if unknown:
        raise ValidationError(f"unknown view labels {unknown}, expected one of {classes}")
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise ValidationError(f"images must share one shape, got {sorted(shapes)}")
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {cls: 0 for cls in classes}
    for img, label in zip(images, labels):
        if label in sums:
            sums[label] += img
        else:
            sums[label] = img.copy()
        counts[label] += 1
    return {
        cls: (sums[cls] / counts[cls]) if counts[cls] else None for cls in classes
    }


def gradient_check(
    seed: int = 0,
    num_instances: int = 20,
    step: float = 1e-5,
    num_views: int = 3,
) -> GradCheckReport:
    """Compare the analytic backward pass against central finite differences.

    Each instance draws a random map shape (flat vectors and C x H x W maps up
    to 8 x 4 x 4), random maps, logits and an upstream gradient, then probes
    the scalar loss <grad_out, fuse(maps, softmax(logits))> at every logit and
    every map entry. Relative errors use max(|analytic|, |numeric|, 1e-8) as
    the denominator.
    """
    rng = np.random.default_rng(seed)
    per_instance: list[float] = []
    worst_errors: tuple[float, ...] = ()
    for _ in range(num_instances):
        if rng.integers(2):
            shape: tuple[int, ...] = (int(rng.integers(2, 9)),)
        else:
            shape = (int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        stack = rng.normal(size=(num_views, *shape))
        logits = rng.normal(scale=2.0, size=num_views)
        grad_out = rng.normal(size=shape)

        def loss(z, maps):
            return float(np.sum(grad_out * fuse_view_units(maps, softmax_view_weights(z))))

        grad_stack, grad_logits = fuse_backward(grad_out, stack, logits)
        errors: list[float] = []
        for k in range(num_views):
            shifted = logits.copy()
            shifted[k] += step
            up = loss(shifted, stack)
            shifted[k] -= 2 * step
            down = loss(shifted, stack)
            errors.append(_rel_error(grad_logits[k], (up - down) / (2 * step)))
        flat = stack.reshape(num_views, -1)
        flat_grad = grad_stack.reshape(num_views, -1)
        for k in range(num_views):
            for j in range(flat.shape[1]):
                original = flat[k, j]
                flat[k, j] = original + step
                up = loss(logits, stack)
                flat[k, j] = original - step
                down = loss(logits, stack)
                flat[k, j] = original
                errors.append(_rel_error(flat_grad[k, j], (up - down) / (2 * step)))
        instance_max = max(errors)
        per_instance.append(instance_max)
        if instance_max >= max(per_instance):
            worst_errors = tuple(errors)
    return GradCheckReport(
        max_rel_error=max(per_instance),
        per_parameter_errors=worst_errors,
        per_instance_max=tuple(per_instance),
        step=step,
    )


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
