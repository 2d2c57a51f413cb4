"""Input checks shared by the estimators and the functional API."""

import numpy as np

from .errors import DegenerateError, EmptyCloudError, ValidationError


def check_image(image, name="image"):
    arr = np.asarray(image)
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D (or HxWxC) array")
    return arr


def check_mask(mask, name="mask", min_pixels=0):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    arr = arr.astype(bool) if arr.dtype != bool else arr
    if min_pixels and int(arr.sum()) < min_pixels:
        raise DegenerateError(f"{name} has {int(arr.sum())} pixels; need at least {min_pixels}")
    return arr


def check_same_shape(a, b, names=("mask", "depth")):
    if np.shape(a)[:2] != np.shape(b)[:2]:
        raise ValidationError(f"{names[0]} {np.shape(a)} and {names[1]} {np.shape(b)} differ in size")


def check_cloud(points, min_points=1):
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        raise EmptyCloudError("point cloud is empty")
    P = P.reshape(-1, 3)
    if len(P) < min_points:
        raise EmptyCloudError(f"point cloud has {len(P)} points; need {min_points}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("point cloud contains non-finite values")
    return P


def check_probability(p):
    if not (0.0 < p <= 1.0):
        raise ValidationError(f"probability {p} outside (0, 1]")
    return float(p)
