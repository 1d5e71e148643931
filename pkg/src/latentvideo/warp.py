"""Differentiable window crop and paste via affine grid resampling.

Window convention: z_where = (cx, cy, sx, sy) with centers in [-1,1]
(align_corners normalized coordinates) and sizes in (0,1] — the window spans
[cx-sx, cx+sx] x [cy-sy, cy+sy]. Crop maps that window of an H*W frame onto
an h*w output; paste is the inverse warp back onto an H*W canvas with zeros
outside the window. With align_corners=True an integer-aligned window whose
pixel extent equals (h, w) crops to an exact array slice.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ShapeError

_MIN_SIZE = 1e-4


def _check_zwhere(z_where: torch.Tensor) -> None:
    if z_where.ndim != 2 or z_where.shape[1] != 4:
        raise ShapeError(f"z_where must be (B,4), got {tuple(z_where.shape)}")


def crop_window(frame: torch.Tensor, z_where: torch.Tensor,
                out_hw: tuple[int, int]) -> torch.Tensor:
    """Bilinearly resample the z_where window of (B,C,H,W) into (B,C,h,w).

    Out-of-frame sample positions read as zero.
    """
    if frame.ndim != 4:
        raise ShapeError(f"frame must be (B,C,H,W), got {tuple(frame.shape)}")
    _check_zwhere(z_where)
    if frame.shape[0] != z_where.shape[0]:
        raise ShapeError("frame and z_where batch sizes differ")
    b, c = frame.shape[:2]
    h, w = out_hw
    cx, cy, sx, sy = z_where.unbind(dim=1)
    theta = torch.zeros(b, 2, 3, dtype=frame.dtype, device=frame.device)
    theta[:, 0, 0] = sx
    theta[:, 0, 2] = cx
    theta[:, 1, 1] = sy
    theta[:, 1, 2] = cy
    grid = F.affine_grid(theta, (b, c, h, w), align_corners=True)
    return F.grid_sample(frame, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=True)


def paste_window(patch: torch.Tensor, z_where: torch.Tensor,
                 out_hw: tuple[int, int]) -> torch.Tensor:
    """Inverse of crop_window: place (B,C,h,w) into an (B,C,H,W) zero canvas."""
    if patch.ndim != 4:
        raise ShapeError(f"patch must be (B,C,h,w), got {tuple(patch.shape)}")
    _check_zwhere(z_where)
    b, c = patch.shape[:2]
    hh, ww = out_hw
    cx, cy, sx, sy = z_where.unbind(dim=1)
    sx = sx.clamp(min=_MIN_SIZE)
    sy = sy.clamp(min=_MIN_SIZE)
    theta = torch.zeros(b, 2, 3, dtype=patch.dtype, device=patch.device)
    theta[:, 0, 0] = 1.0 / sx
    theta[:, 0, 2] = -cx / sx
    theta[:, 1, 1] = 1.0 / sy
    theta[:, 1, 2] = -cy / sy
    grid = F.affine_grid(theta, (b, c, hh, ww), align_corners=True)
    return F.grid_sample(patch, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=True)


def window_to_zwhere(left: int, top: int, width: int, height: int,
                     frame_w: int, frame_h: int,
                     dtype=torch.float32) -> torch.Tensor:
    """z_where for the pixel window [left, left+width) x [top, top+height).

    The returned coordinates make crop_window sample exactly on pixel centers.
    """
    cx = (2 * left + width - 1) / (frame_w - 1) - 1
    cy = (2 * top + height - 1) / (frame_h - 1) - 1
    sx = (width - 1) / (frame_w - 1)
    sy = (height - 1) / (frame_h - 1)
    return torch.tensor([[cx, cy, sx, sy]], dtype=dtype)
