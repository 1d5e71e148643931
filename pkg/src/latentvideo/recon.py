"""Stage-1 image reconstruction: background VAE, object VAE, compositor, losses.

Training consumes pairs of frames (x, x') from the same video plus one frame
x'' from an unrelated video. The background codes of x and x' are swapped
before decoding, object content codes are mixed across the pair with a ratio
that grows over training, and a pose-pair discriminator pushes content
information out of the pose codes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields as dc_fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import formats, synth, warp
from .errors import ConfigError, DivergenceError, ShapeError
from .networks import (
    BackgroundDecoder,
    BroadcastDecoder,
    FrameDiscriminator,
    GaussianEncoder,
    ObjectDetector,
    PairDiscriminator,
    SpatialFeatures,
    kl_standard_normal,
    sample_gaussian,
)


@dataclass
class ReconConfig:
    height: int = 32
    width: int = 32
    sub_height: int = 16
    sub_width: int = 16
    n_slots: int = 2
    k_back: int = 64
    k_pose: int = 16
    k_content: int = 32
    total_epochs: int = 30
    w_recon: float = 10.0
    w_kl: float = 1e-3
    w_adv_img: float = 0.02
    w_back: float = 0.1
    w_content: float = 1.0
    w_adv_pose: float = 0.1
    w_mask: float = 1.0
    triplet_margin: float = 0.5
    mask_cutoff_fraction: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 16
    pairs_per_video: int = 16
    r1_gamma: float = 1.0

    def validate(self) -> None:
        if self.sub_height > self.height or self.sub_width > self.width:
            raise ConfigError("sub-image must not exceed the frame size")
        for f in dc_fields(self):
            if f.name.startswith("w_") and getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if self.triplet_margin <= 0:
            raise ConfigError("triplet_margin must be > 0")
        if not 0 < self.mask_cutoff_fraction <= 1:
            raise ConfigError("mask_cutoff_fraction must be in (0,1]")
        if self.n_slots < 1:
            raise ConfigError("n_slots must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReconConfig":
        return cls(**d)


@dataclass
class LossReport:
    recon: float
    kl: float
    adv_img_G: float
    adv_img_D: float
    l_back: float
    l_content: float
    l_adv_pose_E: float
    l_adv_pose_D: float
    l_mask: float
    total: float

    GENERATOR_WEIGHTS = {
        "recon": "w_recon",
        "kl": "w_kl",
        "adv_img_G": "w_adv_img",
        "l_back": "w_back",
        "l_content": "w_content",
        "l_adv_pose_E": "w_adv_pose",
        "l_mask": "w_mask",
    }

    def to_dict(self) -> dict:
        return asdict(self)


# -----------------------------------------------------------------------------
# Pure operations
# -----------------------------------------------------------------------------

def sample_alpha(epoch: int, total_epochs: int, rng: np.random.Generator) -> float:
    """Content-mixing ratio: uniform on [0, epoch/total_epochs]."""
    if total_epochs <= 0:
        raise ConfigError(f"total_epochs must be positive, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    if epoch == 0:
        return 0.0
    return float(rng.uniform(0.0, epoch / total_epochs))


def mix_content(z_c: torch.Tensor, z_c_other: torch.Tensor, alpha) -> torch.Tensor:
    """Convex combination (1-alpha)*z_c + alpha*z_c_other."""
    if z_c.shape != z_c_other.shape:
        raise ShapeError(f"content shapes differ: {tuple(z_c.shape)} vs {tuple(z_c_other.shape)}")
    if isinstance(alpha, torch.Tensor):
        while alpha.ndim < z_c.ndim:
            alpha = alpha.unsqueeze(-1)
    return (1 - alpha) * z_c + alpha * z_c_other


def match_content(codes: np.ndarray | torch.Tensor,
                  other_codes: np.ndarray | torch.Tensor) -> list[int]:
    """For each row of `codes`, the index of the nearest row of `other_codes`
    by squared Euclidean distance; ties resolve to the smallest index."""
    a = np.asarray(codes, dtype=np.float64)
    b = np.asarray(other_codes, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"code lists differ in shape: {a.shape} vs {b.shape}")
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return [int(j) for j in d.argmin(axis=1)]


def nearest_two(dist_sq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Indices of the two smallest entries along the last dim (stable order)."""
    order = torch.argsort(dist_sq, dim=-1, stable=True)
    return order[..., 0], order[..., 1]


def composite(background: torch.Tensor, objects: torch.Tensor,
              masks: torch.Tensor) -> torch.Tensor:
    """Merge pasted object layers over a background.

    background (B,3,H,W); objects (B,N,3,H,W); masks (B,N,1,H,W) in [0,1].
    Where the mask sum exceeds 1, the background coefficient clamps to zero
    and object weights renormalize, keeping the output a convex combination.
    """
    if objects.ndim != 5 or masks.ndim != 5 or masks.shape[2] != 1:
        raise ShapeError("objects must be (B,N,3,H,W), masks (B,N,1,H,W)")
    total = masks.sum(dim=1)  # (B,1,H,W)
    denom = total.clamp(min=1.0)
    bg_coef = (1.0 - total).clamp(min=0.0)
    layered = (masks / denom.unsqueeze(1) * objects).sum(dim=1)
    return bg_coef * background + layered


def frames_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(T,H,W,3) float array in [0,1] -> (T,3,H,W) float32 tensor."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeError(f"expected (T,H,W,3) frames, got {arr.shape}")
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_frames(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)


# -----------------------------------------------------------------------------
# Model
# -----------------------------------------------------------------------------

class ReconNet(nn.Module):
    """The full stage-1 network: background VAE + object VAE + discriminators."""

    def __init__(self, config: ReconConfig):
        super().__init__()
        config.validate()
        self.config = config
        frame_hw = (config.height, config.width)
        sub_hw = (config.sub_height, config.sub_width)
        self.back_enc = GaussianEncoder(3, frame_hw, config.k_back)
        self.back_dec = BackgroundDecoder(config.k_back, frame_hw)
        self.frame_enc = SpatialFeatures(6, dim=128)
        self.detector = ObjectDetector(128, config.n_slots)
        self.pose_enc = GaussianEncoder(3, sub_hw, config.k_pose)
        self.content_enc = GaussianEncoder(3, sub_hw, config.k_content)
        self.obj_dec = BroadcastDecoder(config.k_pose + config.k_content, sub_hw)
        self.img_disc = FrameDiscriminator(frame_hw)
        self.pose_disc = PairDiscriminator(config.k_pose)

    # ---- operations ----------------------------------------------------

    def _check_frame(self, x: torch.Tensor) -> None:
        c = self.config
        if x.ndim != 4 or x.shape[1:] != (3, c.height, c.width):
            raise ShapeError(
                f"expected (B,3,{c.height},{c.width}) frame, got {tuple(x.shape)}")

    def encode_background(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check_frame(x)
        return self.back_enc(x)

    def decode_background(self, z_back: torch.Tensor) -> torch.Tensor:
        if z_back.ndim != 2 or z_back.shape[1] != self.config.k_back:
            raise ShapeError(f"z_back must be (B,{self.config.k_back})")
        return self.back_dec(z_back)

    def detect_objects(self, x: torch.Tensor, x_diff: torch.Tensor) -> torch.Tensor:
        self._check_frame(x)
        if x_diff.shape != x.shape:
            raise ShapeError("frame and diff image shapes differ")
        keys, pooled = self.frame_enc(torch.cat([x, x_diff], dim=1))
        salience = F.avg_pool2d(x_diff.abs().mean(dim=1, keepdim=True), 4, 4)
        return self.detector(keys, pooled, salience)

    def crop_object(self, x: torch.Tensor, z_where: torch.Tensor) -> torch.Tensor:
        return warp.crop_window(x, z_where, (self.config.sub_height, self.config.sub_width))

    def encode_object(self, sub: torch.Tensor):
        c = self.config
        if sub.ndim != 4 or sub.shape[1:] != (3, c.sub_height, c.sub_width):
            raise ShapeError(
                f"expected (B,3,{c.sub_height},{c.sub_width}) sub-image, got {tuple(sub.shape)}")
        return self.pose_enc(sub), self.content_enc(sub)

    def decode_object(self, z_p: torch.Tensor, z_c: torch.Tensor):
        c = self.config
        if z_p.shape[-1] != c.k_pose or z_c.shape[-1] != c.k_content:
            raise ShapeError("object code dims do not match the config")
        return self.obj_dec(torch.cat([z_p, z_c], dim=-1))

    def paste(self, patch: torch.Tensor, z_where: torch.Tensor) -> torch.Tensor:
        return warp.paste_window(patch, z_where, (self.config.height, self.config.width))

    # ---- pipeline pieces -------------------------------------------------

    def encode_objects(self, x: torch.Tensor, bg_mean: torch.Tensor):
        """Detect, crop, and encode all object slots of a frame batch.

        Returns a dict with z_where (B,N,4), crops, and per-slot posterior
        statistics shaped (B,N,k). The whole path stays differentiable; the
        diff image feeds gradients back into the background decoder too.
        """
        b = x.shape[0]
        n = self.config.n_slots
        x_diff = x - self.back_dec(bg_mean)
        z_where = self.detect_objects(x, x_diff)
        crops = self.crop_object(
            x.repeat_interleave(n, dim=0), z_where.reshape(b * n, 4))
        (mu_p, lv_p), (mu_c, lv_c) = self.encode_object(crops)
        shape = (b, n, -1)
        return {
            "z_where": z_where,
            "crops": crops.view(b, n, 3, self.config.sub_height, self.config.sub_width),
            "mu_p": mu_p.view(shape), "lv_p": lv_p.view(shape),
            "mu_c": mu_c.view(shape), "lv_c": lv_c.view(shape),
        }

    def decode_slots(self, z_p: torch.Tensor, z_c: torch.Tensor,
                     z_where: torch.Tensor):
        """Decode (B,N,k) slot codes and paste them onto H*W canvases."""
        b, n = z_p.shape[:2]
        obj, mask = self.decode_object(z_p.reshape(b * n, -1), z_c.reshape(b * n, -1))
        zw = z_where.reshape(b * n, 4)
        pasted_obj = self.paste(obj, zw).view(b, n, 3, self.config.height, self.config.width)
        pasted_mask = self.paste(mask, zw).view(b, n, 1, self.config.height, self.config.width)
        small = mask.view(b, n, 1, self.config.sub_height, self.config.sub_width)
        return pasted_obj, pasted_mask, small

    def reconstruct_pair(self, x: torch.Tensor, x_prime: torch.Tensor,
                         alpha: torch.Tensor,
                         generator: torch.Generator | None = None) -> dict:
        """Run the swap/mix reconstruction of x given its partner frame x'."""
        mu_b, lv_b = self.encode_background(x)
        mu_b2, lv_b2 = self.encode_background(x_prime)
        z_b2 = sample_gaussian(mu_b2, lv_b2, generator)
        bg_swapped = self.decode_background(z_b2)

        own = self.encode_objects(x, mu_b)
        other = self.encode_objects(x_prime, mu_b2)

        # nearest partner slot by content mean; j1/j2 feed mixing and triplet
        dist = torch.cdist(own["mu_c"], other["mu_c"]).pow(2)  # (B,N,N)
        if self.config.n_slots >= 2:
            j1, j2 = nearest_two(dist)
        else:
            j1 = dist.argmin(dim=2)
            j2 = j1

        z_p = sample_gaussian(own["mu_p"].reshape(-1, self.config.k_pose),
                              own["lv_p"].reshape(-1, self.config.k_pose),
                              generator).view_as(own["mu_p"])
        z_c_own = sample_gaussian(own["mu_c"].reshape(-1, self.config.k_content),
                                  own["lv_c"].reshape(-1, self.config.k_content),
                                  generator).view_as(own["mu_c"])
        z_c_other = sample_gaussian(other["mu_c"].reshape(-1, self.config.k_content),
                                    other["lv_c"].reshape(-1, self.config.k_content),
                                    generator).view_as(other["mu_c"])
        matched = torch.gather(
            z_c_other, 1, j1.unsqueeze(-1).expand(-1, -1, self.config.k_content))
        z_c_mixed = mix_content(z_c_own, matched, alpha.unsqueeze(1))

        pasted_obj, pasted_mask, small_mask = self.decode_slots(z_p, z_c_mixed, own["z_where"])
        x_hat = composite(bg_swapped, pasted_obj, pasted_mask)
        return {
            "x_hat": x_hat, "bg_swapped": bg_swapped, "z_b2_sample": z_b2,
            "mu_b": mu_b, "lv_b": lv_b, "mu_b2": mu_b2, "lv_b2": lv_b2,
            "own": own, "other": other, "j1": j1, "j2": j2, "dist": dist,
            "small_mask": small_mask, "pasted_mask": pasted_mask, "z_p": z_p,
        }

    # ---- losses ----------------------------------------------------------

    def compute_losses(self, x: torch.Tensor, x_prime: torch.Tensor,
                       x_second: torch.Tensor | None, epoch: int,
                       alpha: torch.Tensor | None = None,
                       rng: np.random.Generator | None = None,
                       generator: torch.Generator | None = None) -> tuple[dict, dict]:
        """All loss components for one training step.

        Returns (losses, outputs): `losses` maps every LossReport field to a
        scalar tensor; `outputs` carries the forward products for logging.
        `epoch` is 0-based; the mask loss deactivates once
        epoch >= mask_cutoff_fraction * total_epochs.
        """
        c = self.config
        if x_second is None and c.w_adv_pose > 0:
            raise ConfigError("x_second is required while w_adv_pose > 0")
        if alpha is None:
            if rng is None:
                rng = np.random.default_rng(0)
            alpha = x.new_tensor(
                [sample_alpha(epoch, c.total_epochs, rng) for _ in range(x.shape[0])])

        out = self.reconstruct_pair(x, x_prime, alpha, generator)

        recon = F.mse_loss(out["x_hat"], x)
        kl = (kl_standard_normal(out["mu_b"], out["lv_b"])
              + kl_standard_normal(out["mu_b2"], out["lv_b2"]))
        for side in ("own", "other"):
            for part in ("p", "c"):
                kl = kl + kl_standard_normal(
                    out[side][f"mu_{part}"].reshape(-1, out[side][f"mu_{part}"].shape[-1]),
                    out[side][f"lv_{part}"].reshape(-1, out[side][f"lv_{part}"].shape[-1]))

        l_back = (out["mu_b"] - out["mu_b2"]).pow(2).sum(dim=1).mean()

        if c.n_slots >= 2:
            d1 = torch.gather(out["dist"], 2, out["j1"].unsqueeze(-1)).squeeze(-1)
            d2 = torch.gather(out["dist"], 2, out["j2"].unsqueeze(-1)).squeeze(-1)
            l_content = F.relu(d1 - d2 + c.triplet_margin).mean()
        else:
            l_content = x.new_zeros(())

        adv_img_G = F.softplus(-self.img_disc(out["x_hat"])).mean()

        x_real = x.detach().requires_grad_(True)
        logit_real = self.img_disc(x_real)
        logit_fake = self.img_disc(out["x_hat"].detach())
        grad_real = torch.autograd.grad(logit_real.sum(), x_real, create_graph=True)[0]
        r1 = grad_real.pow(2).sum(dim=(1, 2, 3)).mean()
        adv_img_D = (F.softplus(-logit_real).mean() + F.softplus(logit_fake).mean()
                     + 0.5 * c.r1_gamma * r1)

        if x_second is not None:
            with torch.no_grad():
                mu_b3, _ = self.encode_background(x_second)
                second = self.encode_objects(x_second, mu_b3)
                z_p_second = second["mu_p"]
            z_p_own = out["z_p"]
            z_p_other = sample_gaussian(
                out["other"]["mu_p"].reshape(-1, c.k_pose),
                out["other"]["lv_p"].reshape(-1, c.k_pose),
                generator).view_as(out["other"]["mu_p"])
            matched_pose = torch.gather(
                z_p_other, 1, out["j1"].unsqueeze(-1).expand(-1, -1, c.k_pose))
            flat = lambda t: t.reshape(-1, c.k_pose)
            # encoder side: make matched same-object pairs look unrelated
            logit_match = self.pose_disc(flat(z_p_own), flat(matched_pose))
            l_adv_pose_E = (-F.softplus(logit_match)).mean()
            # discriminator side: unrelated pairs -> 1, matched pairs -> 0
            logit_unrel = self.pose_disc(flat(z_p_own).detach(), flat(z_p_second))
            logit_match_d = self.pose_disc(flat(z_p_own).detach(),
                                           flat(matched_pose).detach())
            l_adv_pose_D = (F.softplus(-logit_unrel) + F.softplus(logit_match_d)).mean()
        else:
            l_adv_pose_E = x.new_zeros(())
            l_adv_pose_D = x.new_zeros(())

        mask_mean = out["small_mask"].mean()
        if epoch < c.mask_cutoff_fraction * c.total_epochs:
            l_mask = (mask_mean - 0.5).pow(2)
        else:
            l_mask = x.new_zeros(())

        losses = {
            "recon": recon, "kl": kl, "adv_img_G": adv_img_G, "adv_img_D": adv_img_D,
            "l_back": l_back, "l_content": l_content,
            "l_adv_pose_E": l_adv_pose_E, "l_adv_pose_D": l_adv_pose_D,
            "l_mask": l_mask,
        }
        losses["total"] = sum(
            getattr(c, wname) * losses[lname]
            for lname, wname in LossReport.GENERATOR_WEIGHTS.items())
        out["mask_mean"] = mask_mean
        return losses, out

    # ---- checkpointing -----------------------------------------------------

    def save(self, path: str | Path, epoch: int) -> None:
        params = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        formats.save_checkpoint(path, "recon", self.config.to_dict(), epoch, params)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ReconNet", int]:
        stage, config, epoch, params = formats.load_checkpoint(path)
        if stage != "recon":
            raise formats.DataError(f"{path} is a {stage} checkpoint, expected recon")
        model = cls(ReconConfig.from_dict(config))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
        model.eval()
        return model, epoch


def report_from_losses(losses: dict) -> LossReport:
    return LossReport(**{k: float(v.detach()) for k, v in losses.items()})


def _first_nonfinite(losses: dict) -> str | None:
    for name, value in losses.items():
        if not bool(torch.isfinite(value.detach())):
            return name
    return None


def train_stage1(manifest: synth.DatasetManifest, config: ReconConfig,
                 out_dir: str | Path, seed: int = 0) -> Path:
    """Train the reconstruction network; returns the checkpoint path.

    Writes `recon.ckpt` and `recon_log.jsonl` under out_dir. Deterministic for
    a fixed seed (single-process data loading).
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest.video_count < 2:
        raise ConfigError("need at least 2 videos (unrelated frames are required)")

    torch.manual_seed(seed)
    model = ReconNet(config)
    gen_params = [p for name, p in model.named_parameters()
                  if not name.startswith(("img_disc", "pose_disc"))]
    disc_params = [p for name, p in model.named_parameters()
                   if name.startswith(("img_disc", "pose_disc"))]
    opt_g = torch.optim.Adam(gen_params, lr=config.learning_rate)
    opt_d = torch.optim.Adam(disc_params, lr=config.learning_rate)

    videos = [formats.read_video(manifest.video_path(i))
              for i in range(manifest.video_count)]
    rng = np.random.default_rng(seed)
    ckpt_path = out_dir / "recon.ckpt"

    with formats.TrainingLog(out_dir / "recon_log.jsonl") as log:
        for epoch0 in range(config.total_epochs):
            sums: dict[str, float] = {}
            mask_sum, steps = 0.0, 0
            order = np.concatenate(
                [rng.permutation(manifest.video_count)
                 for _ in range(config.pairs_per_video)])
            for start in range(0, len(order), config.batch_size):
                chunk = order[start:start + config.batch_size]
                xs, xps, xss = [], [], []
                for v in chunk:
                    i, j = synth.sample_pair_indices(videos[v].shape[0], rng)
                    xs.append(videos[v][i])
                    xps.append(videos[v][j])
                    v2 = int(rng.integers(manifest.video_count - 1))
                    v2 = v2 + 1 if v2 >= v else v2
                    xss.append(videos[v2][int(rng.integers(videos[v2].shape[0]))])
                x = frames_to_tensor(np.stack(xs))
                x_prime = frames_to_tensor(np.stack(xps))
                x_second = frames_to_tensor(np.stack(xss))

                losses, out = model.compute_losses(
                    x, x_prime, x_second, epoch0, rng=rng)
                bad = _first_nonfinite(losses)
                if bad is not None:
                    raise DivergenceError(
                        f"non-finite loss component {bad!r} at epoch {epoch0 + 1}")

                opt_g.zero_grad(set_to_none=True)
                losses["total"].backward()
                opt_g.step()

                opt_d.zero_grad(set_to_none=True)
                (losses["adv_img_D"] + losses["l_adv_pose_D"]).backward()
                opt_d.step()

                for k, v in losses.items():
                    sums[k] = sums.get(k, 0.0) + float(v.detach())
                mask_sum += float(out["mask_mean"].detach())
                steps += 1

            record = {k: v / steps for k, v in sums.items()}
            record["epoch"] = epoch0 + 1
            record["mask_mean"] = mask_sum / steps
            log.write(record)

    model.save(ckpt_path, epoch=config.total_epochs)
    return ckpt_path
