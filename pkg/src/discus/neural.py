"""Generator network, DIP / DISCUS objectives and the joint fitting loop.

The generator ``G`` maps a static code ``z0`` (k channels) concatenated with a
dynamic code ``z_t`` (one channel) to a complex frame carried as two real
output channels. DISCUS fits the weights and all codes to the measured data
of every frame at once while a group-l2,1 penalty on the dynamic codes
prunes code positions jointly across frames; the surviving support size is
reported as the manifold dimension.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from discus import kernels
from discus.data_model import DivergenceError, ImageSeries, KSpaceDataset, write_arrays

log = logging.getLogger(__name__)

MODES = ("dip", "discus_gs", "discus")
CODE_OPTIMIZERS = ("adam", "sgd", "group_adam")


@dataclass(frozen=True)
class GeneratorConfig:
    k: int = 1
    depth: int = 3
    base_channels: int = 32
    activation: str = "silu"
    upsample: str = "nearest"
    norm: str = "batch"
    norm_input: bool = True
    padding: str = "reflect"
    out_channels: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.upsample not in ("nearest", "bilinear"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")
        if self.norm not in ("batch", "group", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.padding not in ("reflect", "circular", "zeros"):
            raise ValueError(f"unknown padding {self.padding!r}")
        if self.out_channels != 2:
            raise ValueError("the generator always emits (real, imag) channels")

    @property
    def in_channels(self):
        return self.k + 1


@dataclass(frozen=True)
class FitConfig:
    mode: str = "discus"
    lam: float = 1.0
    iters: int = 2000
    lr: float = 1e-4
    lr_codes: float = 1e-3
    seed: int = 0
    code_init_scale: float = 0.1
    prox_on_codes: bool = True
    code_optimizer: str = "adam"
    lr_schedule: str = "constant"
    lam_warmup: float = 0.0
    weight_decay: float = 0.0
    fix_code_norm: bool = False
    epsilon_smooth: float = 1e-8
    batch_frames: int | None = None
    log_every: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "discus" and not self.lam > 0:
            raise ValueError("mode 'discus' needs lam > 0")
        if self.mode in ("dip", "discus_gs") and self.lam != 0:
            raise ValueError(f"mode {self.mode!r} requires lam = 0")
        if self.code_optimizer not in CODE_OPTIMIZERS:
            raise ValueError(f"code_optimizer must be one of {CODE_OPTIMIZERS}, got {self.code_optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 0.0 <= self.lam_warmup <= 1.0:
            raise ValueError("lam_warmup is a fraction of iters in [0, 1]")
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.lr <= 0 or self.lr_codes <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class CodeSet:
    """Static code ``z0`` (k x H x W) and dynamic codes ``z_dyn`` (T x H x W)."""

    z0: np.ndarray | None
    z_dyn: np.ndarray

    def __post_init__(self):
        self.z_dyn = np.asarray(self.z_dyn, dtype=np.float64)
        if self.z_dyn.ndim != 3:
            raise ValueError("z_dyn must be T x H x W")
        if self.z0 is not None:
            self.z0 = np.asarray(self.z0, dtype=np.float64)
            if self.z0.ndim != 3 or self.z0.shape[1:] != self.z_dyn.shape[1:]:
                raise ValueError("z0 must be k x H x W with the same H, W as z_dyn")
        if not np.all(np.isfinite(self.z_dyn)) or (
            self.z0 is not None and not np.all(np.isfinite(self.z0))
        ):
            raise ValueError("codes must be finite")

    @property
    def frame_count(self):
        return self.z_dyn.shape[0]

    def flat_dynamic(self):
        """T x N view of the dynamic codes."""
        return self.z_dyn.reshape(self.z_dyn.shape[0], -1)


@dataclass
class FitResult:
    recon: ImageSeries
    codes: CodeSet
    loss_trace: list = field(default_factory=list)
    manifold_dim: int | None = None
    generator: nn.Module | None = field(default=None, repr=False)


# --- network -----------------------------------------------------------------

_ACTIVATIONS = {
    "silu": nn.SiLU,
    "softplus": nn.Softplus,
    "tanh": nn.Tanh,
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
}


def _norm(kind, ch):
    if kind == "batch":
        return nn.BatchNorm2d(ch)
    if kind == "group":
        return nn.GroupNorm(min(4, ch), ch)
    return nn.Identity()


def _block(cin, cout, cfg, first=False):
    act = _ACTIVATIONS[cfg.activation]
    # without a norm straight after the code input, shrinking z_t can only be
    # undone by growing that conv's weights, which weight decay makes costly
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, padding_mode=cfg.padding),
        _norm(cfg.norm if cfg.norm_input or not first else "none", cout),
        act(),
        nn.Conv2d(cout, cout, 3, padding=1, padding_mode=cfg.padding),
        _norm(cfg.norm, cout),
        act(),
    )


class UNet(nn.Module):
    """Encoder (``depth`` stages) + bottleneck + decoder (``depth`` stages) with skips.

    The default ``depth=3`` gives the seven resolution blocks of the
    reference architecture. Channel width doubles per downsampling stage.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_channels * 2**i for i in range(cfg.depth + 1)]
        self.enc = nn.ModuleList()
        c = cfg.in_channels
        for i, wd in enumerate(widths[:-1]):
            self.enc.append(_block(c, wd, cfg, first=i == 0))
            c = wd
        self.mid = _block(c, widths[-1], cfg)
        self.dec = nn.ModuleList()
        c = widths[-1]
        for wd in reversed(widths[:-1]):
            self.dec.append(_block(c + wd, wd, cfg))
            c = wd
        self.head = nn.Conv2d(c, cfg.out_channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        f = 2**self.cfg.depth
        if h % f or w % f:
            raise ValueError(f"input size {h}x{w} must be divisible by {f}")
        skips = []
        for blk in self.enc:
            x = blk(x)
            skips.append(x)
            x = F.avg_pool2d(x, 2)
        x = self.mid(x)
        for blk in self.dec:
            if self.cfg.upsample == "nearest":
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            else:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = blk(torch.cat([x, skips.pop()], dim=1))
        return self.head(x)


def build_generator(cfg, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return UNet(cfg).to(dtype)


def _net_input(z0, zt):
    # z0: k x H x W (shared), zt: B x H x W -> B x (k + 1) x H x W
    b = zt.shape[0]
    return torch.cat([z0.unsqueeze(0).expand(b, -1, -1, -1), zt.unsqueeze(1)], dim=1)


def _to_complex(out):
    return torch.complex(out[:, 0], out[:, 1])


def generate(weights, z0, zt):
    """Evaluate the generator on one (z0, z_t) pair; returns a complex H x W array.

    ``weights`` is the generator module. Normalisation layers run in
    inference mode, so the output depends on this frame's codes only.
    """
    p = next(weights.parameters())
    z0 = torch.as_tensor(np.asarray(z0), dtype=p.dtype)
    zt = torch.as_tensor(np.asarray(zt), dtype=p.dtype)
    if zt.ndim == 3:
        zt = zt[0]
    k = weights.cfg.k
    if z0.ndim != 3 or z0.shape[0] != k or zt.shape != z0.shape[1:]:
        raise ValueError(f"need z0 of shape ({k}, H, W) and zt of shape (1, H, W)")
    was_training = weights.training
    weights.eval()
    try:
        with torch.no_grad():
            out = weights(_net_input(z0, zt[None]))
    finally:
        weights.train(was_training)
    return _to_complex(out)[0].numpy().astype(np.complex128)


# --- penalties ---------------------------------------------------------------


def _flat(z):
    z = np.asarray(z, dtype=np.float64)
    return z.reshape(z.shape[0], -1) if z.ndim > 2 else z.reshape(z.shape[0], -1)


def group_l21(z_dyn):
    """sum_n sqrt(sum_t z_t[n]^2) for codes given as T x N (or T x H x W)."""
    z = _flat(z_dyn)
    return float(np.sum(np.sqrt(np.sum(z * z, axis=0))))


def group_soft_threshold(z_dyn, tau):
    """Prox of ``tau * group_l21``: shrink every across-time column by ``tau``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z_dyn, dtype=np.float64)
    return kernels.group_soft_threshold(z.reshape(z.shape[0], -1), tau).reshape(z.shape)


def smoothed_group_l21(z, eps):
    """Differentiable surrogate sum_n sqrt(sum_t z^2 + eps) on a torch tensor (T x ...)."""
    zf = z.reshape(z.shape[0], -1)
    return torch.sqrt(torch.sum(zf * zf, dim=0) + eps).sum()


def smoothed_group_l21_grad(z, eps):
    """Closed-form gradient of the smoothed penalty (numpy, T x N)."""
    z = np.asarray(z, dtype=np.float64)
    zf = z.reshape(z.shape[0], -1)
    return (zf / np.sqrt(np.sum(zf * zf, axis=0) + eps)[None]).reshape(z.shape)


def column_norms(z_dyn):
    z = _flat(z_dyn)
    return np.sqrt(np.sum(z * z, axis=0))


def manifold_dim(codes, rel_threshold=0.05):
    """Number of code positions whose across-time norm exceeds ``rel_threshold * max``."""
    if not 0 < rel_threshold < 1:
        raise ValueError("rel_threshold must lie in (0, 1)")
    z = codes.z_dyn if isinstance(codes, CodeSet) else codes
    nrm = column_norms(z)
    top = nrm.max() if nrm.size else 0.0
    if top == 0:
        return 0
    return int(np.count_nonzero(nrm > rel_threshold * top))


# --- fitting -----------------------------------------------------------------


def _fft2c(x):
    ax = (-2, -1)
    return torch.fft.fftshift(torch.fft.fft2(torch.fft.ifftshift(x, dim=ax), norm="ortho"), dim=ax)


class _TorchOperator:
    def __init__(self, data: KSpaceDataset, dtype):
        cdt = torch.complex64 if dtype == torch.float32 else torch.complex128
        self.sens = torch.as_tensor(np.array(data.sens.maps), dtype=cdt)
        self.kmask = torch.as_tensor(data.mask.mask.astype(bool))[:, None, :, None]
        self.y = torch.as_tensor(np.array(data.samples), dtype=cdt)
        energy = float(np.vdot(data.samples, data.samples).real)
        self.energy = energy if energy > 0 else 1.0
        self.t = self.y.shape[0]

    def residual_sq(self, x, idx):
        k = _fft2c(self.sens[None] * x[:, None])
        r = torch.where(self.kmask[idx], k - self.y[idx], torch.zeros((), dtype=k.dtype))
        return torch.sum(r.real**2 + r.imag**2)

    def data_term(self, x, idx):
        """Residual energy relative to sum_t ||y_t||^2, scaled up for frame subsets."""
        return self.residual_sq(x, idx) * (self.t / (len(idx) * self.energy))


def _init_codes(fcfg, gcfg, t, h, w, dtype):
    gen = torch.Generator().manual_seed(fcfg.seed + 1)
    s = fcfg.code_init_scale
    z_dyn = s * torch.randn(t, h, w, generator=gen, dtype=torch.float64)
    z0 = s * torch.randn(gcfg.k, h, w, generator=gen, dtype=torch.float64)
    if fcfg.mode == "dip":
        z0 = torch.zeros(gcfg.k, h, w, dtype=torch.float64)
    return z0.to(dtype).requires_grad_(fcfg.mode != "dip"), z_dyn.to(dtype).requires_grad_()


class _GroupAdam:
    """Adam on T x N dynamic codes with one second-moment estimate per column.

    ``step`` returns the per-column scale ``d_n`` it divided by. Using the
    same scalar metric in the group prox (threshold ``lr * lam / d_n``) keeps
    the prox closed form and the selection rule of plain proximal gradient:
    a column survives while its averaged gradient is longer than ``lam``.
    Per-coordinate Adam instead rescales every column to a similar step and
    the prox then shrinks all of them alike.
    """

    def __init__(self, z, betas=(0.9, 0.999), eps=1e-8):
        self.z = z
        self.b1, self.b2 = betas
        self.eps = eps
        t = z.shape[0]
        self.m = torch.zeros(t, z[0].numel(), dtype=z.dtype)
        self.v = torch.zeros(z[0].numel(), dtype=z.dtype)
        self.k = 0

    def step(self, lr):
        self.k += 1
        g = self.z.grad.reshape(self.m.shape)
        self.m.mul_(self.b1).add_(g, alpha=1 - self.b1)
        self.v.mul_(self.b2).add_(torch.mean(g * g, dim=0), alpha=1 - self.b2)
        mhat = self.m / (1 - self.b1**self.k)
        d = torch.sqrt(self.v / (1 - self.b2**self.k)) + self.eps
        with torch.no_grad():
            self.z.reshape(self.m.shape).sub_(lr * mhat / d)
        return d


def _lr_factor(fcfg, it):
    if fcfg.lr_schedule == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * it / fcfg.iters))
    return 1.0


def _lam_factor(fcfg, it):
    # linear ramp of the penalty weight over the first lam_warmup * iters steps
    ramp = fcfg.lam_warmup * fcfg.iters
    return 1.0 if ramp <= 0 else min(1.0, (it + 1) / ramp)


def discus_fit(data, gcfg, fcfg, dtype=torch.float32, callback=None):
    """Jointly fit generator weights, static and dynamic codes to ``data``.

    ``mode='dip'`` drops the static code (held at zero) and the penalty,
    ``'discus_gs'`` keeps both codes without the penalty, ``'discus'``
    adds ``lam * ||z_dyn||_{2,1}``, either as an exact proximal step after
    each optimiser update (``prox_on_codes``) or as a smoothed additive term.

    The data term is normalised by the measured energy,
    ``data_term = sum_t ||A_t G(z0, z_t) - y_t||^2 / sum_t ||y_t||^2``, so
    ``lam`` does not depend on the intensity scale of the data. Each
    ``loss_trace`` entry is ``(iteration, data_term, penalty_term)`` measured
    before that iteration's update.
    """
    if not isinstance(data, KSpaceDataset):
        raise TypeError("discus_fit needs a KSpaceDataset")
    t, _, h, w = data.shape
    torch.manual_seed(fcfg.seed)
    net = build_generator(gcfg, fcfg.seed, dtype)
    net.train()
    op = _TorchOperator(data, dtype)
    z0, zd = _init_codes(fcfg, gcfg, t, h, w, dtype)
    code_params = [zd] + ([z0] if fcfg.mode != "dip" else [])
    if fcfg.weight_decay > 0:
        opt = torch.optim.AdamW(net.parameters(), lr=fcfg.lr, weight_decay=fcfg.weight_decay)
    else:
        opt = torch.optim.Adam(net.parameters(), lr=fcfg.lr)
    gadam = None
    if fcfg.code_optimizer == "group_adam":
        gadam = _GroupAdam(zd)
        code_params = code_params[1:]  # z0, when present, gets plain Adam
    if fcfg.code_optimizer == "sgd":
        opt_codes = torch.optim.SGD(code_params or [torch.zeros(1)], lr=fcfg.lr_codes)
    else:
        opt_codes = torch.optim.Adam(code_params or [torch.zeros(1)], lr=fcfg.lr_codes)
    lam = fcfg.lam if fcfg.mode == "discus" else 0.0
    use_prox = fcfg.mode == "discus" and fcfg.prox_on_codes
    batch = fcfg.batch_frames or t
    perm_gen = torch.Generator().manual_seed(fcfg.seed + 2)
    code_norm = float(torch.linalg.vector_norm(zd.detach()))
    trace = []
    for it in range(fcfg.iters):
        if batch >= t:
            idx = torch.arange(t)
        else:
            idx = torch.randperm(t, generator=perm_gen)[:batch]
        opt.zero_grad(set_to_none=True)
        opt_codes.zero_grad(set_to_none=True)
        zd.grad = None
        x = _to_complex(net(_net_input(z0, zd[idx])))
        data_term = op.data_term(x, idx)
        lam_it = lam * _lam_factor(fcfg, it)
        if lam > 0 and not use_prox:
            pen = lam_it * smoothed_group_l21(zd, fcfg.epsilon_smooth)
            loss = data_term + pen
        else:
            pen = lam_it * torch.linalg.vector_norm(zd.detach().reshape(t, -1), dim=0).sum()
            loss = data_term
        dv, pv = float(data_term.detach()), float(pen.detach())
        trace.append((it, dv, pv))
        if not (math.isfinite(dv) and math.isfinite(pv)):
            raise DivergenceError(f"non-finite loss at iteration {it}", trace)
        loss.backward()
        frac = _lr_factor(fcfg, it)
        for o, base in ((opt, fcfg.lr), (opt_codes, fcfg.lr_codes)):
            for g in o.param_groups:
                g["lr"] = base * frac
        opt.step()
        opt_codes.step()
        tau = fcfg.lr_codes * frac * lam_it
        if gadam is not None:
            tau = tau / gadam.step(fcfg.lr_codes * frac)
        if use_prox:
            with torch.no_grad():
                zf = zd.reshape(t, -1)
                nrm = torch.linalg.vector_norm(zf, dim=0)
                tau = torch.as_tensor(tau, dtype=nrm.dtype)
                scale = torch.clamp(1.0 - tau / torch.clamp(nrm, min=1e-30), min=0.0)
                scale = torch.where(nrm > tau, scale, torch.zeros_like(scale))
                zf.mul_(scale)
        if fcfg.fix_code_norm:
            # G barely sees the overall code scale, so hold it: prox followed by this
            # rescale is the exact prox of the penalty on the sphere |z_dyn|_F = const
            with torch.no_grad():
                nz = torch.linalg.vector_norm(zd)
                if nz > 0:
                    zd.mul_(code_norm / nz)
        if fcfg.log_every and (it % fcfg.log_every == 0 or it == fcfg.iters - 1):
            log.info("iter %d data %.4e penalty %.4e", it, dv, pv)
        if callback is not None:
            callback(it, net, z0, zd)
        if fcfg.checkpoint_every and fcfg.checkpoint_dir and (it + 1) % fcfg.checkpoint_every == 0:
            save_checkpoint(fcfg.checkpoint_dir, net, z0, zd, trace, gcfg, fcfg)
    recon = _render(net, z0, zd)
    codes = CodeSet(
        None if fcfg.mode == "dip" else z0.detach().double().numpy(),
        zd.detach().double().numpy(),
    )
    mdim = manifold_dim(codes) if fcfg.mode == "discus" else None
    return FitResult(ImageSeries(recon), codes, trace, mdim, net)


def _recalibrate(net, z0, zd):
    """Set batch-norm running statistics to those of one full pass over all frames."""
    bns = [m for m in net.modules() if isinstance(m, nn.BatchNorm2d)]
    if not bns:
        return
    saved = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None  # cumulative average: one pass gives the batch statistics
    net.train()
    with torch.no_grad():
        net(_net_input(z0, zd))
    for m, mom in zip(bns, saved):
        m.momentum = mom


def _render(net, z0, zd, chunk=8):
    """Final frames x_t = G(z0, z_t), frame batches in inference mode."""
    _recalibrate(net, z0, zd)
    net.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, zd.shape[0], chunk):
            outs.append(_to_complex(net(_net_input(z0, zd[i : i + chunk]))))
    net.train()
    return torch.cat(outs).numpy().astype(np.complex128)


def flat_weights(net):
    return torch.cat([p.detach().reshape(-1) for p in net.state_dict().values()]).double().numpy()


def save_checkpoint(path, net, z0, zd, trace, gcfg, fcfg):
    """Checkpoint container: flattened state dict, codes, loss trace, config echo."""
    arrays = {
        "weights": (flat_weights(net), "f32le"),
        "z0": (z0.detach().double().numpy(), "f32le"),
        "z_dyn": (zd.detach().double().numpy(), "f32le"),
        "loss_trace": (np.asarray(trace, dtype=np.float64).reshape(-1, 3), "f32le"),
    }
    attrs = {
        "generator": dataclasses.asdict(gcfg),
        "fit": dataclasses.asdict(fcfg),
        "state_keys": [[k, list(v.shape)] for k, v in net.state_dict().items()],
        "iteration": len(trace),
    }
    write_arrays(path, "checkpoint", arrays, attrs)


def load_checkpoint_weights(path):
    """Rebuild the generator from a checkpoint container."""
    from discus.data_model import read_arrays

    kind, arrays, attrs = read_arrays(path)
    if kind != "checkpoint":
        raise ValueError(f"{path} holds a {kind!r} container, not a checkpoint")
    net = UNet(GeneratorConfig(**attrs["generator"]))
    flat = torch.as_tensor(arrays["weights"].astype(np.float64))
    sd, pos = {}, 0
    ref = net.state_dict()
    for key, shape in attrs["state_keys"]:
        n = int(np.prod(shape, dtype=np.int64))
        sd[key] = flat[pos : pos + n].reshape(shape).to(ref[key].dtype)
        pos += n
    net.load_state_dict(sd)
    return net, arrays, attrs
