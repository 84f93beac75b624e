"""The three insult-predictor architectures.

* CNNDeepONet: convolutional branch encoder (three stride-2 conv blocks,
  channels 16/32/64, kernel 3) with a dense head to 2p coefficients, and a
  coordinate trunk MLP; SiLU throughout, block-wise dot-product heads for
  the two insult channels.
* UNet: five-level encoder/decoder (channels 8/16/32/64/448) with group
  normalization, GELU, max-pool downsampling, transpose-conv upsampling,
  and skip connections; 41x41 inputs are reflect-padded to 48x48 and the
  output is cropped back.
* LNO2d: four Laplace layers of width 32 with 8 poles per axis.  Each layer
  applies an exact two-dimensional pole-residue inversion of the separable
  transfer kernel

      K(s1, s2) = sum_n beta_n / ((s1 - g1_{n1}) (s2 - g2_{n2}))

  against the input's DFT representation, yielding the steady response (at
  the input poles), the transient response (at the system poles), and the
  two mixed terms; a parallel pointwise convolution and sine activation
  complete the layer.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def parameter_count(model: nn.Module) -> int:
    """torch numel semantics: a complex parameter counts once."""
    return sum(p.numel() for p in model.parameters())


class TrunkNet(nn.Module):
    """Coordinate MLP shared by both DeepONet variants: 2 -> 64 -> 64 -> p."""

    def __init__(self, latent_p: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2, 64), nn.SiLU(),
            nn.Linear(64, 64), nn.SiLU(),
            nn.Linear(64, latent_p),
        )

    def forward(self, coords):
        return self.net(coords)


class CNNDeepONet(nn.Module):
    def __init__(self, in_channels: int, latent_p: int = 64,
                 head_width: int = 768):
        super().__init__()
        self.latent_p = latent_p
        self.branch = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Flatten(),
            nn.Linear(64 * 6 * 6, head_width), nn.SiLU(),
            nn.Linear(head_width, 2 * latent_p),
        )
        self.trunk = TrunkNet(latent_p)
        self.bias = nn.Parameter(torch.zeros(2))

    def forward(self, images, coords):
        coeffs = self.branch(images).reshape(images.shape[0], 2, self.latent_p)
        feats = self.trunk(coords)                       # (M, p)
        pred = coeffs @ feats.T + self.bias[None, :, None]
        return pred                                      # (B, 2, M)


class _ConvBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        groups = math.gcd(8, c_out)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, c_out)

    def forward(self, x):
        x = F.gelu(self.norm1(self.conv1(x)))
        return F.gelu(self.norm2(self.conv2(x)))


class UNet(nn.Module):
    CHANNELS = (8, 16, 32, 64, 448)

    def __init__(self, in_channels: int, out_channels: int = 2):
        super().__init__()
        chans = self.CHANNELS
        self.encoders = nn.ModuleList()
        prev = in_channels
        for c in chans:
            self.encoders.append(_ConvBlock(prev, c))
            prev = c
        self.pool = nn.MaxPool2d(2)
        self.upconvs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for hi, lo in zip(chans[::-1][:-1], chans[::-1][1:]):
            self.upconvs.append(nn.ConvTranspose2d(hi, lo, 2, stride=2))
            self.decoders.append(_ConvBlock(2 * lo, lo))
        self.head = nn.Conv2d(chans[0], out_channels, 1)

    def forward(self, x):
        size = x.shape[-2:]
        pad = (48 - size[1], 48 - size[0])
        x = F.pad(x, (0, pad[0], 0, pad[1]), mode="reflect")
        skips = []
        for enc in self.encoders[:-1]:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.encoders[-1](x)
        for up, dec, skip in zip(self.upconvs, self.decoders, skips[::-1]):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        out = self.head(x)
        return out[..., :size[0], :size[1]]


class LaplaceLayer2d(nn.Module):
    """Pole-residue transfer layer on the unit square.

    The input is expanded in DFT exponentials exp(i w t); the layer's
    separable rational kernel

        K(s1, s2) = sum_{n1, n2} beta_{n1 n2} / ((s1 - g1_{n1}) (s2 - g2_{n2}))

    (poles shared across channel pairs, the complex residue tensor couples
    input to output channels) produces the steady-state response -- the
    kernel evaluated at the input poles, filtering the spectrum -- plus the
    transient response carried by the system-pole exponentials
    exp(g1 t1) exp(g2 t2) weighted by the input expanded at the poles.
    """

    def __init__(self, channels: int = 32, modes: int = 8,
                 cdtype=torch.cfloat):
        super().__init__()
        self.channels = channels
        self.modes = modes
        scale = 1.0 / (channels * channels)
        self.residues = nn.Parameter(
            scale * torch.randn(channels, channels, modes, modes, dtype=cdtype))
        # poles start decaying (negative real part) and spread in frequency
        def init_poles():
            re = -(0.3 + 0.5 * torch.rand(modes))
            im = torch.linspace(-math.pi * (modes - 1), math.pi * (modes - 1),
                                modes)
            return (re + 1j * im).to(cdtype)
        self.poles1 = nn.Parameter(init_poles())
        self.poles2 = nn.Parameter(init_poles())

    def _basis(self, N1, N2, device):
        """DFT analysis/synthesis matrices and pole grids; 41 is prime, so
        explicit small GEMMs beat Bluestein-path FFTs by a wide margin.
        The 1/(N1 N2) analysis scale is folded into the first matrix."""
        key = (N1, N2, self.residues.dtype, device)
        if getattr(self, "_basis_key", None) == key:
            return self._basis_cache
        cdtype = self.residues.dtype
        rdtype = torch.float64 if cdtype == torch.cdouble else torch.float32

        def dft(n):
            j = torch.arange(n, device=device, dtype=rdtype)
            ang = -2.0 * math.pi * j[:, None] * j[None, :] / n
            return torch.cos(ang), torch.sin(ang)

        f1r, f1i = dft(N1)
        f2r, f2i = dft(N2)
        cache = {
            # analysis (with the normalization folded in) as real/imag pairs
            "A1r": (f1r / (N1 * N2)).contiguous(), "A1i": (f1i / (N1 * N2)).contiguous(),
            "F2tr": f2r.T.contiguous(), "F2ti": f2i.T.contiguous(),
            # synthesis sum_k alpha_k e^{+i w_k t}: conjugate of the (symmetric) DFT
            "S1r": f1r.contiguous(), "S1i": (-f1i).contiguous(),
            "S2tr": f2r.contiguous(), "S2ti": (-f2i).contiguous(),
            "w1": 2j * math.pi * torch.fft.fftfreq(N1, 1.0 / N1).to(device).to(cdtype),
            "w2": 2j * math.pi * torch.fft.fftfreq(N2, 1.0 / N2).to(device).to(cdtype),
            "t1": (torch.arange(N1, device=device, dtype=rdtype) / N1).to(cdtype),
            "t2": (torch.arange(N2, device=device, dtype=rdtype) / N2).to(cdtype),
        }
        self._basis_key = key
        self._basis_cache = cache
        return cache

    def forward(self, x):
        # x: (B, C, N1, N2) real.  Complex tensors appear only in the small
        # pole-derived factors; every large product is a real GEMM on
        # (re, im) pairs acting on the trailing axis of a contiguous tensor,
        # which keeps both passes off the slow strided complex kernels.
        B, C, N1, N2 = x.shape
        rdtype = x.dtype
        bs = self._basis(N1, N2, x.device)

        def pair(z):
            return z.real.to(rdtype).contiguous(), z.imag.to(rdtype).contiguous()

        def cmm(a, b):
            # trailing-axis complex product of pairs via 3 real GEMMs
            k1 = (a[0] + a[1]) @ b[0]
            k2 = a[1] @ (b[0] + b[1])
            k3 = a[0] @ (b[1] - b[0])
            return k1 - k2, k1 + k3

        def re_mm(a, b):
            return a[0] @ b[0] - a[1] @ b[1]

        def swap(a):
            return (a[0].transpose(-2, -1).contiguous(),
                    a[1].transpose(-2, -1).contiguous())

        # spectrum alpha = F1 x F2^T / (N1 N2), assembled axis by axis so
        # every GEMM contracts a trailing dimension
        xt = x.transpose(-2, -1).contiguous()              # (B, C, N2, N1)
        m = (xt @ bs["A1r"].T, xt @ bs["A1i"].T)           # (B, C, N2, K1)
        alpha = cmm(swap(m), (bs["F2tr"], bs["F2ti"]))     # (B, C, K1, K2)

        p1 = 1.0 / (bs["w1"][None, :] - self.poles1[:, None])   # (n1, K1)
        p2 = 1.0 / (bs["w2"][None, :] - self.poles2[:, None])   # (n2, K2)
        e1 = torch.exp(self.poles1[:, None] * bs["t1"][None, :])  # (n1, T1)
        e2 = torch.exp(self.poles2[:, None] * bs["t2"][None, :])  # (n2, T2)

        res = self.residues                                # (i, o, n1, n2)
        h = torch.einsum("ionm,nx,my->ioxy", res, p1, p2)  # kernel at input poles

        def mix(a, weights, out_ch):
            # a: pair of (B, i, *pos); weights: complex (i, o, *pos).
            # Per-position channel mixing as one packed batched GEMM:
            # [ar; ai] @ [wr | wi] yields all four schoolbook products.
            pos = a[0].shape[2:]
            wr, wi = pair(weights.reshape(C, out_ch, -1).permute(2, 0, 1))
            w_pack = torch.cat([wr, wi], dim=2)            # (P, C, 2O)
            a_pack = torch.stack(a, dim=0).reshape(2 * B, C, -1) \
                .permute(2, 0, 1).contiguous()             # (P, 2B, C)
            y = torch.bmm(a_pack, w_pack)                  # (P, 2B, 2O)
            y = y.permute(1, 2, 0).reshape(2, B, 2, out_ch, *pos)
            out_r = y[0, :, 0] - y[1, :, 1]
            out_i = y[0, :, 1] + y[1, :, 0]
            return out_r.contiguous(), out_i.contiguous()

        out_ch = res.shape[1]
        # steady response: synthesize the kernel-filtered spectrum
        filt = mix(alpha, h, out_ch)                       # (B, O, K1, K2)
        v = cmm(filt, (bs["S2tr"], bs["S2ti"]))            # (B, O, K1, T2)
        u = re_mm(swap(v), (bs["S1r"], bs["S1i"]))         # (B, O, T2, T1)
        u = u.transpose(-2, -1)

        # transient response: expand the input spectrum at the system poles
        g1 = cmm(swap(alpha), pair(p1.T))                  # (B, C, K2, n1)
        g = cmm(swap(g1), pair(p2.T))                      # (B, C, n1, n2)
        a_t = mix(g, res, out_ch)                          # (B, O, n1, n2)
        w = cmm(a_t, pair(e2))                             # (B, O, n1, T2)
        u_tr = re_mm(swap(w), pair(e1))                    # (B, O, T2, T1)
        return u + u_tr.transpose(-2, -1)


class LNO2d(nn.Module):
    WIDTH = 32
    MODES = 8
    N_LAYERS = 4

    def __init__(self, in_channels: int, out_channels: int = 2,
                 cdtype=torch.cfloat):
        super().__init__()
        self.lift = nn.Linear(in_channels, self.WIDTH)
        self.laplace = nn.ModuleList(
            [LaplaceLayer2d(self.WIDTH, self.MODES, cdtype)
             for _ in range(self.N_LAYERS)])
        self.pointwise = nn.ModuleList(
            [nn.Conv2d(self.WIDTH, self.WIDTH, 1) for _ in range(self.N_LAYERS)])
        self.proj1 = nn.Conv2d(self.WIDTH, 128, 1)
        self.proj2 = nn.Conv2d(128, out_channels, 1)

    def forward(self, x):
        # x: (B, N1, N2, C) -> (B, C', N1, N2)
        x = self.lift(x).permute(0, 3, 1, 2)
        for lap, w in zip(self.laplace, self.pointwise):
            x = torch.sin(lap(x) + w(x))
        return self.proj2(torch.sin(self.proj1(x)))


def build_model(family: str, in_channels: int) -> nn.Module:
    if family == "cnn_deeponet":
        return CNNDeepONet(in_channels)
    if family == "unet":
        return UNet(in_channels)
    if family == "lno":
        return LNO2d(in_channels)
    raise ValueError(f"unknown architecture family {family!r}")
