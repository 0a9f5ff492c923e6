"""Piecewise-affine bijective layers and their composition.

The full model is F = A_{n+1} o B_n o ... o B_1 mapping latent to data
space, where each block B_i = A_i^{-1} o C_i o A_i conjugates an additive
coupling layer C_i by a learnable affine bijection A_i. Couplings are
volume preserving and the conjugating determinants cancel, so the
Jacobian determinant of F is the constant det(A_{n+1}): the flow is
uniformly scaling, and log-densities transfer between spaces up to a
constant. ReLU conditioners keep every layer piecewise affine.

Layers expose four evaluation paths: plain-numpy forward/inverse for
sampling and verification replay, and traced forward_t/inverse_t for
likelihood training (training differentiates the data-to-latent pass).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from . import numerics as nm
from .errors import ContractError, DimensionError
from .radial import RadialBase, StandardNormalBase

DIAG_CLIP = 10.0  # |log U_ii| bound; keeps the determinant from exploding


# ---------------------------------------------------------------------------
# masks

def half_mask(d: int, parity: int) -> np.ndarray:
    """First-half/second-half split for flat vectors."""
    mask = np.zeros(d)
    mask[: d // 2] = 1.0
    return mask if parity % 2 == 0 else 1.0 - mask

def checkerboard_mask(height: int, width: int, channels: int, parity: int) -> np.ndarray:
    """Spatial checkerboard, identical across channels, flattened."""
    hw = np.indices((height, width)).sum(axis=0) % 2
    mask = (hw == parity % 2).astype(np.float64)
    return np.repeat(mask.reshape(-1), channels)


# ---------------------------------------------------------------------------
# conditioners

def _he_init(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class DenseConditioner:
    """ReLU MLP producing the additive shift of a coupling layer.

    Hidden layers use ReLU; the output layer is linear and initialized to
    zero so a fresh coupling layer is the identity.
    """

    kind = "dense"

    def __init__(self, dim: int, hidden: int, depth: int, rng):
        sizes = [dim] + [hidden] * depth + [dim]
        self.weights = []
        self.biases = []
        for i, (fin, fout) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            w = np.zeros((fin, fout)) if last else _he_init(rng, fin, fout)
            self.weights.append(nm.Tensor(w, requires_grad=True))
            self.biases.append(nm.Tensor(np.zeros(fout), requires_grad=True))

    def parameters(self):
        return self.weights + self.biases

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = nm.matmul(h, w) + b
            if i != last:
                h = nm.relu(h)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def preactivation_signs(self, x: np.ndarray) -> np.ndarray:
        """ReLU activation pattern along the forward pass (kink bookkeeping)."""
        h = x
        bits = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                bits.append((h > 0.0).reshape(h.shape[0], -1))
                h = np.maximum(h, 0.0)
        return np.concatenate(bits, axis=1)

    def lower(self):
        """(W(out,in), b, relu_after) triples realizing the same function."""
        last = len(self.weights) - 1
        return [(w.data.T.copy(), b.data.copy(), i != last)
                for i, (w, b) in enumerate(zip(self.weights, self.biases))]


@lru_cache(maxsize=64)
def _conv_indices(n: int, height: int, width: int, channels: int):
    """Flat scatter/gather indices for 3x3 same-padded convolution.

    Returns (interior_idx, col_idx): interior_idx places an (n,H,W,C)
    tensor inside zeros of shape (n,H+2,W+2,C); col_idx gathers the
    (n, H*W, 9*C) patch matrix from the padded tensor.
    """
    hp, wp = height + 2, width + 2
    i, h, w, c = np.meshgrid(np.arange(n), np.arange(height), np.arange(width),
                             np.arange(channels), indexing="ij")
    interior = ((i * hp + (h + 1)) * wp + (w + 1)) * channels + c
    i, h, w, dh, dw, c = np.meshgrid(
        np.arange(n), np.arange(height), np.arange(width),
        np.arange(3), np.arange(3), np.arange(channels), indexing="ij")
    cols = ((i * hp + (h + dh)) * wp + (w + dw)) * channels + c
    return interior.reshape(-1), cols.reshape(n, height * width, 9 * channels)


class ConvConditioner:
    """Stack of 3x3 same-padded convolutions for image-shaped inputs.

    Input and output are flattened (H, W, C) tensors; hidden layers carry
    `hidden` channels with ReLU, the last convolution maps back to C
    channels and starts at zero.
    """

    kind = "conv"

    def __init__(self, shape, hidden: int, depth: int, rng):
        self.shape = tuple(shape)  # (H, W, C)
        h, w, c = self.shape
        chans = [c] + [hidden] * (depth - 1) + [c]
        self.weights = []
        self.biases = []
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            last = i == depth - 1
            wgt = np.zeros((9 * cin, cout)) if last else _he_init(rng, 9 * cin, cout)
            self.weights.append(nm.Tensor(wgt, requires_grad=True))
            self.biases.append(nm.Tensor(np.zeros(cout), requires_grad=True))

    def parameters(self):
        return self.weights + self.biases

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        n = x.shape[0]
        height, width, _ = self.shape
        h = x
        cin = self.shape[2]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            interior, cols = _conv_indices(n, height, width, cin)
            padded = nm.put(nm.reshape(h, (-1,)),
                            (n * (height + 2) * (width + 2) * cin,), interior)
            patches = nm.reshape(nm.take(padded, cols),
                                 (n * height * width, 9 * cin))
            h = nm.matmul(patches, w) + b
            cout = w.shape[1]
            h = nm.reshape(h, (n, height * width * cout))
            if i != last:
                h = nm.relu(h)
            cin = cout
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        height, width, _ = self.shape
        h = x
        cin = self.shape[2]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            interior, cols = _conv_indices(n, height, width, cin)
            padded = np.zeros(n * (height + 2) * (width + 2) * cin)
            padded[interior] = h.reshape(-1)
            patches = padded[cols].reshape(n * height * width, 9 * cin)
            h = patches @ w.data + b.data
            cout = w.data.shape[1]
            h = h.reshape(n, height * width * cout)
            if i != last:
                np.maximum(h, 0.0, out=h)
            cin = cout
        return h

    def preactivation_signs(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        height, width, _ = self.shape
        h = x
        cin = self.shape[2]
        bits = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            interior, cols = _conv_indices(n, height, width, cin)
            padded = np.zeros(n * (height + 2) * (width + 2) * cin)
            padded[interior] = h.reshape(-1)
            patches = padded[cols].reshape(n * height * width, 9 * cin)
            h = patches @ w.data + b.data
            cout = w.data.shape[1]
            h = h.reshape(n, height * width * cout)
            if i != last:
                bits.append((h > 0.0).reshape(n, -1))
                np.maximum(h, 0.0, out=h)
            cin = cout
        return np.concatenate(bits, axis=1)

    def lower(self):
        """Materialize each convolution as a dense (out, in) affine layer."""
        height, width, _ = self.shape
        out = []
        cin = self.shape[2]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cout = w.data.shape[1]
            din = height * width * cin
            dout = height * width * cout
            interior, cols = _conv_indices(1, height, width, cin)
            basis = np.eye(din)
            padded = np.zeros((din, (height + 2) * (width + 2) * cin))
            padded[:, interior] = basis
            patches = padded[:, cols[0]].reshape(din * height * width, 9 * cin)
            m = (patches @ w.data).reshape(din, dout).T
            bias = np.tile(b.data, height * width)
            out.append((np.ascontiguousarray(m), bias, i != last))
            cin = cout
        return out


# ---------------------------------------------------------------------------
# affine bijections

class LUAffineLayer:
    """Bijective affine map T(x) = (L U) x + b.

    L is unit lower triangular, U upper triangular with diagonal
    sign * exp(t) where t is clamped to [-DIAG_CLIP, DIAG_CLIP]; the
    diagonal can therefore never vanish and log|det| = sum(t) exactly.
    Starts at the identity.
    """

    kind = "lu-affine"

    def __init__(self, dim: int):
        self.dim = dim
        self.l_param = nm.Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.u_param = nm.Tensor(np.zeros((dim, dim)), requires_grad=True)
        self.diag_t = nm.Tensor(np.zeros(dim), requires_grad=True)
        self.diag_sign = np.ones(dim)
        self.bias = nm.Tensor(np.zeros(dim), requires_grad=True)
        self._mask_low = np.tril(np.ones((dim, dim)), -1)
        self._mask_up = np.triu(np.ones((dim, dim)), 1)
        self._diag_idx = np.arange(dim) * (dim + 1)

    def parameters(self):
        return [self.l_param, self.u_param, self.diag_t, self.bias]

    def reg_terms(self):
        """Parameters whose squared magnitude the LU regularizer penalizes."""
        return [(self.l_param, self._mask_low), (self.u_param, self._mask_up),
                (self.diag_t, None)]

    def _lu_t(self):
        d = self.dim
        eye = nm.Tensor(np.eye(d))
        low = self.l_param * nm.Tensor(self._mask_low) + eye
        diag = nm.put(self.diag_sign * nm.exp(nm.clip(self.diag_t, -DIAG_CLIP, DIAG_CLIP)),
                      (d, d), self._diag_idx)
        up = self.u_param * nm.Tensor(self._mask_up) + diag
        return low, up

    def matrix_t(self) -> nm.Tensor:
        low, up = self._lu_t()
        return nm.matmul(low, up)

    def matrices(self):
        """(L, U) as plain arrays at the current parameters."""
        d = self.dim
        low = self.l_param.data * self._mask_low + np.eye(d)
        diag = self.diag_sign * np.exp(np.clip(self.diag_t.data, -DIAG_CLIP, DIAG_CLIP))
        up = self.u_param.data * self._mask_up + np.diag(diag)
        return low, up

    def matrix(self) -> np.ndarray:
        low, up = self.matrices()
        return low @ up

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        return nm.matmul(x, nm.transpose(self.matrix_t())) + self.bias

    def inverse_t(self, y: nm.Tensor) -> nm.Tensor:
        a = self.matrix_t()
        rhs = nm.transpose(y - self.bias)
        return nm.transpose(nm.solve(a, rhs))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix().T + self.bias.data

    def inverse(self, y: np.ndarray) -> np.ndarray:
        low, up = self.matrices()
        z = (y - self.bias.data).T
        w = solve_triangular(low, z, lower=True, unit_diagonal=True)
        return solve_triangular(up, w, lower=False).T

    def log_det(self) -> float:
        return float(np.clip(self.diag_t.data, -DIAG_CLIP, DIAG_CLIP).sum())

    def log_det_t(self) -> nm.Tensor:
        return nm.tsum(nm.clip(self.diag_t, -DIAG_CLIP, DIAG_CLIP))

    def perturb(self, rng, scale: float = 0.1) -> None:
        """Move off the identity; used by tests and toy constructions."""
        self.l_param.data += rng.normal(0, scale, self.l_param.shape) * self._mask_low
        self.u_param.data += rng.normal(0, scale, self.u_param.shape) * self._mask_up
        self.diag_t.data += rng.normal(0, scale, self.dim)
        self.bias.data += rng.normal(0, scale, self.dim)


class OneStarConv:
    """Kernel-size-1 convolution: one shared LU channel transform applied
    at every spatial position. Equals a block-diagonal affine bijection on
    the flattened input with log|det| = (spatial positions) * sum log|U_ii|.
    """

    kind = "one-star-conv"

    def __init__(self, shape):
        self.shape = tuple(shape)
        h, w, c = self.shape
        self.positions = h * w
        self.channel = LUAffineLayer(c)

    @property
    def dim(self):
        h, w, c = self.shape
        return h * w * c

    def parameters(self):
        return self.channel.parameters()

    def reg_terms(self):
        return self.channel.reg_terms()

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        n = x.shape[0]
        c = self.shape[2]
        flat = nm.reshape(x, (n * self.positions, c))
        out = nm.matmul(flat, nm.transpose(self.channel.matrix_t())) + self.channel.bias
        return nm.reshape(out, (n, self.dim))

    def inverse_t(self, y: nm.Tensor) -> nm.Tensor:
        n = y.shape[0]
        c = self.shape[2]
        flat = nm.reshape(y, (n * self.positions, c))
        a = self.channel.matrix_t()
        z = nm.transpose(nm.solve(a, nm.transpose(flat - self.channel.bias)))
        return nm.reshape(z, (n, self.dim))

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        c = self.shape[2]
        flat = x.reshape(n * self.positions, c)
        return self.channel.forward(flat).reshape(n, self.dim)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        n = y.shape[0]
        c = self.shape[2]
        flat = y.reshape(n * self.positions, c)
        return self.channel.inverse(flat).reshape(n, self.dim)

    def matrix(self) -> np.ndarray:
        a = self.channel.matrix()
        return np.kron(np.eye(self.positions), a)

    def log_det(self) -> float:
        return self.positions * self.channel.log_det()

    def log_det_t(self) -> nm.Tensor:
        return float(self.positions) * self.channel.log_det_t()

    def perturb(self, rng, scale: float = 0.1) -> None:
        self.channel.perturb(rng, scale)

    @property
    def bias_full(self) -> np.ndarray:
        return np.tile(self.channel.bias.data, self.positions)


class DiagonalScaling:
    """Component-wise rescaling with sign-fixed nonzero diagonal."""

    kind = "diagonal"

    def __init__(self, dim: int):
        self.dim = dim
        self.diag_t = nm.Tensor(np.zeros(dim), requires_grad=True)
        self.diag_sign = np.ones(dim)

    def parameters(self):
        return [self.diag_t]

    def reg_terms(self):
        return [(self.diag_t, None)]

    def _diag(self) -> np.ndarray:
        return self.diag_sign * np.exp(np.clip(self.diag_t.data, -DIAG_CLIP, DIAG_CLIP))

    def _diag_t(self) -> nm.Tensor:
        return self.diag_sign * nm.exp(nm.clip(self.diag_t, -DIAG_CLIP, DIAG_CLIP))

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        return x * self._diag_t()

    def inverse_t(self, y: nm.Tensor) -> nm.Tensor:
        return y * (1.0 / self._diag_t())

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x * self._diag()

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y / self._diag()

    def matrix(self) -> np.ndarray:
        return np.diag(self._diag())

    def log_det(self) -> float:
        return float(np.clip(self.diag_t.data, -DIAG_CLIP, DIAG_CLIP).sum())

    def log_det_t(self) -> nm.Tensor:
        return nm.tsum(nm.clip(self.diag_t, -DIAG_CLIP, DIAG_CLIP))

    def perturb(self, rng, scale: float = 0.1) -> None:
        self.diag_t.data += rng.normal(0, scale, self.dim)

    @property
    def bias_full(self) -> np.ndarray:
        return np.zeros(self.dim)


# ---------------------------------------------------------------------------
# coupling and blocks

class CouplingLayer:
    """Additive coupling: y = x + (1 - mask) * c(mask * x).

    Volume preserving with Jacobian determinant exactly 1; the inverse is
    the same map with the shift subtracted, because the conditioner only
    ever sees the masked coordinates, which the layer leaves unchanged.
    """

    def __init__(self, mask: np.ndarray, conditioner):
        self.mask = np.asarray(mask, dtype=np.float64)
        self.conditioner = conditioner

    def parameters(self):
        return self.conditioner.parameters()

    def forward_t(self, x: nm.Tensor) -> nm.Tensor:
        shift = self.conditioner.forward_t(x * self.mask)
        return x + (1.0 - self.mask) * shift

    def inverse_t(self, y: nm.Tensor) -> nm.Tensor:
        shift = self.conditioner.forward_t(y * self.mask)
        return y - (1.0 - self.mask) * shift

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x + (1.0 - self.mask) * self.conditioner.forward(x * self.mask)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y - (1.0 - self.mask) * self.conditioner.forward(y * self.mask)

    def preactivation_signs(self, x: np.ndarray) -> np.ndarray:
        return self.conditioner.preactivation_signs(x * self.mask)


class AdjointBlock:
    """B = A^{-1} o C o A: a coupling layer conjugated by an affine
    bijection. Volume preserving because the affine determinants cancel."""

    def __init__(self, affine, coupling: CouplingLayer):
        self.affine = affine
        self.coupling = coupling

    def parameters(self):
        return self.affine.parameters() + self.coupling.parameters()

    def forward_t(self, z):
        return self.affine.inverse_t(self.coupling.forward_t(self.affine.forward_t(z)))

    def inverse_t(self, x):
        return self.affine.inverse_t(self.coupling.inverse_t(self.affine.forward_t(x)))

    def forward(self, z):
        return self.affine.inverse(self.coupling.forward(self.affine.forward(z)))

    def inverse(self, x):
        return self.affine.inverse(self.coupling.inverse(self.affine.forward(x)))


class PlainBlock:
    """A bare coupling layer; the building block of the ablation baseline."""

    def __init__(self, coupling: CouplingLayer):
        self.affine = None
        self.coupling = coupling

    def parameters(self):
        return self.coupling.parameters()

    def forward_t(self, z):
        return self.coupling.forward_t(z)

    def inverse_t(self, x):
        return self.coupling.inverse_t(x)

    def forward(self, z):
        return self.coupling.forward(z)

    def inverse(self, x):
        return self.coupling.inverse(x)


# ---------------------------------------------------------------------------
# the flow model

class FlowModel:
    """Ordered blocks plus an optional final affine bijection and a base
    distribution. uniformly_scaling is true by construction for every
    model this module builds (all blocks are volume preserving)."""

    def __init__(self, blocks, final_affine, base, shape=None):
        self.blocks = list(blocks)
        self.final_affine = final_affine
        self.base = base
        self.dim = base.dim
        self.shape = tuple(shape) if shape is not None else (self.dim,)
        self.uniformly_scaling = True

    def parameters(self):
        params = []
        for b in self.blocks:
            params.extend(b.parameters())
        if self.final_affine is not None:
            params.extend(self.final_affine.parameters())
        params.extend(self.base.parameters())
        return params

    def lu_reg_terms(self):
        terms = []
        for b in self.blocks:
            if b.affine is not None:
                terms.extend(b.affine.reg_terms())
        if self.final_affine is not None:
            terms.extend(self.final_affine.reg_terms())
        return terms

    # -- evaluation ------------------------------------------------------

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionError(f"expected width {self.dim}, got {x.shape[1]}")
        return x

    def forward(self, z) -> np.ndarray:
        """Latent to data: x = F(z). Accepts (n, d) or (d,)."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        x = self._check_dim(z)
        for b in self.blocks:
            x = b.forward(x)
        if self.final_affine is not None:
            x = self.final_affine.forward(x)
        return x[0] if single else x

    def inverse(self, x) -> np.ndarray:
        """Data to latent: z = F^{-1}(x); same cost as forward."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        z = self._check_dim(x)
        if self.final_affine is not None:
            z = self.final_affine.inverse(z)
        for b in reversed(self.blocks):
            z = b.inverse(z)
        return z[0] if single else z

    def forward_t(self, z: nm.Tensor) -> nm.Tensor:
        x = z
        for b in self.blocks:
            x = b.forward_t(x)
        if self.final_affine is not None:
            x = self.final_affine.forward_t(x)
        return x

    def inverse_t(self, x: nm.Tensor) -> nm.Tensor:
        z = x
        if self.final_affine is not None:
            z = self.final_affine.inverse_t(z)
        for b in reversed(self.blocks):
            z = b.inverse_t(z)
        return z

    # -- densities ---------------------------------------------------------

    def log_det_constant(self) -> float:
        """The global constant log|det dF/dz| (blocks contribute zero)."""
        if not self.uniformly_scaling:
            raise ContractError("flow is not uniformly scaling")
        return 0.0 if self.final_affine is None else self.final_affine.log_det()

    def log_prob(self, x) -> np.ndarray:
        """log p(x) = log p_base(F^{-1}(x)) - log|det dF/dz|."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        z = self.inverse(np.atleast_2d(x))
        out = self.base.log_density(z) - self.log_det_constant()
        return float(out[0]) if single else out

    def log_prob_t(self, x: nm.Tensor) -> nm.Tensor:
        z = self.inverse_t(x)
        ld = 0.0 if self.final_affine is None else self.final_affine.log_det_t()
        return self.base.log_density_t(z) - ld

    def sample(self, n: int, rng) -> np.ndarray:
        return self.forward(self.base.sample(n, rng))

    # -- level sets -----------------------------------------------------------

    def udl_contains(self, x, q: float, radius: float | None = None) -> np.ndarray:
        """Whether points lie in the learned upper density level set at
        mass q: |F^{-1}(x)|_k < radius, radius defaulting to the analytic
        quantile. Pass a recalibrated radius to use it instead."""
        if radius is None:
            radius = self.base.udl_radius(q)
        z = self.inverse(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return self.base.norm_of(z) < radius

    def latent_norms(self, x) -> np.ndarray:
        return self.base.norm_of(self.inverse(np.atleast_2d(x)))

    # -- piecewise structure ---------------------------------------------------

    def activation_pattern(self, x) -> np.ndarray:
        """Boolean signature of the affine region containing each point.

        Collects every conditioner ReLU sign along the inverse pass plus
        the latent coordinate signs (the base log-density of a k-radial
        distribution kinks where a coordinate changes sign, and for
        k=inf also where the maximizing coordinate changes).
        """
        x = self._check_dim(np.asarray(x, dtype=np.float64))
        bits = []
        z = x
        if self.final_affine is not None:
            z = self.final_affine.inverse(z)
        for b in reversed(self.blocks):
            if b.affine is not None:
                h = b.affine.forward(z)
                bits.append(b.coupling.preactivation_signs(h))
                z = b.affine.inverse(b.coupling.inverse(h))
            else:
                bits.append(b.coupling.preactivation_signs(z))
                z = b.coupling.inverse(z)
        bits.append(z > 0.0)
        if getattr(self.base, "k", 2) == np.inf:
            amax = np.argmax(np.abs(z), axis=1)
            onehot = np.zeros(z.shape, dtype=bool)
            onehot[np.arange(z.shape[0]), amax] = True
            bits.append(onehot)
        return np.concatenate(bits, axis=1)

    def perturb(self, rng, scale: float = 0.5) -> None:
        """Randomize conditioner weights and affine parameters (tests and
        toy fixtures; trained models come from the training module)."""
        for b in self.blocks:
            cond = b.coupling.conditioner
            for w in cond.weights:
                w.data += rng.normal(0, scale / max(1, np.sqrt(w.shape[0])), w.shape)
            for bias in cond.biases:
                bias.data += rng.normal(0, 0.1 * scale, bias.shape)
            if b.affine is not None:
                b.affine.perturb(rng, 0.2 * scale)
        if self.final_affine is not None:
            self.final_affine.perturb(rng, 0.2 * scale)


# ---------------------------------------------------------------------------
# builders

def _make_base(dim: int, k, base_kind: str, learnable: bool):
    if base_kind == "standard-normal":
        return StandardNormalBase(dim)
    return RadialBase.make(dim, k, base_kind, learnable)


def build_flow(shape, n_blocks: int = 5, k=1, base_kind: str = "gamma",
               conditioner_depth: int = 3, conditioner_width: int | None = None,
               conv_channels: int = 8, final: str = "lu-affine",
               learnable_base: bool = True, seed: int = 0) -> FlowModel:
    """Assemble the default architecture.

    shape is either (d,) for flat data or (H, W, C) for images. Flat
    models use dense conditioners, half masks and dense LU affines;
    image models use convolutional conditioners, checkerboard masks and
    one-star convolutions. Masks flip parity per block.
    """
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    image = len(shape) == 3
    dim = int(np.prod(shape))
    blocks = []
    for i in range(n_blocks):
        if image:
            h, w, c = shape
            mask = checkerboard_mask(h, w, c, parity=i)
            cond = ConvConditioner(shape, conv_channels, conditioner_depth, rng)
            affine = OneStarConv(shape)
        else:
            mask = half_mask(dim, parity=i)
            width = conditioner_width or 2 * dim
            cond = DenseConditioner(dim, width, conditioner_depth, rng)
            affine = LUAffineLayer(dim)
        blocks.append(AdjointBlock(affine, CouplingLayer(mask, cond)))
    if final == "lu-affine":
        final_affine = OneStarConv(shape) if image else LUAffineLayer(dim)
    elif final == "diagonal":
        final_affine = DiagonalScaling(dim)
    elif final == "none":
        final_affine = None
    else:
        raise ContractError(f"unknown final affine kind {final!r}")
    base = _make_base(dim, k, base_kind, learnable_base)
    return FlowModel(blocks, final_affine, base, shape=shape)


def build_baseline(shape, n_blocks: int = 5, conditioner_depth: int = 3,
                   conditioner_width: int | None = None, conv_channels: int = 8,
                   seed: int = 0) -> FlowModel:
    """Coupling-only ablation baseline: no adjoint affine action, no final
    affine, fixed standard-normal base."""
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    image = len(shape) == 3
    dim = int(np.prod(shape))
    blocks = []
    for i in range(n_blocks):
        if image:
            h, w, c = shape
            mask = checkerboard_mask(h, w, c, parity=i)
            cond = ConvConditioner(shape, conv_channels, conditioner_depth, rng)
        else:
            mask = half_mask(dim, parity=i)
            width = conditioner_width or 2 * dim
            cond = DenseConditioner(dim, width, conditioner_depth, rng)
        blocks.append(PlainBlock(CouplingLayer(mask, cond)))
    return FlowModel(blocks, None, StandardNormalBase(dim), shape=shape)
