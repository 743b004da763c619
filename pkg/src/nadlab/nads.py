"""Identification of neural anisotropy directions without training.

Two independent routes:

* gradient-covariance: sample parameter draws, take coarse finite-difference
  input gradients at a fixed evaluation point, and eigendecompose their
  uncentered second moment;
* mixed-second-derivative: power-iterate the draw-stacked mixed second
  derivative, applied matrix-free through finite differences of parameter
  gradients (forward) and nested differentiation (adjoint).

Both return an ordered orthonormal basis with its spectrum and enough
provenance to reproduce the run bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensorio
from .autodiff import Node
from .models import (
    ModelSpec,
    ParamSet,
    finite_diff_grad_input,
    forward,
    grad_input,
    init_params,
)
from .oracles import fix_signs
from .rng import Rng

GRAD_COV = "grad-cov"
MIXED = "mixed-2nd"


@dataclass(frozen=True)
class NadConfig:
    """Knobs shared by both discovery algorithms."""

    t: int = 5000
    h: float = 100.0
    eval_point: np.ndarray | None = None
    top_k: int | None = None
    power_budget: int = 300
    power_tol: float = 1e-6

    def __post_init__(self):
        if self.t < 2:
            raise ValueError("need at least 2 Monte-Carlo samples")
        if self.h <= 0:
            raise ValueError("finite-difference scale must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class NadBasis:
    """Ordered orthonormal directions with spectrum and provenance."""

    vectors: np.ndarray  # (d, k), columns are directions
    spectrum: np.ndarray  # (k,), descending
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.spectrum = np.asarray(self.spectrum, dtype=np.float64)
        d, k = self.vectors.shape
        if self.spectrum.shape != (k,):
            raise ValueError("one spectrum value per direction required")
        gram = self.vectors.T @ self.vectors
        if np.abs(gram - np.eye(k)).max() > 1e-6:
            raise ValueError("directions are not orthonormal within 1e-6")
        if np.any(np.diff(self.spectrum) > 1e-12 * max(self.spectrum[0], 1.0)):
            raise ValueError("spectrum must be sorted descending")
        if self.spectrum.min(initial=0.0) < -1e-10:
            raise ValueError("spectrum must be nonnegative")

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def matrix(self) -> np.ndarray:
        return self.vectors

    def direction(self, i: int) -> np.ndarray:
        return self.vectors[:, i]

    def save(self, path) -> None:
        tensorio.write_tensor(
            path,
            np.concatenate([self.vectors, self.spectrum[None, :]], axis=0),
            extra={"kind": "nad-basis", "provenance": self.provenance},
        )

    @classmethod
    def load(cls, path) -> "NadBasis":
        arr, header = tensorio.read_tensor(path)
        if header.get("kind") != "nad-basis":
            raise ValueError(f"{path} is not a nad-basis container")
        return cls(arr[:-1], arr[-1], header.get("provenance", {}))


def pca(samples, top_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the uncentered second moment of the samples.

    The mean is deliberately not subtracted: the quantities this estimates
    are raw second moments E[g g^T], and that is what the analytic examples
    match.  Eigenvector signs follow the largest-entry-positive convention.
    """
    mat = np.asarray(samples, dtype=np.float64)
    if mat.ndim != 2:
        mat = mat.reshape(len(mat), -1)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if n < top_k:
        raise ValueError(f"fewer samples ({n}) than requested components ({top_k})")
    second = mat.T @ mat / n
    vals, vecs = np.linalg.eigh(second)
    order = np.argsort(vals)[::-1][:top_k]
    return fix_signs(vecs[:, order]), np.maximum(vals[order], 0.0)


def _resolve_eval_point(spec: ModelSpec, cfg: NadConfig) -> np.ndarray:
    if cfg.eval_point is None:
        return np.zeros(spec.input_shape)
    x = np.asarray(cfg.eval_point, dtype=np.float64)
    if x.size != spec.dim:
        raise ValueError(
            f"evaluation point has {x.size} entries, model expects {spec.dim}"
        )
    return x.reshape(spec.input_shape)


def _array_hash(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()[:16]


def nads_gradient_covariance(spec: ModelSpec, cfg: NadConfig, rng: Rng) -> NadBasis:
    """Gradient-covariance route: coarse FD input gradients, then PCA.

    Draws cfg.t parameter sets, takes per-coordinate central differences of
    the output at scale cfg.h around the evaluation point (all 2D probes in
    one batched forward per draw, equivalent to the coordinate loop), and
    eigendecomposes the uncentered gradient second moment.
    """
    if spec.n_outputs != 1:
        raise ValueError("NAD discovery needs a scalar-output model")
    d = spec.dim
    top_k = cfg.top_k or d
    if cfg.t < top_k:
        raise ValueError(f"T={cfg.t} draws cannot support top_k={top_k}")
    x0 = _resolve_eval_point(spec, cfg)
    grads = np.empty((cfg.t, d))
    for t in range(cfg.t):
        params = init_params(spec, rng.child(t))
        grads[t] = finite_diff_grad_input(spec, params, x0, cfg.h).ravel()
    if not np.any(grads):
        raise ValueError(
            f"degenerate model {type(spec).__name__}: all sampled gradients are zero"
        )
    vectors, values = pca(grads, top_k)
    return NadBasis(
        vectors,
        values,
        provenance={
            "algorithm": GRAD_COV,
            "model": spec.spec_hash(),
            "T": cfg.t,
            "h": cfg.h,
            "eval_point": _array_hash(x0),
            "seed": rng.seed,
            "stream": rng.stream,
        },
    )


def power_iteration_svd(
    apply,
    apply_adjoint,
    dim: int,
    k: int,
    rng: Rng,
    budget: int = 300,
    tol: float = 1e-6,
    adjoint_check: float | None = 1e-6,
):
    """Top-k singular triplets of a matrix-free linear operator.

    Alternates the operator and its adjoint with deflation between triplets;
    convergence is declared when the Gram residual ||A^T A v - s^2 v|| drops
    below tol times the leading s^2.  Returns (triplets, warnings) where
    each triplet is (u, sigma, v); on budget exhaustion only the converged
    prefix is returned and a warning string is recorded.
    """
    probe_v = rng.gaussian(dim)
    probe_av = apply(probe_v)
    probe_u = rng.gaussian(np.asarray(probe_av).shape)
    if adjoint_check is not None:
        lhs = float(np.vdot(probe_av, probe_u))
        rhs = float(np.vdot(probe_v, apply_adjoint(probe_u)))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        if abs(lhs - rhs) > adjoint_check * scale:
            raise ValueError(
                f"apply/apply_adjoint are not consistent adjoints "
                f"(relative mismatch {abs(lhs - rhs) / scale:.3e})"
            )
    triplets = []
    warnings = []
    basis = []
    leading = None
    for i in range(k):
        v = rng.child(i).gaussian(dim)
        for prev in basis:
            v -= (prev @ v) * prev
        norm = np.linalg.norm(v)
        if norm == 0:
            warnings.append(f"triplet {i}: start vector vanished after deflation")
            break
        v /= norm
        converged = False
        sigma_sq = 0.0
        for _ in range(budget):
            g = apply_adjoint(apply(v))
            for prev, (_, sprev, vprev) in zip(basis, triplets):
                g -= (sprev**2) * (prev @ v) * prev
            sigma_sq = float(v @ g)
            ref = leading if leading is not None else max(sigma_sq, 1e-300)
            residual = np.linalg.norm(g - sigma_sq * v)
            gnorm = np.linalg.norm(g)
            if gnorm == 0:
                break
            v = g / gnorm
            for prev in basis:
                v -= (prev @ v) * prev
            v /= np.linalg.norm(v)
            if residual <= tol * ref:
                converged = True
                break
        if not converged:
            warnings.append(
                f"triplet {i}: residual above tolerance after {budget} iterations"
            )
            break
        sigma = math.sqrt(max(sigma_sq, 0.0))
        if leading is None:
            leading = max(sigma_sq, 1e-300)
        u = np.asarray(apply(v))
        if sigma > 0:
            u = u / sigma
        sign = np.sign(v[np.argmax(np.abs(v))]) or 1.0
        triplets.append((u * sign, sigma, v * sign))
        basis.append(v * sign)
    return triplets, warnings


def nads_mixed_second_derivative(spec: ModelSpec, cfg: NadConfig, rng: Rng) -> NadBasis:
    """Mixed-second-derivative route via power iteration.

    The operator stacks, over cfg.t parameter draws, the finite-difference
    directional derivative of the parameter gradient (scale cfg.h); its
    adjoint contracts a probe against each draw's parameter gradient and
    differentiates through the contraction w.r.t. the input.  Right singular
    vectors of the stack estimate the eigenvectors of the expected mixed
    Gram.  The spectrum stored is the squared singular values (per-draw
    average Gram eigenvalues).

    The adjoint uses exact nested differentiation while the forward side is
    a scale-h smoothing, so the generic adjoint spot-check does not apply to
    nonlinear models at coarse h; the measured mismatch is recorded in the
    provenance instead.
    """
    if spec.n_outputs != 1:
        raise ValueError("NAD discovery needs a scalar-output model")
    d = spec.dim
    top_k = cfg.top_k or min(d, 8)
    x0 = _resolve_eval_point(spec, cfg)
    draw_rng = rng.child(0)
    params = {
        info.name: draw_rng.gaussian((cfg.t,) + info.shape, info.std)
        for info in spec.layout()
    }
    layout = spec.layout()
    block_sizes = [int(np.prod(b.shape)) for b in layout]
    p_total = sum(block_sizes)
    scale = 1.0 / math.sqrt(cfg.t)

    def _param_grads(x_batch: np.ndarray):
        pnodes = {k: Node(v) for k, v in params.items()}
        out = spec.apply(pnodes, Node(x_batch))
        order = [pnodes[b.name] for b in layout]
        return pnodes, ad.grad(out, order, create_graph=True)

    def _flatten(grads) -> np.ndarray:
        cols = [g.value.reshape(cfg.t, -1) for g in grads]
        return np.concatenate(cols, axis=1)

    def apply_op(v: np.ndarray) -> np.ndarray:
        v = v.reshape(spec.input_shape)
        plus = np.broadcast_to(x0 + cfg.h * v, (cfg.t,) + spec.input_shape).copy()
        minus = np.broadcast_to(x0 - cfg.h * v, (cfg.t,) + spec.input_shape).copy()
        _, gp = _param_grads(plus)
        _, gm = _param_grads(minus)
        return (_flatten(gp) - _flatten(gm)) / (2.0 * cfg.h) * scale

    def apply_adjoint(u: np.ndarray) -> np.ndarray:
        tiled = np.broadcast_to(x0, (cfg.t,) + spec.input_shape).copy()
        pnodes = {k: Node(v) for k, v in params.items()}
        xn = Node(tiled)
        out = spec.apply(pnodes, xn)
        order = [pnodes[b.name] for b in layout]
        grads = ad.grad(out, order, create_graph=True)
        contracted = None
        pos = 0
        for g, info, size in zip(grads, layout, block_sizes):
            w = u[:, pos : pos + size].reshape((cfg.t,) + info.shape)
            term = ad.nsum(ad.mul(g, w))
            contracted = term if contracted is None else ad.add(contracted, term)
            pos += size
        (gx,) = ad.grad(contracted, [xn], create_graph=False)
        return gx.value.reshape(cfg.t, d).sum(axis=0) * scale

    # record the apply/adjoint consistency actually achieved at this h
    pv = rng.child(1).gaussian(d)
    pu = rng.child(2).gaussian((cfg.t, p_total))
    lhs = float(np.vdot(apply_op(pv), pu))
    rhs = float(np.vdot(pv, apply_adjoint(pu)))
    mismatch = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30)

    triplets, warnings = power_iteration_svd(
        apply_op,
        apply_adjoint,
        d,
        top_k,
        rng.child(3),
        budget=cfg.power_budget,
        tol=cfg.power_tol,
        adjoint_check=None,
    )
    if not triplets:
        raise ValueError("power iteration produced no converged triplets")
    vectors = np.stack([v for (_, _, v) in triplets], axis=1)
    spectrum = np.array([s**2 for (_, s, _) in triplets])
    order = np.argsort(spectrum)[::-1]
    provenance = {
        "algorithm": MIXED,
        "model": spec.spec_hash(),
        "T": cfg.t,
        "h": cfg.h,
        "eval_point": _array_hash(x0),
        "seed": rng.seed,
        "stream": rng.stream,
        "adjoint_mismatch": mismatch,
        "warnings": warnings,
    }
    return NadBasis(vectors[:, order], spectrum[order], provenance)


def basis_alignment(a: NadBasis, b: NadBasis, k: int) -> tuple[np.ndarray, float]:
    """Per-index |<u_i^a, u_i^b>| for i < k, plus the mean score."""
    if a.dim != b.dim:
        raise ValueError(f"ambient dimensions differ: {a.dim} vs {b.dim}")
    k = min(k, a.k, b.k)
    scores = np.abs(np.sum(a.vectors[:, :k] * b.vectors[:, :k], axis=0))
    return scores, float(scores.mean())


def dipole_confidence(
    spec: ModelSpec, params: ParamSet, x: np.ndarray, v: np.ndarray
) -> tuple[float, float]:
    """(exact, first-order) squared confidence on the dipole {x, x+v}.

    exact  = (f(x) - f(x+v))^2
    approx = (v . grad_x f(x))^2
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        raise ValueError("dipole displacement must be nonzero")
    x = np.asarray(x, dtype=np.float64)
    fx = forward(spec, params, x)
    fxv = forward(spec, params, x + v.reshape(x.shape))
    g = grad_input(spec, params, x)
    exact = (fx - fxv) ** 2
    approx = float(np.vdot(v.ravel(), g.ravel())) ** 2
    return float(exact), approx


def alignment_permutation(a: NadBasis, b: NadBasis) -> np.ndarray:
    """For each direction of ``a``, the best-matching index in ``b``."""
    if a.dim != b.dim:
        raise ValueError("ambient dimensions differ")
    overlap = np.abs(a.vectors.T @ b.vectors)
    return np.argmax(overlap, axis=1)
