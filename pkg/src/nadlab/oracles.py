"""Closed-form results for the pooling analysis and their Monte-Carlo oracles.

Every quantity comes in two routes: the analytic expression and an
independent sampling estimator.  Comparisons between them are made after
unit-trace normalization wherever only the eigenstructure (not the absolute
scale) is the claim; the estimators are the authority on constants.

Degenerate signal-to-noise cases (0/0) raise ``DegenerateSnr`` instead of
silently collapsing to 0 or infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import Node
from .models import AliasingOperator, ModelSpec, ParamSet, init_params
from .rng import Rng


class DegenerateSnr(ValueError):
    """Both the surviving signal energy and the aliased noise energy vanish."""


def q_tail(t) -> float | np.ndarray:
    """Standard normal tail probability Q(t) = 1 - Phi(t)."""
    out = 0.5 * special.erfc(np.asarray(t, dtype=np.float64) / math.sqrt(2.0))
    return float(out) if np.ndim(t) == 0 else out


def boxcar_spectrum(d: int, s: int) -> np.ndarray:
    """Magnitude spectrum of the width-s averaging filter on d bins."""
    kernel = np.zeros(d)
    kernel[:s] = 1.0 / s
    return np.abs(np.fft.fft(kernel))


def gamma_snr(m_hat: np.ndarray, ell: int, s: int, d: int) -> float:
    """Post-pooling signal-to-noise ratio of a feature at spectral index ell.

    gamma^2 = S |m_hat[ell]|^2 / sum_{k=1}^{S-1} |m_hat[(ell + k*M) mod D]|^2.
    Returns +inf when the aliased noise energy is zero but the signal
    survives (perfect separation).
    """
    m_hat = np.asarray(m_hat)
    if m_hat.shape != (d,):
        raise ValueError(f"m_hat must have shape ({d},)")
    op = AliasingOperator(s, d)  # validates D = S*M
    m = op.m
    num = abs(m_hat[ell]) ** 2 * s
    den = sum(abs(m_hat[(ell + k * m) % d]) ** 2 for k in range(1, s))
    if den == 0.0:
        if num == 0.0:
            raise DegenerateSnr(f"gamma(ell={ell}): 0/0, feature and aliases all erased")
        return math.inf
    return math.sqrt(num / den)


def bayes_accuracy_after_pooling(
    m_hat: np.ndarray, ell: int, epsilon: float, sigma: float, s: int, d: int
) -> float:
    """Best achievable accuracy on the pooled distribution, 1 - Q(c*gamma).

    The constant is c = sqrt(2)*epsilon/(2*sigma).  May raise DegenerateSnr.
    """
    gamma = gamma_snr(m_hat, ell, s, d)
    if sigma == 0.0:
        if gamma > 0.0:
            return 1.0
        raise DegenerateSnr("sigma = 0 with gamma = 0: no signal, no noise")
    if math.isinf(gamma):
        return 1.0
    return 1.0 - q_tail(math.sqrt(2.0) * epsilon / (2.0 * sigma) * gamma)


def mc_bayes_accuracy(
    m_hat: np.ndarray,
    ell: int,
    epsilon: float,
    sigma: float,
    s: int,
    d: int,
    n: int,
    rng: Rng,
    chunk: int = 25000,
) -> float:
    """Empirical accuracy of the optimal classifier on simulated pooled data.

    Simulates the spectral model behind the closed form: the feature bin
    carries epsilon*y exactly, every other bin carries circular complex
    Gaussian noise of complex variance sigma^2, the spectrum is filtered by
    m_hat and folded by the aliasing sum, and the classifier thresholds the
    matched-phase real part of the surviving signal bin.
    """
    if n < 1000:
        raise ValueError("at least 1000 Monte-Carlo samples are required")
    m_hat = np.asarray(m_hat, dtype=np.complex128)
    op = AliasingOperator(s, d)
    m = op.m
    phase = m_hat[ell] / abs(m_hat[ell]) if abs(m_hat[ell]) > 0 else 1.0
    correct = 0
    done = 0
    while done < n:
        c = min(chunk, n - done)
        y = rng.signs(c)
        noise = rng.gaussian((c, d), sigma / math.sqrt(2.0)) + 1j * rng.gaussian(
            (c, d), sigma / math.sqrt(2.0)
        )
        noise[:, ell] = 0.0  # noise is orthogonal to the feature direction
        x_hat = noise
        x_hat[:, ell] += epsilon * y
        z_hat = (x_hat * m_hat[None, :]).reshape(c, s, m).sum(axis=1) / math.sqrt(s)
        stat = np.real(np.conj(phase) * z_hat[:, ell % m])
        pred = np.where(stat > 0, 1.0, -1.0)
        correct += int(np.sum(pred == y))
        done += c
    return correct / n


def conditioning_ratio(m: np.ndarray, ell: int, epsilon: float, sigma: float) -> float:
    """zeta(ell) = epsilon^2 m^2[ell] / (sigma^2 max(m^2))."""
    m = np.asarray(m, dtype=np.float64)
    m2 = m * m
    peak = m2.max()
    if peak == 0.0:
        raise ValueError("prefilter m must be nonzero")
    return epsilon**2 * m2[ell] / (sigma**2 * peak)


# ---------------------------------------------------------------------------
# curvature and covariance closed forms


@dataclass(frozen=True)
class HessianDecomposition:
    """Signal and noise terms of an averaged loss Hessian."""

    signal: np.ndarray
    noise: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.signal + self.noise


@dataclass
class CovarianceResult:
    """Symmetric PSD matrix with its ordered eigendecomposition."""

    matrix: np.ndarray
    eigenvalues: np.ndarray = field(init=False)
    eigenvectors: np.ndarray = field(init=False)  # columns, matching order
    std_error: np.ndarray | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        mat = 0.5 * (mat + mat.T)
        self.matrix = mat
        vals, vecs = np.linalg.eigh(mat)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        scale = max(abs(vals[0]), 1.0)
        if vals[-1] < -1e-10 * scale:
            raise ValueError(f"matrix is not PSD: min eigenvalue {vals[-1]:.3e}")
        self.eigenvalues = vals
        self.eigenvectors = fix_signs(vecs)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs so the largest-magnitude entry is positive."""
    vecs = vecs.copy()
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs[None, :]


def unit_trace(matrix: np.ndarray) -> np.ndarray:
    tr = np.trace(matrix)
    if tr <= 0:
        raise ValueError("matrix trace must be positive for normalization")
    return matrix / tr


def expected_hessian_phi(
    m: np.ndarray, ell: int, epsilon: float, sigma: float, sigma_theta: float
) -> HessianDecomposition:
    """Average Hessian of the quadratic pooling loss w.r.t. the filter phi.

    signal = 2 eps^2 m^2[ell] sigma_theta^2 diag(e_ell),
    noise  = 2 sigma^2 sigma_theta^2 diag(m^2).
    Both terms share the same suppressed 1/S factor, so the decomposition is
    exact up to one global constant (comparisons are trace-normalized).
    """
    m = np.asarray(m, dtype=np.float64)
    d = m.size
    signal = np.zeros((d, d))
    signal[ell, ell] = 2.0 * epsilon**2 * m[ell] ** 2 * sigma_theta**2
    noise = 2.0 * sigma**2 * sigma_theta**2 * np.diag(m * m)
    return HessianDecomposition(signal, noise)


def expected_hessian_theta(
    m: np.ndarray, ell: int, epsilon: float, sigma: float, sigma_phi: float, s: int
) -> HessianDecomposition:
    """Average Hessian w.r.t. the output weights theta (M x M).

    The noise term is the symmetric completion A diag(m^2) A^T; the signal
    spike carries the matching 1/S so the two terms stay on one scale.
    """
    m = np.asarray(m, dtype=np.float64)
    d = m.size
    op = AliasingOperator(s, d)
    mm = op.m
    signal = np.zeros((mm, mm))
    signal[ell % mm, ell % mm] = 2.0 * epsilon**2 * m[ell] ** 2 * sigma_phi**2 / s
    folded = (m * m).reshape(s, mm).sum(axis=0) / s
    noise = 2.0 * sigma**2 * sigma_phi**2 * np.diag(folded)
    return HessianDecomposition(signal, noise)


def pooling_grad_covariance(
    m: np.ndarray, sigma_theta: float, sigma_phi: float, s: int
) -> CovarianceResult:
    """Input-gradient covariance of the linear pooling model: c * diag(m^2).

    Eigenvectors are canonical basis vectors ordered by m^2; the printed
    scale sigma_phi^2 sigma_theta^2 is kept (true constant carries 1/S;
    trace-normalized comparisons are unaffected).
    """
    m = np.asarray(m, dtype=np.float64)
    return CovarianceResult(sigma_phi**2 * sigma_theta**2 * np.diag(m * m))


def pooling_mixed_gram(
    m: np.ndarray, sigma_theta: float, sigma_phi: float, s: int
) -> CovarianceResult:
    """Expected Gram of the mixed second derivative: same eigenvectors.

    (sigma_theta^2 + sigma_phi^2 / S) diag(m^2) as printed; shares its
    eigenbasis with pooling_grad_covariance whenever m^2 has distinct
    entries.
    """
    m = np.asarray(m, dtype=np.float64)
    scale = sigma_theta**2 + sigma_phi**2 / s
    return CovarianceResult(scale * np.diag(m * m))


def logistic_covariance(sigma_theta: float, d: int) -> CovarianceResult:
    """sigma_theta^2 I: a single linear layer has no directional bias."""
    return CovarianceResult(sigma_theta**2 * np.eye(d))


def single_hidden_covariance(
    sigma_theta: float, sigma_big_phi: float, d: int, width: int | None = None
) -> CovarianceResult:
    """(width/2) sigma_theta^2 sigma_Phi^2 I for the bias-free ReLU layer.

    The width/2 scale is the one the sampling oracle confirms (each hidden
    unit contributes sigma^2/2 per input coordinate); width defaults to d.
    """
    h = d if width is None else width
    return CovarianceResult((h / 2.0) * sigma_theta**2 * sigma_big_phi**2 * np.eye(d))


def nonlinear_pooling_covariance(
    x: np.ndarray, m: np.ndarray, sigma_theta: float, sigma_phi: float, s: int
) -> CovarianceResult:
    """Input-gradient covariance of the ReLU pooling model at a fixed input.

    sigma_theta^2 (A^T A  .*  m m^T  .*  Xi(x)) where the Xi entries follow
    the half-Gaussian moments of phi restricted by the signs of x:
    diagonal sigma_phi^2/2 (x[j] != 0) or sigma_phi^2 (x[j] == 0, where the
    unit indicator convention keeps the coordinate alive); off-diagonal
    sign(x[i]) sign(x[j]) sigma_phi^2 / (2 pi), zero if either entry is 0.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    d = m.size
    if x.shape != (d,):
        raise ValueError(f"x must have shape ({d},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    op = AliasingOperator(s, d)
    mm = op.m
    idx = np.arange(d)
    ata = (idx[:, None] % mm == idx[None, :] % mm).astype(np.float64) / s
    sgn = np.sign(x)
    xi = np.outer(sgn, sgn) * sigma_phi**2 / (2.0 * math.pi)
    diag = np.where(x != 0.0, sigma_phi**2 / 2.0, sigma_phi**2)
    np.fill_diagonal(xi, diag)
    cov = sigma_theta**2 * ata * np.outer(m, m) * xi
    return CovarianceResult(cov)


def markov_volume_bound(cov: CovarianceResult, v: np.ndarray, eta: float) -> float:
    """Markov bound on P(squared dipole confidence >= eta): min(1, v^T C v / eta)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("v must be a unit vector")
    return min(1.0, float(v @ cov.matrix @ v) / eta)


# ---------------------------------------------------------------------------
# Monte-Carlo estimators


def _batched_params(spec: ModelSpec, rng: Rng, count: int) -> dict:
    return {
        info.name: rng.gaussian((count,) + info.shape, info.std)
        for info in spec.layout()
    }


def mc_grad_covariance(
    spec: ModelSpec, x: np.ndarray, t: int, rng: Rng, chunk: int = 20000
) -> CovarianceResult:
    """Sample estimate of E[grad_x f grad_x f^T] over parameter draws.

    Exact reverse-mode gradients, fixed chunked accumulation order, and a
    per-entry standard error matrix attached to the result.
    """
    if t < 1000:
        raise ValueError("at least 1000 Monte-Carlo draws are required")
    x = np.asarray(x, dtype=np.float64)
    d = int(np.prod(spec.input_shape))
    acc = np.zeros((d, d))
    acc_sq = np.zeros((d, d))
    done = 0
    draw = 0
    while done < t:
        c = min(chunk, t - done)
        params = _batched_params(spec, rng.child(draw), c)
        pnodes = {k: Node(v) for k, v in params.items()}
        tiled = np.broadcast_to(x, (c,) + x.shape).copy()
        xn = Node(tiled)
        out = spec.apply(pnodes, xn)
        (g,) = ad.grad(out, [xn], create_graph=False)
        grads = g.value.reshape(c, d)
        acc += grads.T @ grads
        sq = grads * grads
        acc_sq += sq.T @ sq
        done += c
        draw += 1
    cov = acc / t
    second = acc_sq / t
    se = np.sqrt(np.maximum(second - cov * cov, 0.0) / t)
    result = CovarianceResult(cov)
    result.std_error = se
    return result


@dataclass(frozen=True)
class IsotropicSignalSpec:
    """Landscape-study data: x = epsilon*y*e_ell + w with isotropic noise."""

    ell: int
    epsilon: float
    sigma: float


def mc_param_hessian(
    spec: ModelSpec,
    data: IsotropicSignalSpec,
    t: int,
    rng: Rng,
    block: str = "phi",
    fd_step: float = 1e-3,
    chunk: int = 1000,
) -> np.ndarray:
    """Average quadratic-loss Hessian w.r.t. one parameter block.

    Estimated by central finite differences of the loss gradient (the loss
    is quadratic in each block, so the differences are exact), averaged over
    parameter draws and data draws.
    """
    if t < 1000:
        raise ValueError("at least 1000 Monte-Carlo draws are required")
    layout = {info.name: info for info in spec.layout()}
    if block not in layout:
        raise ValueError(f"unknown parameter block {block!r}")
    d = int(np.prod(spec.input_shape))
    p = int(np.prod(layout[block].shape))
    eye = np.eye(p).reshape((p,) + layout[block].shape)
    acc = np.zeros((p, p))
    done = 0
    draw = 0
    while done < t:
        c = min(chunk, t - done)
        crng = rng.child(draw)
        params = _batched_params(spec, crng, c)
        y = crng.signs(c)
        xs = crng.gaussian((c, d), data.sigma)
        xs[:, data.ell] += data.epsilon * y
        # (c, 2p, *block): +step probes then -step probes
        base = params[block][:, None, ...]
        probes = np.concatenate(
            [base + fd_step * eye[None], base - fd_step * eye[None]], axis=1
        )
        pnodes = {}
        for name, val in params.items():
            if name == block:
                pnodes[name] = Node(probes)
            else:
                pnodes[name] = Node(val[:, None, ...])
        xn = Node(np.broadcast_to(xs[:, None, :], (c, 2 * p, d)).copy())
        out = spec.apply(pnodes, xn)  # (c, 2p)
        residual = ad.sub(out, y[:, None])
        loss = ad.nsum(ad.square(residual))
        (g,) = ad.grad(loss, [pnodes[block]], create_graph=False)
        gval = g.value.reshape(c, 2 * p, p)
        hess = (gval[:, :p, :] - gval[:, p:, :]) / (2.0 * fd_step)
        acc += hess.sum(axis=0)
        done += c
        draw += 1
    return acc / t


def mc_mixed_gram(
    spec: ModelSpec, x: np.ndarray, t: int, rng: Rng, chunk: int = 5000
) -> CovarianceResult:
    """Sample estimate of E[(d^2 f / dp dx)^T (d^2 f / dp dx)].

    Rows of the mixed second derivative are obtained by nested reverse-mode
    differentiation: for every parameter coordinate, the input gradient of
    that coordinate's parameter gradient.
    """
    if t < 1000:
        raise ValueError("at least 1000 Monte-Carlo draws are required")
    x = np.asarray(x, dtype=np.float64)
    d = int(np.prod(spec.input_shape))
    layout = spec.layout()
    acc = np.zeros((d, d))
    done = 0
    draw = 0
    while done < t:
        c = min(chunk, t - done)
        params = _batched_params(spec, rng.child(draw), c)
        pnodes = {k: Node(v) for k, v in params.items()}
        xn = Node(np.broadcast_to(x, (c,) + x.shape).copy())
        out = spec.apply(pnodes, xn)
        order = [pnodes[b.name] for b in layout]
        pgrads = ad.grad(out, order, create_graph=True)
        for bi, info in enumerate(layout):
            block_dim = int(np.prod(info.shape))
            for j in range(block_dim):
                probe = np.zeros(info.shape).ravel()
                probe[j] = 1.0
                probe = probe.reshape(info.shape)
                contracted = ad.nsum(ad.mul(pgrads[bi], probe))
                (gx,) = ad.grad(contracted, [xn], create_graph=False)
                rows = gx.value.reshape(c, d)
                acc += rows.T @ rows
        done += c
        draw += 1
    return CovarianceResult(acc / t)


def hessian_spike_index(h_total: np.ndarray, m: np.ndarray) -> int:
    """Locate the signal spike: the diagonal excess over the noise profile.

    The noise part of the averaged Hessian is proportional to diag(m^2), so
    dividing the diagonal by m^2 flattens it everywhere except at the
    feature index.  Bins with m = 0 carry no curvature and are skipped.
    """
    m2 = np.asarray(m, dtype=np.float64) ** 2
    ratio = np.full(m2.shape, -np.inf)
    live = m2 > 1e-12 * m2.max()
    ratio[live] = np.diag(h_total)[live] / m2[live]
    return int(np.argmax(ratio))


def run_oracle_suite(suite: str = "all", seed: int = 0, fast: bool = False) -> dict:
    """Closed-form vs Monte-Carlo verification battery.

    Returns a report dict with one entry per check: quantity, closed-form
    value(s), MC estimate, tolerance, pass/fail, seed and draw count.  The
    ``fast`` flag shrinks the draw counts for smoke runs (tolerances widen
    accordingly); acceptance uses the full counts.
    """
    checks = []
    rng = Rng(seed)

    def record(quantity, closed, mc, tol, ok, t, note=""):
        checks.append(
            {
                "quantity": quantity,
                "closed_form": closed,
                "mc_estimate": mc,
                "tolerance": tol,
                "pass": bool(ok),
                "seed": seed,
                "T": t,
                "note": note,
            }
        )

    scale = 0.1 if fast else 1.0

    if suite in ("all", "thm1"):
        s, d, eps, sig = 4, 128, 1.0, 3.0
        n = max(int(200000 * scale), 20000)
        tol = 0.005 if not fast else 0.02
        m_hat = boxcar_spectrum(d, s)
        for i, ell in enumerate(range(0, d, d // 16)):
            closed = bayes_accuracy_after_pooling(m_hat, ell, eps, sig, s, d)
            est = mc_bayes_accuracy(m_hat, ell, eps, sig, s, d, n, rng.child(i))
            record(
                f"bayes-accuracy[ell={ell}]",
                closed,
                est,
                tol,
                abs(closed - est) <= tol,
                n,
            )

    if suite in ("all", "lemma1"):
        from .models import LinearPooling

        s, d, rtol = 4, 16, 0.05
        t = max(int(200000 * scale), 20000)
        m = boxcar_spectrum(d, s)
        live = np.flatnonzero(m > 1e-9)
        pick = rng.child(1000)
        for i in range(5):
            ell = int(live[pick.integers(0, live.size)])
            eps = float(pick.uniform(0.5, 2.0))
            sig = float(pick.uniform(0.5, 2.0))
            spec = LinearPooling(m=m, s=s, sigma_phi=1.0, sigma_theta=1.0)
            analytic = expected_hessian_phi(m, ell, eps, sig, 1.0)
            data = IsotropicSignalSpec(ell, eps, sig)
            est = mc_param_hessian(spec, data, t, rng.child(2000 + i), block="phi")
            ok, worst = compare_normalized(analytic.total, est, rtol)
            spike = hessian_spike_index(est, m)
            record(
                f"hessian-phi[ell={ell}]",
                {"trace_normalized": True, "worst_rel": worst},
                {"spike_index": spike},
                rtol,
                ok and spike == ell,
                t,
                f"eps={eps:.3f} sigma={sig:.3f}",
            )

    if suite in ("all", "covariances"):
        from .models import (
            LinearPooling,
            LogisticRegression,
            NonlinearPooling,
            SingleHiddenReLU,
        )

        s, d = 4, 16
        m = boxcar_spectrum(d, s)
        t1 = max(int(100000 * scale), 10000)
        t2 = max(int(200000 * scale), 20000)

        spec = LinearPooling(m=m, s=s)
        est = mc_grad_covariance(spec, np.zeros(d), t1, rng.child(1))
        closed = pooling_grad_covariance(m, 1.0, 1.0, s)
        ok, worst = compare_normalized(closed.matrix, est.matrix, 0.02)
        record("pooling-grad-covariance", {"worst_rel": worst}, None, 0.02, ok, t1)

        spec = LogisticRegression(d=32)
        est = mc_grad_covariance(spec, np.zeros(32), t1, rng.child(2))
        spread = float(est.eigenvalues[0] / est.eigenvalues[-1])
        record("logistic-isotropy-spread", 1.0, spread, 1.1, spread < 1.1, t1)

        dd = 32
        spec = SingleHiddenReLU(d=dd, width=dd)
        x_point = rng.child(3).gaussian(dd)
        est = mc_grad_covariance(spec, x_point, t2, rng.child(4), chunk=5000)
        mean_eig = float(np.mean(est.eigenvalues))
        rel = abs(mean_eig - dd / 2.0) / (dd / 2.0)
        spread = float(est.eigenvalues[0] / est.eigenvalues[-1])
        record(
            "single-hidden-scale",
            dd / 2.0,
            mean_eig,
            0.03,
            rel <= 0.03 and spread < 1.1,
            t2,
            f"isotropy spread {spread:.3f}",
        )

        spec = NonlinearPooling(m=m, s=s)
        x_point = rng.child(5).gaussian(d)
        est = mc_grad_covariance(spec, x_point, t2, rng.child(6))
        closed = nonlinear_pooling_covariance(x_point, m, 1.0, 1.0, s)
        ok, worst = compare_normalized(closed.matrix, est.matrix, 0.03)
        record("nonlinear-pooling-covariance", {"worst_rel": worst}, None, 0.03, ok, t2)

        spec = LinearPooling(m=m, s=s)
        est = mc_mixed_gram(spec, np.zeros(d), t1, rng.child(7))
        closed = pooling_mixed_gram(m, 1.0, 1.0, s)
        ok, worst = compare_normalized(closed.matrix, est.matrix, 0.02)
        record("pooling-mixed-gram", {"worst_rel": worst}, None, 0.02, ok, t1)

    if not checks:
        raise ValueError(f"unknown oracle suite {suite!r}")
    return {
        "suite": suite,
        "seed": seed,
        "fast": fast,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    }


def compare_normalized(
    analytic: np.ndarray, estimate: np.ndarray, rtol: float
) -> tuple[bool, float]:
    """Entrywise comparison after unit-trace normalization.

    Entries carrying signal (above 1e-9 of the peak) must match within rtol
    relatively; structural zeros must stay below rtol of the peak.  Returns
    (ok, worst relative deviation).
    """
    a = unit_trace(np.asarray(analytic, dtype=np.float64))
    b = unit_trace(np.asarray(estimate, dtype=np.float64))
    peak = np.abs(a).max()
    live = np.abs(a) > 1e-9 * peak
    rel_live = np.abs(a - b)[live] / np.abs(a)[live]
    rel_zero = np.abs(b)[~live] / peak
    worst = max(rel_live.max(initial=0.0), rel_zero.max(initial=0.0))
    return worst <= rtol, float(worst)
