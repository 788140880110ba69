"""Monte Carlo outcomes of Gaussian measurements of smeared fields.

Outcomes are drawn from a latent model.  A latent vector ``v`` is normal
with covariance ``W_s(g_i, g_j)``, and each outcome is
``alpha_i = v_i + eps_i`` with independent noise ``eps_i ~ N(0, sigma_i^2)``.
For a single field this is exactly the outcome density of a Gaussian
measurement in a mean-zero quasifree state.  For commuting fields it
reproduces the joint density's first and second moments.

For a Jordan-symmetrised pair of non-commuting fields the measurement order
is random per sample.  The later outcome also receives a back-action shift
``kappa * Delta(later, earlier)`` with ``kappa ~ N(0, 1 / 4 sigma_earlier^2)``
drawn independently.  This keeps ``E(alpha beta) = W_s(g_1, g_2)`` and adds
``Delta^2 / 8 sigma^2`` to each outcome's second moment.  That is the
disturbance a Gaussian measurement of one field causes in the other.
Moments beyond second order are not claimed to match.

Random streams are counter based.  Sample ``n`` belongs to block
``n // BLOCK``, and each block draws from its own Philox stream keyed by
``(seed, block)``.  A batch is therefore reproducible and independent of
how blocks are spread over threads.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algebra import GaussianState, OperatorPoly, wick_expectation
from .smearing import PairingTable

BLOCK = 1 << 16
PSD_REL_TOL = 1e-10
COMMUTE_TOL = 1e-12

COMMUTING = "commuting"
JORDAN = "jordan_symmetrized"


class SamplerError(ValueError):
    """Invalid plan, covariance or batch."""


@dataclass(frozen=True)
class MeasurementPlan:
    """Ordered ``(label, sigma)`` measurements and the composition convention."""

    entries: tuple[tuple[str, float], ...]
    convention: str = COMMUTING

    def __post_init__(self) -> None:
        entries = tuple((str(lab), float(s)) for lab, s in self.entries)
        if not entries:
            raise SamplerError("a plan needs at least one measurement")
        for lab, s in entries:
            if not (s > 0 and math.isfinite(s)):
                raise SamplerError(f"sigma for {lab!r} must be positive, got {s!r}")
        if self.convention not in (COMMUTING, JORDAN):
            raise SamplerError(f"unknown convention {self.convention!r}")
        if self.convention == JORDAN and len(entries) != 2:
            raise SamplerError("the Jordan-symmetrised convention is defined for pairs")
        object.__setattr__(self, "entries", entries)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.entries)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s for _, s in self.entries])

    def validate(self, table: PairingTable) -> None:
        if table.wsym is None:
            raise SamplerError("sampling needs a massive table with vacuum covariances")
        labs = self.labels
        for i in range(len(labs)):
            for j in range(i + 1, len(labs)):
                if abs(table.d(labs[i], labs[j])) > COMMUTE_TOL and self.convention != JORDAN:
                    raise SamplerError(
                        f"Delta({labs[i]}, {labs[j]}) != 0: use the {JORDAN!r} convention"
                    )


@dataclass(frozen=True, eq=False)
class OutcomeBatch:
    plan: MeasurementPlan
    seed: int
    alphas: np.ndarray
    latent: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.alphas.shape[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.alphas.shape[1]
        w.writerow(["sample_index"] + [f"alpha_{i + 1}" for i in range(k)])
        for i, row in enumerate(self.alphas):
            w.writerow([i] + [repr(float(a)) for a in row])
        return buf.getvalue()

    def save_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def read_csv(text: str) -> np.ndarray:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "sample_index":
            raise SamplerError("missing outcome CSV header")
        return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


@dataclass(frozen=True)
class Estimates:
    n: int
    means: np.ndarray
    second_moments: np.ndarray
    covariances: np.ndarray
    mean_se: np.ndarray
    second_moment_se: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "means": self.means.tolist(),
            "mean_se": self.mean_se.tolist(),
            "second_moments": self.second_moments.tolist(),
            "second_moment_se": self.second_moment_se.tolist(),
            "covariances": self.covariances.tolist(),
        }

    def to_text(self) -> str:
        lines = [f"n = {self.n}"]
        k = len(self.means)
        for i in range(k):
            lines.append(f"mean {i + 1} = {float(self.means[i])!r} +- {float(self.mean_se[i])!r}")
        for i in range(k):
            for j in range(i, k):
                lines.append(
                    f"moment {i + 1} {j + 1} = {float(self.second_moments[i, j])!r}"
                    f" +- {float(self.second_moment_se[i, j])!r}"
                )
        return "\n".join(lines)


def covariance_factor(cov: np.ndarray, rel_tol: float = PSD_REL_TOL) -> np.ndarray:
    """Matrix ``L`` with ``L L^T = cov``; Cholesky, falling back to ``eigh`` when nearly singular."""
    cov = np.asarray(cov, dtype=float)
    scale = max(np.abs(cov).max(initial=0.0), 1e-300)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -rel_tol * scale:
        raise SamplerError(
            f"latent covariance is not positive semidefinite: min eigenvalue {vals.min():.3e}, "
            f"tolerance {rel_tol * scale:.3e}, eigenvalues {np.array2string(vals, precision=4)}"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _draw_block(
    seed: int,
    block: int,
    L: np.ndarray,
    sigmas: np.ndarray,
    jordan: tuple[float, float, float] | None,
) -> tuple[np.ndarray, np.ndarray]:
    k = len(sigmas)
    rng = _block_rng(seed, block)
    v = rng.standard_normal((BLOCK, k)) @ L.T
    alpha = v + rng.standard_normal((BLOCK, k)) * sigmas
    if jordan is not None:
        d12, s1, s2 = jordan
        first_is_1 = rng.random(BLOCK) < 0.5
        kappa = rng.standard_normal(BLOCK)
        # the later field is shifted by kappa * Delta(later, earlier)
        alpha[:, 1] += np.where(first_is_1, kappa / (2.0 * s1) * (-d12), 0.0)
        alpha[:, 0] += np.where(first_is_1, 0.0, kappa / (2.0 * s2) * d12)
    return alpha, v


def sample_measurements(
    plan: MeasurementPlan,
    state: GaussianState,
    n: int,
    seed: int,
    keep_latent: bool = False,
    threads: int | None = None,
) -> OutcomeBatch:
    if n < 1:
        raise SamplerError("need at least one sample")
    table = state.table
    plan.validate(table)
    labs = plan.labels
    cov = np.array([[table.w(a, b) for b in labs] for a in labs])
    L = covariance_factor(cov)
    sig = plan.sigmas
    jordan = None
    if plan.convention == JORDAN:
        jordan = (table.d(labs[0], labs[1]), sig[0], sig[1])
    nblocks = -(-n // BLOCK)
    threads = threads or 1

    def work(b: int):
        return _draw_block(seed, b, L, sig, jordan)

    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(nblocks)))
    else:
        parts = [work(b) for b in range(nblocks)]
    alphas = np.concatenate([p[0] for p in parts])[:n]
    latent = np.concatenate([p[1] for p in parts])[:n] if keep_latent else None
    return OutcomeBatch(plan, seed, alphas, latent)


def estimate_moments(batch: OutcomeBatch) -> Estimates:
    a = batch.alphas
    n = a.shape[0]
    if n < 2:
        raise SamplerError("moment estimates need at least two samples")
    means = a.mean(axis=0)
    mean_se = a.std(axis=0, ddof=1) / math.sqrt(n)
    k = a.shape[1]
    m2 = np.empty((k, k))
    m2se = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            prod = a[:, i] * a[:, j]
            m2[i, j] = m2[j, i] = prod.mean()
            m2se[i, j] = m2se[j, i] = prod.std(ddof=1) / math.sqrt(n)
    cov = np.cov(a, rowvar=False, ddof=1).reshape(k, k)
    return Estimates(n, means, m2, cov, mean_se, m2se)


def recover_correlator(
    plan: MeasurementPlan,
    state: GaussianState,
    n: int,
    seed: int,
    return_se: bool = False,
):
    """``E(alpha beta) + (i/2) Delta(g_1, g_2)``, an estimate of ``tr(rho phi(g_1) phi(g_2))``."""
    if len(plan.entries) != 2 or plan.convention != JORDAN:
        raise SamplerError("correlator recovery needs a Jordan-symmetrised pair plan")
    est = estimate_moments(sample_measurements(plan, state, n, seed))
    g1, g2 = plan.labels
    value = complex(est.second_moments[0, 1], 0.5 * state.table.d(g1, g2))
    if return_se:
        return value, float(est.second_moment_se[0, 1])
    return value


def additivity_check(plan: MeasurementPlan, state: GaussianState, n: int, seed: int) -> float:
    """Discrepancy, in standard errors, between ``mean(alpha + beta)`` and ``<phi(g_1) + phi(g_2)>``."""
    if len(plan.entries) != 2:
        raise SamplerError("additivity check needs a pair plan")
    batch = sample_measurements(plan, state, n, seed)
    s = batch.alphas.sum(axis=1)
    g1, g2 = plan.labels
    target = wick_expectation(OperatorPoly.field(g1) + OperatorPoly.field(g2), state).real
    se = s.std(ddof=1) / math.sqrt(len(s))
    return float(abs(s.mean() - target) / se) if se > 0 else float(abs(s.mean() - target))


def outcome_second_moment(plan: MeasurementPlan, table: PairingTable) -> np.ndarray:
    """Closed-form ``E(alpha_i alpha_j)`` of the sampling model."""
    labs = plan.labels
    m = np.array([[table.w(a, b) for b in labs] for a in labs]) + np.diag(plan.sigmas ** 2)
    if plan.convention == JORDAN:
        d = table.d(labs[0], labs[1])
        m[0, 0] += d * d / (8.0 * plan.sigmas[1] ** 2)
        m[1, 1] += d * d / (8.0 * plan.sigmas[0] ** 2)
    return m
