"""Normal-distribution kernels and seeded random streams.

Everything here is vectorised over numpy arrays; scalar inputs give scalar
outputs.  The heavier model code calls these in its inner loops, so they avoid
Python-level iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# below this, log Phi is evaluated through the Mills-ratio continued fraction
TAIL_SWITCH = -8.0
_CF_DEPTH = 60
# one-sided truncation beyond this many sd uses exponential-proposal rejection
_TAIL_REJECTION_SD = 3.0
_MAX_REJECTION_ROUNDS = 1000


class SamplingError(RuntimeError):
    """Raised when a rejection sampler exhausts its retry budget."""


def _check_finite(x, name="x"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def _ret(out, like):
    return float(out) if np.ndim(like) == 0 else out


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def std_normal_cdf(x):
    """Standard normal CDF; raises ``ValueError`` on non-finite input."""
    x = _check_finite(x)
    return _ret(special.ndtr(x), x)


def _log_mills_ratio(z):
    """log of (1 - Phi(z)) / phi(z) for z >= 8, by backward continued fraction."""
    # R(z) = 1 / (z + 1 / (z + 2 / (z + 3 / (z + ...))))
    acc = np.zeros_like(z)
    for k in range(_CF_DEPTH, 0, -1):
        acc = k / (z + acc)
    return -np.log(z + acc)


def log_std_normal_cdf(x):
    """log Phi(x) without cancellation in either tail."""
    x = _check_finite(x)
    xa = np.atleast_1d(x)
    out = np.empty_like(xa)
    lo = xa <= TAIL_SWITCH
    pos = xa > 0
    mid = ~lo & ~pos
    if lo.any():
        z = -xa[lo]
        out[lo] = -0.5 * z * z - _LOG_SQRT_2PI + _log_mills_ratio(z)
    if mid.any():
        out[mid] = np.log(special.ndtr(xa[mid]))
    if pos.any():
        out[pos] = np.log1p(-special.ndtr(-xa[pos]))
    return _ret(out.reshape(x.shape) if x.ndim else out[0], x)


def inv_mills(x):
    """phi(x) / Phi(x), stable for very negative x (where it tends to -x)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI - special.log_ndtr(x))


def std_normal_quantile(p):
    """Inverse of the standard normal CDF on the open unit interval."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise ValueError("p must lie strictly inside (0, 1)")
    return _ret(special.ndtri(p), p)


@dataclass
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Streams with the same key produce identical draws; different ``stream_id``
    values give independent streams (numpy ``SeedSequence`` spawn keys).
    """

    seed: int
    stream_id: int | tuple[int, ...] = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(int(k) for k in key))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "RngStream":
        base = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return RngStream(self.seed, base + tuple(key))

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def exponential(self, size=None):
        return self.generator.standard_exponential(size)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def _std_tail_exponential(gen, a, b):
    """Standard normal truncated to [a, b] with 3 <= a, by exponential proposals.

    Proposal rate follows Robert (1995); a finite ``b`` truncates the proposal.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    width = b - a
    out = np.empty_like(a)
    todo = np.arange(a.size)
    for _ in range(_MAX_REJECTION_ROUNDS):
        if todo.size == 0:
            return out
        r = rate[todo]
        u = gen.random(todo.size)
        # exponential on [0, width) by inversion; width = inf reduces to -log(1-u)/r
        cap = -np.expm1(-r * width[todo])
        x = a[todo] - np.log1p(-u * cap) / r
        accept = gen.random(todo.size) <= np.exp(-0.5 * (x - r) ** 2)
        out[todo[accept]] = x[accept]
        todo = todo[~accept]
    raise SamplingError(f"tail truncated-normal sampler did not finish for {todo.size} draws")


def _std_truncated(gen, a, b):
    """Standard normal draws truncated to [a, b], elementwise."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    # reflect so that the bulk of the mass is at or above a, i.e. a is the near bound
    flip = a > -b
    a_r = np.where(flip, a, -b)
    b_r = np.where(flip, b, -a)
    out = np.empty_like(a_r)
    tail = a_r >= _TAIL_REJECTION_SD
    if tail.any():
        out[tail] = _std_tail_exponential(gen, a_r[tail], b_r[tail])
    body = ~tail
    if body.any():
        # inverse CDF on the lower-tail side, where Phi keeps full relative precision
        lo = special.ndtr(-b_r[body])
        hi = special.ndtr(-a_r[body])
        u = lo + gen.random(int(body.sum())) * (hi - lo)
        u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        x = -special.ndtri(u)
        out[body] = np.clip(x, a_r[body], b_r[body])
    return np.where(flip, out, -out)


def sample_truncated_normal(rng, mean, sd, lower, upper, size=None):
    """Draw from Normal(mean, sd^2) restricted to (lower, upper).

    All arguments broadcast.  Mild truncation uses inverse-CDF sampling; a
    one-sided truncation more than 3 sd into a tail uses exponential-proposal
    rejection.
    """
    gen = _as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(sd <= 0) or np.any(~np.isfinite(sd)):
        raise ValueError("sd must be positive and finite")
    if np.any(lower >= upper):
        raise ValueError("lower must be strictly below upper")
    shape = np.broadcast_shapes(mean.shape, sd.shape, lower.shape, upper.shape)
    if size is not None:
        shape = np.broadcast_shapes(shape, (size,) if np.isscalar(size) else tuple(size))
    m = np.broadcast_to(mean, shape).ravel()
    s = np.broadcast_to(sd, shape).ravel()
    a = (np.broadcast_to(lower, shape).ravel() - m) / s
    b = (np.broadcast_to(upper, shape).ravel() - m) / s
    z = _std_truncated(gen, a, b)
    x = (m + s * z).reshape(shape)
    if x.ndim == 0:
        return float(x)
    return x
