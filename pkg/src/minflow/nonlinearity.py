"""Convex energy densities beta(x, .) and flux costs F(x, .) with conjugates.

Every catalog entry carries closed-form expressions for the function, its
Legendre conjugate, the proximal maps of both, and subgradient intervals.
All evaluators are vectorised over the value argument and over positions.

Conventions
-----------
* ``quadratic``: beta(x, r) = a(x) r^2 / 2.
* ``pme``: beta(x, r) = a(x) |r|^(m+1) / (m+1), so that eta = a rho^m.
* ``stefan``: beta(r) = ((r - A1)^+)^2/2 + ((-r - A2)^+)^2/2 with widths
  A1 = a1 c(x), A2 = a2 c(x); the conjugate is s^2/2 + A1 s (s >= 0) and
  s^2/2 - A2 s (s < 0).
* ``heleshaw``: beta is the indicator of [-1, 1] and beta* = |.|; the
  spatial weight a(x) only rescales eta inside Sign and is otherwise inert.
* ``sampled``: piecewise-linear convex beta on user knots, +inf outside.
* Cost ``quadratic{k}``: F(x, A) = |A|^2 / (2 k(x)), hence dF* = k A.
* Cost ``ppower{p, k}``: F* = k |A|^p / p and F = |A|^p' / (p' k^(p'-1)).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidSpec, ValidationFailure

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

PROX_TOL = 1e-12
CATALOG_VERSION = "1"

BETA_KINDS = ("quadratic", "pme", "stefan", "heleshaw", "sampled")
COST_KINDS = ("quadratic", "ppower")


def _coef(coef, pos):
    if callable(coef):
        val = np.asarray(coef(np.asarray(pos, dtype=float)), dtype=float)
    else:
        val = np.asarray(float(coef))
    if np.any(val <= 0):
        raise InvalidSpec("spatial coefficients must be positive")
    return val


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class SubgradInterval:
    """Closed interval [lo, hi] of a maximal monotone graph (may be unbounded)."""

    lo: object
    hi: object

    def contains(self, v, tol=0.0):
        return (np.asarray(v) >= np.asarray(self.lo) - tol) & (np.asarray(v) <= np.asarray(self.hi) + tol)

    def distance(self, v):
        v = np.asarray(v, dtype=float)
        return np.maximum(np.maximum(np.asarray(self.lo) - v, v - np.asarray(self.hi)), 0.0)


@dataclass(frozen=True)
class NonlinearityEntry:
    """Internal-energy density beta(x, .) and its conjugate."""

    kind: str
    coef: Coefficient = 1.0
    m: float = 1.0
    a1: float = 0.0
    a2: float = 0.0
    knots: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in BETA_KINDS:
            raise InvalidSpec(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "pme" and not self.m > 1:
            raise InvalidSpec("pme exponent m must exceed 1")
        if self.kind == "stefan" and (self.a1 < 0 or self.a2 < 0):
            raise InvalidSpec("stefan latent widths must be non-negative")
        if self.kind == "sampled":
            r = np.asarray(self.knots, dtype=float)
            b = np.asarray(self.values, dtype=float)
            if r.ndim != 1 or r.shape != b.shape or r.size < 2:
                raise InvalidSpec("sampled beta needs matching 1-D knots/values")
            if np.any(np.diff(r) <= 0):
                raise InvalidSpec("sampled knots must be strictly increasing")
            if not (r[0] <= 0.0 <= r[-1]):
                raise InvalidSpec("sampled knots must bracket 0")
            if abs(np.interp(0.0, r, b)) > 1e-14:
                raise InvalidSpec("sampled beta must vanish at 0")
            slopes = np.diff(b) / np.diff(r)
            if np.any(np.diff(slopes) < -1e-12):
                raise InvalidSpec("sampled beta must be convex")
            object.__setattr__(self, "knots", r)
            object.__setattr__(self, "values", b)

    @property
    def slopes(self):
        return np.diff(self.values) / np.diff(self.knots)

    def coefficient(self, pos):
        return _coef(self.coef, pos)

    @property
    def differentiable_conjugate(self):
        """Whether r -> beta*(x, r) is differentiable everywhere."""
        return self.kind in ("quadratic", "pme")


@dataclass(frozen=True)
class CostEntry:
    """Flux cost F(x, .) on R^N and its conjugate F*."""

    kind: str
    p: float = 2.0
    coef: Coefficient = 1.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise InvalidSpec(f"unknown cost kind {self.kind!r}")
        if self.kind == "quadratic":
            object.__setattr__(self, "p", 2.0)
        if not 1.0 < self.p < np.inf:
            raise InvalidSpec("cost exponent p must lie in (1, inf)")

    @property
    def q(self):
        """Flux growth exponent p' = p / (p - 1)."""
        return self.p / (self.p - 1.0)

    def coefficient(self, pos):
        return _coef(self.coef, pos)


# -- catalog constructors ---------------------------------------------------

def quadratic(a: Coefficient = 1.0) -> NonlinearityEntry:
    return NonlinearityEntry("quadratic", coef=a)


def pme(m: float, a: Coefficient = 1.0) -> NonlinearityEntry:
    return NonlinearityEntry("pme", coef=a, m=float(m))


def stefan(a1: float, a2: float, coef: Coefficient = 1.0) -> NonlinearityEntry:
    return NonlinearityEntry("stefan", coef=coef, a1=float(a1), a2=float(a2))


def heleshaw(a: Coefficient = 1.0) -> NonlinearityEntry:
    return NonlinearityEntry("heleshaw", coef=a)


def sampled(knots, values, coef: Coefficient = 1.0) -> NonlinearityEntry:
    return NonlinearityEntry("sampled", coef=coef, knots=knots, values=values)


def quadratic_cost(k: Coefficient = 1.0) -> CostEntry:
    return CostEntry("quadratic", 2.0, k)


def ppower_cost(p: float, k: Coefficient = 1.0) -> CostEntry:
    return CostEntry("ppower", float(p), k)


# -- scalar root finding ----------------------------------------------------

def power_root(a, c, e):
    """Solve u + c u^e = a for u >= 0, given a >= 0, c > 0, e > 0.

    Closed forms for e in {1, 2, 1/2}; otherwise bisection on [0, a] to
    absolute tolerance ``PROX_TOL``.
    """
    a, c = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(c, dtype=float))
    if e == 1.0:
        return a / (1.0 + c)
    if e == 2.0:
        return 2.0 * a / (1.0 + np.sqrt(1.0 + 4.0 * c * a))
    if e == 0.5:
        root = 2.0 * a / (c + np.sqrt(c * c + 4.0 * a))
        return root * root
    lo = np.zeros_like(a)
    hi = a.copy()
    amax = float(np.max(a)) if a.size else 0.0
    if amax == 0.0:
        return lo
    n = int(np.ceil(np.log2(max(amax, PROX_TOL) / PROX_TOL))) + 2
    for _ in range(min(n, 200)):
        mid = 0.5 * (lo + hi)
        over = mid + c * mid**e > a
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
    return 0.5 * (lo + hi)


# -- beta: coefficient-level kernels (c already evaluated) ------------------

def _beta(entry, c, r):
    r = np.asarray(r, dtype=float)
    k = entry.kind
    if k == "quadratic":
        return 0.5 * c * r * r
    if k == "pme":
        m = entry.m
        return c * np.abs(r) ** (m + 1) / (m + 1)
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        return 0.5 * np.maximum(r - A1, 0.0) ** 2 + 0.5 * np.maximum(-r - A2, 0.0) ** 2
    if k == "heleshaw":
        return np.where(np.abs(r) <= 1.0, 0.0, np.inf) + 0.0 * c
    inside = (r >= entry.knots[0]) & (r <= entry.knots[-1])
    val = np.interp(r, entry.knots, entry.values)
    return np.where(inside, c * val, np.inf)


def _beta_conj(entry, c, s):
    s = np.asarray(s, dtype=float)
    k = entry.kind
    if k == "quadratic":
        return 0.5 * s * s / c
    if k == "pme":
        m = entry.m
        return c * (m / (m + 1)) * np.abs(s / c) ** ((m + 1) / m)
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        return np.where(s >= 0, 0.5 * s * s + A1 * s, 0.5 * s * s - A2 * s)
    if k == "heleshaw":
        return np.abs(s) + 0.0 * c
    # sup over a piecewise-linear function is attained at a knot
    sc, cb = np.broadcast_arrays(s / c, np.asarray(c, dtype=float))
    return cb * (sc[..., None] * entry.knots - entry.values).max(axis=-1)


def _beta_conj_subgrad(entry, c, s):
    s = np.asarray(s, dtype=float)
    k = entry.kind
    if k == "quadratic":
        v = s / c
        return v, v
    if k == "pme":
        v = np.sign(s) * np.abs(s / c) ** (1.0 / entry.m)
        return v, v
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        lo = np.where(s > 0, s + A1, np.where(s < 0, s - A2, -A2))
        hi = np.where(s > 0, s + A1, np.where(s < 0, s - A2, A1))
        return lo + 0.0 * s, hi + 0.0 * s
    if k == "heleshaw":
        lo = np.where(s > 0, 1.0, -1.0)
        hi = np.where(s < 0, -1.0, 1.0)
        return lo + 0.0 * c, hi + 0.0 * c
    sc = np.asarray(s / c, dtype=float)
    r, b = entry.knots, entry.values
    score = sc[..., None] * r - b
    best = score.max(axis=-1, keepdims=True)
    tie = score >= best - 1e-12 * (1.0 + np.abs(sc[..., None]) * np.abs(r).max())
    lo = np.where(tie, r, np.inf).min(axis=-1)
    hi = np.where(tie, r, -np.inf).max(axis=-1)
    return lo, hi


def _beta_subgrad(entry, c, r):
    """Interval of d beta(x, r); (+inf, -inf) marks r outside dom beta."""
    r = np.asarray(r, dtype=float)
    k = entry.kind
    if k == "quadratic":
        v = c * r
        return v, v
    if k == "pme":
        v = c * np.abs(r) ** (entry.m - 1) * r
        return v, v
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        v = np.maximum(r - A1, 0.0) - np.maximum(-r - A2, 0.0)
        return v, v
    if k == "heleshaw":
        inside = np.abs(r) < 1.0
        lo = np.where(inside, 0.0, np.where(r == 1.0, 0.0, np.where(r == -1.0, -np.inf, np.inf)))
        hi = np.where(inside, 0.0, np.where(r == 1.0, np.inf, np.where(r == -1.0, 0.0, -np.inf)))
        return lo + 0.0 * c, hi + 0.0 * c
    knots, slopes = entry.knots, entry.slopes
    left = np.concatenate(([-np.inf], slopes))
    right = np.concatenate((slopes, [np.inf]))
    rb, cb = np.broadcast_arrays(r, np.asarray(c, dtype=float))
    j = np.clip(np.searchsorted(knots, rb, side="right") - 1, 0, len(slopes) - 1)
    lo = slopes[j].copy()
    hi = slopes[j].copy()
    on_knot = np.isclose(rb[..., None], knots, rtol=0, atol=1e-14)
    has = on_knot.any(axis=-1)
    kidx = on_knot.argmax(axis=-1)
    lo = np.where(has, left[kidx], lo)
    hi = np.where(has, right[kidx], hi)
    out = (rb < knots[0] - 1e-14) | (rb > knots[-1] + 1e-14)
    lo = np.where(out, np.inf, lo)
    hi = np.where(out, -np.inf, hi)
    return cb * lo, cb * hi


def _beta_kinks(entry, r):
    """Cells whose value sits on a corner of beta (multivalued d beta)."""
    r = np.asarray(r, dtype=float)
    if entry.kind == "heleshaw":
        return np.abs(r) == 1.0
    if entry.kind == "sampled":
        return np.isin(r, entry.knots)
    return np.zeros(r.shape, dtype=bool)


def _beta_prox(entry, c, lam, s):
    s = np.asarray(s, dtype=float)
    k = entry.kind
    if k == "quadratic":
        return s / (1.0 + lam * c)
    if k == "pme":
        return np.sign(s) * power_root(np.abs(s), lam * c, entry.m)
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        return np.where(s > A1, (s + lam * A1) / (1.0 + lam),
                        np.where(s < -A2, (s - lam * A2) / (1.0 + lam), s))
    if k == "heleshaw":
        return np.clip(s, -1.0, 1.0) + 0.0 * c * lam
    # exact prox of a piecewise-linear convex function (scaled by c)
    knots = entry.knots
    sl = entry.slopes
    sb, lb, cb = np.broadcast_arrays(s, np.asarray(lam, dtype=float), np.asarray(c, dtype=float))
    lc = (lb * cb)[..., None]
    seg = sb[..., None] - lc * sl
    seg_ok = (seg >= knots[:-1]) & (seg <= knots[1:])
    g = (sb[..., None] - knots) / lc
    left = np.concatenate(([-np.inf], sl))
    right = np.concatenate((sl, [np.inf]))
    knot_ok = (g >= left) & (g <= right)
    res = np.where(knot_ok.any(axis=-1), knots[knot_ok.argmax(axis=-1)], np.nan)
    res = np.where(seg_ok.any(axis=-1), np.take_along_axis(seg, seg_ok.argmax(axis=-1)[..., None], -1)[..., 0], res)
    # a knot answer wins ties so kinks are hit exactly
    res = np.where(knot_ok.any(axis=-1), knots[knot_ok.argmax(axis=-1)], res)
    return res


def _beta_conj_prox(entry, c, lam, s):
    s = np.asarray(s, dtype=float)
    k = entry.kind
    if k == "quadratic":
        return c * s / (c + lam)
    if k == "stefan":
        A1, A2 = entry.a1 * c, entry.a2 * c
        return np.where(s > lam * A1, (s - lam * A1) / (1.0 + lam),
                        np.where(s < -lam * A2, (s + lam * A2) / (1.0 + lam), 0.0))
    if k == "heleshaw":
        return np.sign(s) * np.maximum(np.abs(s) - lam, 0.0) + 0.0 * c
    # Moreau: prox_{lam f*}(s) = s - lam prox_{f/lam}(s/lam)
    return s - lam * _beta_prox(entry, c, 1.0 / lam, s / lam)


# -- cost: coefficient-level kernels on radial magnitudes -------------------

def _cost_mag(entry, k, u):
    if entry.kind == "quadratic":
        return 0.5 * u * u / k
    q = entry.q
    return u**q / (q * k ** (q - 1.0))


def _cost_conj_mag(entry, k, u):
    return k * u**entry.p / entry.p


def _cost_conj_dmag(entry, k, u):
    """Radial derivative of F*: the magnitude of dF*(A)."""
    if entry.kind == "quadratic":
        return k * u
    return k * u ** (entry.p - 1.0)


def _cost_prox_mag(entry, k, lam, u):
    if entry.kind == "quadratic":
        return k * u / (k + lam)
    q = entry.q
    return power_root(u, lam * k ** (1.0 - q), q - 1.0)


def _cost_scalar(fn, entry, k, *args):
    """Apply a radial kernel to signed scalars (face-normal components)."""
    a = np.asarray(args[-1], dtype=float)
    return np.sign(a) * fn(entry, k, *args[:-1], np.abs(a))


# -- public operations ------------------------------------------------------

def beta_eval(entry: NonlinearityEntry, pos, r):
    """beta(pos, r); +inf outside the effective domain."""
    return _out(_beta(entry, entry.coefficient(pos), r))


def beta_conj_eval(entry: NonlinearityEntry, pos, s):
    """beta*(pos, s); finite on all of R for catalog entries."""
    return _out(_beta_conj(entry, entry.coefficient(pos), s))


def beta_conj_subgrad(entry: NonlinearityEntry, pos, s) -> SubgradInterval:
    lo, hi = _beta_conj_subgrad(entry, entry.coefficient(pos), s)
    return SubgradInterval(_out(lo), _out(hi))


def beta_subgrad(entry: NonlinearityEntry, pos, r) -> SubgradInterval:
    lo, hi = _beta_subgrad(entry, entry.coefficient(pos), r)
    return SubgradInterval(_out(lo), _out(hi))


def beta_prox(entry: NonlinearityEntry, pos, lam, s):
    """argmin_r (r - s)^2 / 2 + lam beta(pos, r)."""
    return _out(_beta_prox(entry, entry.coefficient(pos), lam, s))


def beta_conj_prox(entry: NonlinearityEntry, pos, lam, s):
    """argmin_r (r - s)^2 / 2 + lam beta*(pos, r)."""
    return _out(_beta_conj_prox(entry, entry.coefficient(pos), lam, s))


def _radial(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A[None]
    return A, np.linalg.norm(A, axis=-1)


def cost_eval(entry: CostEntry, pos, A):
    A, u = _radial(A)
    return _out(_cost_mag(entry, entry.coefficient(pos), u))


def cost_conj_eval(entry: CostEntry, pos, A):
    A, u = _radial(A)
    return _out(_cost_conj_mag(entry, entry.coefficient(pos), u))


def cost_conj_grad(entry: CostEntry, pos, A):
    """dF*(pos, A): k A for quadratic, k |A|^(p-2) A for ppower."""
    A, u = _radial(A)
    k = entry.coefficient(pos)
    d = _cost_conj_dmag(entry, k, u)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(u > 0, d / np.where(u > 0, u, 1.0), 0.0)
    return np.asarray(scale)[..., None] * A


def cost_prox(entry: CostEntry, pos, lam, A):
    """argmin_B |B - A|^2 / 2 + lam F(pos, B); collinear with A."""
    A, u = _radial(A)
    k = entry.coefficient(pos)
    v = _cost_prox_mag(entry, k, lam, u)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(u > 0, v / np.where(u > 0, u, 1.0), 0.0)
    return np.asarray(scale)[..., None] * A


def cost_conj_prox(entry: CostEntry, pos, lam, A):
    A = np.asarray(A, dtype=float)
    return A - lam * cost_prox(entry, pos, 1.0 / lam, A / lam)


# -- assumption validator ---------------------------------------------------

@dataclass
class AssumptionReport:
    p: float
    C1: float
    C2: float
    C3: float
    M: float
    convexity_violations: int
    smooth_conjugate: bool
    passed: bool = True

    def lines(self):
        return [
            f"flux growth     C1={self.C1:.6g}  C2={self.C2:.6g}",
            f"convexity       violations={self.convexity_violations}",
            f"energy growth   C3={self.C3:.6g}  M={self.M:.6g}",
            f"smooth beta*    {self.smooth_conjugate}",
        ]


def _default_positions(n=7):
    t = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def validate_assumptions(beta: NonlinearityEntry, cost: CostEntry, p: float,
                         positions=None, seed=0) -> AssumptionReport:
    """Sample the growth and convexity hypotheses on (beta, F, p).

    Raises
    ------
    ValidationFailure
        With the label of the violated hypothesis and a witness point.
    """
    if not 1.0 < p < np.inf:
        raise ValidationFailure("p", "exponent must lie in (1, inf)", p)
    q = p / (p - 1.0)
    rng = np.random.default_rng(seed)
    pos = _default_positions() if positions is None else np.asarray(positions, dtype=float)
    kpos = cost.coefficient(pos) * np.ones(len(pos))
    cpos = beta.coefficient(pos) * np.ones(len(pos))

    # flux growth: F(x, xi) / |xi|^p' over twelve decades
    mags = np.logspace(-6, 6, 121)
    ratio = _cost_mag(cost, kpos[:, None], mags[None, :]) / mags[None, :] ** q
    C1, C2 = float(ratio.min()), float(ratio.max())
    slope_lo = np.log(ratio[:, 1] / ratio[:, 0]) / np.log(mags[1] / mags[0])
    slope_hi = np.log(ratio[:, -1] / ratio[:, -2]) / np.log(mags[-1] / mags[-2])
    bad = np.maximum(np.abs(slope_lo), np.abs(slope_hi))
    if not C1 > 0 or np.max(bad) > 1e-6:
        i = int(np.argmax(bad))
        raise ValidationFailure("flux-growth", f"F does not grow like |xi|^{q:g}", tuple(pos[i]))

    # convexity, beta(0) = 0
    violations = 0
    witness = None
    for _ in range(4):
        a = rng.uniform(-5, 5, 2000)
        b = rng.uniform(-5, 5, 2000)
        ci = rng.choice(cpos, 2000)
        fa, fb = _beta(beta, ci, a), _beta(beta, ci, b)
        ok = np.isfinite(fa) & np.isfinite(fb)
        mid = _beta(beta, ci, 0.5 * (a + b))
        tol = 1e-12 * (1 + np.abs(fa) + np.abs(fb))
        viol = ok & (mid > 0.5 * (fa + fb) + tol)
        if viol.any() and witness is None:
            witness = ("beta", float(a[viol][0]), float(b[viol][0]))
        violations += int(viol.sum())
        A = rng.normal(size=(2000, 2)) * 3
        B = rng.normal(size=(2000, 2)) * 3
        ki = rng.choice(kpos, 2000)
        FA = _cost_mag(cost, ki, np.linalg.norm(A, axis=1))
        FB = _cost_mag(cost, ki, np.linalg.norm(B, axis=1))
        FM = _cost_mag(cost, ki, np.linalg.norm(0.5 * (A + B), axis=1))
        viol = FM > 0.5 * (FA + FB) + 1e-12 * (1 + FA + FB)
        if viol.any() and witness is None:
            witness = ("F", A[viol][0].tolist(), B[viol][0].tolist())
        violations += int(viol.sum())
    if violations:
        raise ValidationFailure("convexity", f"{violations} midpoint convexity violations", witness)
    if np.any(np.abs(_beta(beta, cpos, 0.0)) > 0):
        raise ValidationFailure("zero-at-origin", "beta(x, 0) != 0", 0.0)

    # energy growth: C3 (|r| - M)^+p' <= beta(r)
    grid_r = np.concatenate([-np.logspace(-6, 6, 241)[::-1], np.logspace(-6, 6, 241)])
    bvals = _beta(beta, cpos[:, None], grid_r[None, :])
    zero = np.abs(grid_r)[None, :] * (bvals <= 0)
    M = max(1.0, float(zero.max()))
    rr = M + np.logspace(-3, 6, 181)
    ratios = []
    for sgn in (1.0, -1.0):
        bv = _beta(beta, cpos[:, None], sgn * rr[None, :])
        ratios.append(bv / (rr - M)[None, :] ** q)
    ratios = np.concatenate(ratios, axis=0)
    C3 = float(ratios.min())
    if not C3 > 0:
        raise ValidationFailure("energy-growth", "beta vanishes beyond M", M)
    finite_tail = np.isfinite(ratios[:, -1])
    with np.errstate(invalid="ignore"):
        tail = ratios[:, -1] / ratios[:, -21]
    if np.any(finite_tail & (tail < 0.5)):
        raise ValidationFailure("energy-growth", f"beta grows slower than |r|^{q:g}", float(rr[-1]))

    return AssumptionReport(p=p, C1=C1, C2=C2, C3=C3, M=M, convexity_violations=0,
                            smooth_conjugate=beta.differentiable_conjugate)
