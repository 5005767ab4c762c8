"""Constitutive relations and the Kirchhoff transformation.

Saturation and relative conductivity follow the van Genuchten / Mualem
closed forms, regularized so that every coefficient the solver touches is
bounded away from degeneracy:

* saturation approaches the residual value ``s_res`` exponentially below
  the regularization pressure ``p_reg`` (C1 joint) instead of flattening
  out at an infinite dry limit;
* the derivative channel (``sat_slope``, ``b_prime``) carries a floor
  ``a_min`` so implicit steps and uniqueness arguments see a strictly
  positive capacity everywhere, including the saturated plateau;
* relative conductivity gets an affine floor ``k_floor = a_min`` so the
  transform is bi-Lipschitz and invertible to working precision.

The Kirchhoff map ``u = psi(p)`` integrates conductivity over pressure.
It is tabulated once on a graded pressure grid and interpolated with a
monotone cubic; the transformed saturation ``b(u)``, its derivative, and
the convex potential ``B`` are all read from the same table so that the
discrete inequalities relating them hold to rounding.

All public array operations accept scalars or ndarrays and are pure; a
built table never mutates, so instances are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator, PPoly

__all__ = [
    "ConstitutiveError",
    "OutOfRangeError",
    "ConstitutiveModel",
    "KirchhoffTable",
    "build_table",
    "legendre_transform",
]


class ConstitutiveError(ValueError):
    """Invalid constitutive parameter or evaluation outside a domain."""


class OutOfRangeError(ConstitutiveError):
    """Transformed variable below the invertible range of the table."""


def _log1pexp(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)), stable for large positive t."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    big = t > 30.0
    out[big] = t[big] + np.log1p(np.exp(-t[big]))
    out[~big] = np.log1p(np.exp(t[~big]))
    return out


# ---------------------------------------------------------------------------
# closed-form model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstitutiveModel:
    """Regularized van Genuchten / Mualem constitutive package.

    Parameters
    ----------
    alpha_vg : float
        Inverse capillary length scale (> 0).
    n_vg : float
        Pore-size distribution exponent (> 1); ``m_vg = 1 - 1/n_vg``.
    s_res : float
        Residual saturation, the lower limit of the saturation range,
        strictly inside (0, 1).
    p_reg : float
        Pressure (< 0) below which the retention curve is replaced by a
        C1 exponential approach to ``s_res``.
    a_min : float
        Regularization floor in (0, 1): lower bound enforced on the
        derivative channel of saturation, and reused as the relative
        conductivity floor ``k_floor``.

    Notes
    -----
    ``saturation`` equals the closed-form retention curve on
    ``[p_reg, 0)``, is exactly 1 for ``p >= 0``, and decays to ``s_res``
    below ``p_reg`` with value and slope continuous at the joint.  The
    floor ``a_min`` applies to ``sat_slope`` (and through it to the
    transformed capacity ``b_prime``), not to the saturation values, so
    the range invariant ``s_res <= S <= 1`` is kept exactly.
    """

    alpha_vg: float = 2.0
    n_vg: float = 2.0
    s_res: float = 0.05
    p_reg: float = -10.0
    a_min: float = 1.0e-3

    # joint data for the exponential dry branch, filled in __post_init__
    _tail_amp: float = field(init=False, repr=False, default=0.0)
    _tail_rate: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self) -> None:
        if not (self.alpha_vg > 0.0):
            raise ConstitutiveError(f"alpha_vg must be > 0, got {self.alpha_vg}")
        if not (self.n_vg > 1.0):
            raise ConstitutiveError(f"n_vg must be > 1, got {self.n_vg}")
        if not (0.0 < self.s_res < 1.0):
            raise ConstitutiveError(f"s_res must be in (0, 1), got {self.s_res}")
        if not (self.p_reg < 0.0):
            raise ConstitutiveError(f"p_reg must be < 0, got {self.p_reg}")
        if not (0.0 < self.a_min < 1.0):
            raise ConstitutiveError(f"a_min must be in (0, 1), got {self.a_min}")
        s_j = float(self._vg_saturation(np.asarray(self.p_reg)))
        slope_j = float(self._vg_slope(np.asarray(self.p_reg)))
        amp = s_j - self.s_res
        if amp <= 0.0:
            raise ConstitutiveError(
                f"retention curve already at s_res at p_reg={self.p_reg}"
            )
        object.__setattr__(self, "_tail_amp", amp)
        object.__setattr__(self, "_tail_rate", slope_j / amp)

    # -- scalar properties ---------------------------------------------------

    @property
    def m_vg(self) -> float:
        return 1.0 - 1.0 / self.n_vg

    @property
    def k_floor(self) -> float:
        """Relative conductivity at ``s_res``; the affine floor constant."""
        return self.a_min

    # -- retention curve -----------------------------------------------------

    def _vg_saturation(self, p: np.ndarray) -> np.ndarray:
        # S = s_res + (1 - s_res) * (1 + (alpha |p|)^n)^(-m), valid for p < 0
        t = self.n_vg * np.log(self.alpha_vg * np.abs(p))
        se = np.exp(-self.m_vg * _log1pexp(t))
        return self.s_res + (1.0 - self.s_res) * se

    def _vg_slope(self, p: np.ndarray) -> np.ndarray:
        # dS/dp for p < 0, written in logs to survive extreme arguments
        ap = np.abs(p)
        t = self.n_vg * np.log(self.alpha_vg * ap)
        log_slope = (
            math.log(self.m_vg * self.n_vg)
            + self.n_vg * math.log(self.alpha_vg)
            + (self.n_vg - 1.0) * np.log(ap)
            - (self.m_vg + 1.0) * _log1pexp(t)
        )
        return (1.0 - self.s_res) * np.exp(log_slope)

    def saturation(self, p):
        """Saturation S(p): 1 on the saturated branch, monotone below.

        Parameters
        ----------
        p : float or ndarray
            Pressure head; total on the reals.

        Returns
        -------
        float or ndarray in ``(s_res, 1]``, exactly 1 for ``p >= 0``.
        """
        p_arr = np.asarray(p, dtype=float)
        scalar = p_arr.ndim == 0
        p_arr = np.atleast_1d(p_arr)
        out = np.ones_like(p_arr)
        mid = (p_arr < 0.0) & (p_arr >= self.p_reg)
        dry = p_arr < self.p_reg
        if np.any(mid):
            out[mid] = self._vg_saturation(p_arr[mid])
        if np.any(dry):
            out[dry] = self.s_res + self._tail_amp * np.exp(
                self._tail_rate * (p_arr[dry] - self.p_reg)
            )
        return float(out[0]) if scalar else out

    def sat_slope_raw(self, p):
        """Pointwise derivative of :meth:`saturation` (no floor)."""
        p_arr = np.asarray(p, dtype=float)
        scalar = p_arr.ndim == 0
        p_arr = np.atleast_1d(p_arr)
        out = np.zeros_like(p_arr)
        mid = (p_arr < 0.0) & (p_arr >= self.p_reg)
        dry = p_arr < self.p_reg
        if np.any(mid):
            out[mid] = self._vg_slope(p_arr[mid])
        if np.any(dry):
            out[dry] = (
                self._tail_amp
                * self._tail_rate
                * np.exp(self._tail_rate * (p_arr[dry] - self.p_reg))
            )
        return float(out[0]) if scalar else out

    def sat_slope(self, p):
        """Regularized saturation slope: ``max(dS/dp, a_min)``.

        This is the derivative channel used by capacities and Jacobians;
        it never falls below ``a_min`` even where the saturation value
        curve is flat (saturated plateau, deep dry tail).
        """
        return np.maximum(self.sat_slope_raw(p), self.a_min)

    # -- conductivity ----------------------------------------------------------

    def effective_saturation(self, s):
        """Map saturation in [s_res, 1] to effective saturation in [0, 1]."""
        return (np.asarray(s, dtype=float) - self.s_res) / (1.0 - self.s_res)

    def _mualem_kr(self, se: np.ndarray) -> np.ndarray:
        m = self.m_vg
        with np.errstate(divide="ignore"):
            x = np.exp(np.log(np.maximum(se, 0.0)) / m)  # se**(1/m)
            wet = -np.expm1(m * np.log1p(-np.minimum(x, 1.0)))  # 1 - (1-x)^m
        return np.sqrt(np.maximum(se, 0.0)) * wet * wet

    def conductivity(self, s):
        """Relative conductivity K_f(s) on ``[s_res, 1]``.

        Affine-floored Mualem form ``k_floor + (1 - k_floor) * kr(Se)``;
        equals ``k_floor`` at ``s_res`` and exactly 1 at full saturation.

        Raises
        ------
        ConstitutiveError
            If ``s`` lies outside ``[s_res, 1]`` by more than 1e-12.
        """
        s_arr = np.asarray(s, dtype=float)
        scalar = s_arr.ndim == 0
        s_arr = np.atleast_1d(s_arr)
        if np.any(s_arr < self.s_res - 1.0e-12) or np.any(s_arr > 1.0 + 1.0e-12):
            bad = s_arr[(s_arr < self.s_res - 1.0e-12) | (s_arr > 1.0 + 1.0e-12)]
            raise ConstitutiveError(
                f"saturation {bad[0]!r} outside [{self.s_res}, 1]"
            )
        se = np.clip(self.effective_saturation(s_arr), 0.0, 1.0)
        out = self.k_floor + (1.0 - self.k_floor) * self._mualem_kr(se)
        return float(out[0]) if scalar else out

    def conductivity_slope(self, s):
        """dK_f/ds; diverges at full saturation when ``m_vg < 1``.

        Callers that need a bounded derivative of conductivity along the
        transformed variable should use :meth:`KirchhoffTable.dconductivity_du`,
        which reads the tabulated composition instead.
        """
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        se = np.clip(self.effective_saturation(s_arr), 0.0, 1.0)
        m = self.m_vg
        out = np.zeros_like(se)
        pos = se > 0.0
        sep = se[pos]
        x = np.exp(np.log(sep) / m)
        x = np.minimum(x, 1.0)
        wet = -np.expm1(m * np.log1p(-x))
        root = np.sqrt(sep)
        with np.errstate(divide="ignore", over="ignore"):
            edge = np.exp((m - 1.0) * np.log1p(-x))  # (1-x)^(m-1), inf at x=1
            dkr = wet * wet / (2.0 * root) + 2.0 * wet * x * edge / root
        out[pos] = dkr
        out = (1.0 - self.k_floor) / (1.0 - self.s_res) * out
        return float(out[0]) if np.asarray(s).ndim == 0 else out

    def conductivity_vs_pressure(self, p):
        """Composition K_f(S(p)); smooth in p and used as the map integrand."""
        return self.conductivity(np.clip(self.saturation(p), self.s_res, 1.0))

    def conductivity_pressure_slope(self, p):
        """d/dp of K_f(S(p)), stable over the whole unsaturated range.

        Parametrized by t = (alpha |p|)^n_vg so the near-saturation
        blowup of dK_f/ds cancels against S' analytically instead of in
        floating point; 0 on p >= 0 (plateau, one-sided).
        """
        p_arr = np.asarray(p, dtype=float)
        scalar = p_arr.ndim == 0
        p_arr = np.atleast_1d(p_arr).astype(float)
        out = np.zeros_like(p_arr)
        m, n = self.m_vg, self.n_vg
        mid = (p_arr < 0.0) & (p_arr >= self.p_reg)
        if np.any(mid):
            pm = p_arr[mid]
            log_t = n * np.log(self.alpha_vg * np.abs(pm))
            t = np.exp(log_t)
            sqrt_se = np.exp(-0.5 * m * _log1pexp(log_t))
            wet = -np.expm1(m * (log_t - _log1pexp(log_t)))  # 1 - tau^m
            tau_pow = np.exp((m - 1.0) * (log_t - _log1pexp(log_t)))  # tau^(m-1)
            inv1pt2 = np.exp(-2.0 * _log1pexp(log_t))  # (1+t)^-2
            dsqrt_se = -0.5 * m * np.exp(-(0.5 * m + 1.0) * _log1pexp(log_t))
            dkr_dt = wet * wet * dsqrt_se - 2.0 * m * sqrt_se * wet * tau_pow * inv1pt2
            dkr_dp = dkr_dt * (n * t / pm)
            out[mid] = (1.0 - self.k_floor) * dkr_dp
        dry = p_arr < self.p_reg
        if np.any(dry):
            pd = p_arr[dry]
            s = self.saturation(pd)
            out[dry] = self.conductivity_slope(s) * self.sat_slope_raw(pd)
        return float(out[0]) if scalar else out

    def _conductivity_pressure_slope_limit(self) -> float:
        """One-sided limit of the composition slope as p -> 0-.

        Scales like |p|^(n_vg m_vg - 1): zero when n_vg > 2, finite when
        n_vg = 2, divergent when n_vg < 2 (the fit caps it there).
        """
        nm = self.n_vg * self.m_vg
        if nm > 1.0 + 1e-12:
            return 0.0
        if abs(nm - 1.0) <= 1e-12:
            return (1.0 - self.k_floor) * 2.0 * self.m_vg * self.n_vg * self.alpha_vg
        return np.inf

    # -- growth certificate ------------------------------------------------------

    def beta_bound(self) -> float:
        """Growth constant: ``K_f(b(z))^2 <= beta * (1 + B(z))`` for all z.

        Conductivity is capped at 1 and the potential B is nonnegative,
        so ``beta = 1`` certifies the bound with no sampling required.
        """
        return 1.0


# ---------------------------------------------------------------------------
# tabulated Kirchhoff map
# ---------------------------------------------------------------------------


def _gauss_panels(edges: np.ndarray, f, order: int = 12) -> np.ndarray:
    """Fixed-order Gauss-Legendre integral of f over each edge interval."""
    xi, wi = np.polynomial.legendre.leggauss(order)
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[:, None] + half[:, None] * xi[None, :]
    vals = f(nodes.ravel()).reshape(nodes.shape)
    return half * (vals @ wi)


def _pressure_grid(model: ConstitutiveModel, p_min: float) -> np.ndarray:
    """Starting grid on [p_min, 0]: log-refined toward 0 where the integrand
    curvature blows up, uniform over the retention branch, geometrically
    stretched through the exponential tail.  Refined further adaptively."""
    n_mid = int(min(max(round(-model.p_reg * 4000.0), 1000), 60000))
    mid = np.linspace(model.p_reg, 0.0, n_mid + 1)
    # near-saturation refinement: spacing proportional to |p| down to 1e-8
    scale = 1.0 / model.alpha_vg
    near = -np.geomspace(1.0e-8 * scale, 0.5 * scale, 600)
    pts = [mid, near[near > model.p_reg], np.array([0.0])]
    step = 1.0e-2
    p = model.p_reg
    tail = []
    while p > p_min:
        p = max(p - step, p_min)
        tail.append(p)
        step *= 1.005
    pts.append(np.array(tail[::-1]))
    grid = np.unique(np.concatenate(pts))
    # drop near-duplicate knots: zero-width intervals turn cumulative
    # rounding into derivative noise
    gap = np.diff(grid)
    keep = np.concatenate([[True], gap > 1.0e-9 * np.maximum(1.0, np.abs(grid[1:]))])
    keep[-1] = True
    grid = grid[keep]
    if grid[-1] != 0.0:
        grid = np.append(grid[grid < 0.0], 0.0)
    return grid


def _fit_map(model: ConstitutiveModel, grid: np.ndarray):
    """Integrate the conductivity composition over ``grid`` and fit the map.

    Values come from Gauss panels accumulated from p = 0 downward in
    extended precision (absolute accuracy near the working range stays at
    rounding level); knot derivatives are the integrand itself, exactly
    evaluated, so the Hermite fit is O(h^4) in value and O(h^3) in slope
    with no divided-difference noise.
    """
    panels = _gauss_panels(grid, model.conductivity_vs_pressure)
    suffix = np.cumsum(panels[::-1].astype(np.longdouble))[::-1]
    u = np.concatenate([-suffix, [np.longdouble(0.0)]]).astype(float)
    u[-1] = 0.0
    deriv = model.conductivity_vs_pressure(grid)
    delta = np.diff(u) / np.diff(grid)
    # cubic with positive endpoint slopes is monotone when both stay within
    # 3x the secant slope; the graded grid keeps the ratio near 1
    ratio = np.maximum(deriv[:-1], deriv[1:]) / np.maximum(delta, 1.0e-300)
    if np.any(delta <= 0.0) or float(ratio.max()) > 3.0:
        raise ConstitutiveError("pressure grid too coarse for a monotone map fit")
    return u, CubicHermiteSpline(grid, u, deriv, extrapolate=True)


def _monotone_hermite(x: np.ndarray, y: np.ndarray, d: np.ndarray) -> CubicHermiteSpline:
    """Cubic Hermite fit of nondecreasing data with supplied slopes.

    Slopes are capped at three times the neighboring secants (the classic
    sufficient condition), which only bites where the data has gone flat
    relative to the grid; there the cap preserves monotonicity at the cost
    of slope accuracy nobody reads.
    """
    delta = np.diff(y) / np.diff(x)
    if np.any(delta < 0.0):
        raise ConstitutiveError("data for a monotone fit must be nondecreasing")
    cap = np.empty_like(np.asarray(d, dtype=float))
    cap[0] = 3.0 * delta[0]
    cap[-1] = 3.0 * delta[-1]
    cap[1:-1] = 3.0 * np.minimum(delta[:-1], delta[1:])
    return CubicHermiteSpline(x, y, np.clip(d, 0.0, cap), extrapolate=True)


def _refine_grid(model: ConstitutiveModel, grid: np.ndarray, dtol: float) -> np.ndarray:
    """Split intervals until the fitted map's derivative error against the
    exactly evaluable integrand drops below ``dtol`` everywhere."""
    for _ in range(8):
        psi_d = _fit_map(model, grid)[1].derivative()
        bad = np.zeros(len(grid) - 1, dtype=bool)
        for frac in (0.25, 0.5, 0.75):
            probe = grid[:-1] + frac * np.diff(grid)
            err = np.abs(psi_d(probe) - model.conductivity_vs_pressure(probe))
            bad |= err > dtol
        if not np.any(bad):
            break
        mids = 0.5 * (grid[:-1] + grid[1:])[bad]
        grid = np.unique(np.concatenate([grid, mids]))
    return grid


@dataclass(frozen=True)
class KirchhoffTable:
    """Tabulated Kirchhoff transform and transformed-variable relations.

    Built once per model by :func:`build_table`.  Holds the pressure grid,
    the transformed values ``u = psi(p)``, and monotone cubic interpolants
    for the map, its inverse support, the transformed saturation ``b(u)``
    and the conductivity composition ``K_f(b(u))``.

    Attributes
    ----------
    model : ConstitutiveModel
        The closed-form package the table was built from.
    p_samples, u_samples : ndarray
        Matching pressure / transformed samples; strictly increasing, with
        ``u == p`` on the nonnegative branch.
    u_lower : float
        Certified bound strictly below every tabulated ``u``; inversion is
        refused at or below ``u_lower + margin``.
    margin : float
        Exclusion band above ``u_lower`` (1e-9 relative).
    interp_order : int
        Polynomial order of the interpolant (3: monotone cubic).
    tol_q : float
        Quadrature tolerance the tabulated values honor.
    """

    model: ConstitutiveModel
    p_samples: np.ndarray
    u_samples: np.ndarray
    u_lower: float
    margin: float
    interp_order: int
    tol_q: float
    _psi: PPoly = field(repr=False)
    _psi_d: PPoly = field(repr=False)
    _b: PPoly = field(repr=False)
    _b_d: PPoly = field(repr=False)
    _b_anti: PPoly = field(repr=False)
    _k: PPoly = field(repr=False)
    _k_d: PPoly = field(repr=False)

    # -- forward map ---------------------------------------------------------

    def kirchhoff(self, p):
        """Transformed variable u = psi(p); identity on ``p >= 0``.

        Total on the reals: below the tabulated range the map continues
        linearly with slope ``k_floor`` (the integrand is constant there
        to machine precision).
        """
        p_arr = np.asarray(p, dtype=float)
        scalar = p_arr.ndim == 0
        p_arr = np.atleast_1d(p_arr).astype(float)
        out = np.where(p_arr >= 0.0, p_arr, 0.0)
        neg = p_arr < 0.0
        if np.any(neg):
            pn = p_arr[neg]
            p_bot = self.p_samples[0]
            inside = pn >= p_bot
            vals = np.empty_like(pn)
            vals[inside] = self._psi(pn[inside])
            below = ~inside
            if np.any(below):
                u_bot = self.u_samples[0]
                vals[below] = u_bot + self.model.k_floor * (pn[below] - p_bot)
            out[neg] = vals
        return float(out[0]) if scalar else out

    def kirchhoff_derivative(self, p):
        """d psi/dp from the table; equals K_f(S(p)) to quadrature accuracy."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        out = np.ones_like(p_arr)
        neg = p_arr < 0.0
        if np.any(neg):
            out[neg] = self._psi_d(np.maximum(p_arr[neg], self.p_samples[0]))
        return float(out[0]) if np.asarray(p).ndim == 0 else out

    # -- inverse map -----------------------------------------------------------

    def _check_invertible(self, u_arr: np.ndarray) -> None:
        floor = self.u_lower + self.margin
        if np.any(u_arr <= floor):
            idx = int(np.argmax(u_arr <= floor))
            raise OutOfRangeError(
                f"u={u_arr[idx]!r} at or below invertible range "
                f"(u_lower + margin = {floor!r}): pressure diverges"
            )

    def kirchhoff_inverse(self, u):
        """Pressure p with ``kirchhoff(p) = u``, for ``u > u_lower + margin``.

        Bisection-safeguarded Newton on the monotone table; the returned
        pressure reproduces ``u`` through :meth:`kirchhoff` to a few 1e-15
        in the working band (relative in the deep tail), tight enough that
        saturations recovered through it agree with the direct channel.

        Raises
        ------
        OutOfRangeError
            If any entry is at or below ``u_lower + margin``.
        """
        u_arr = np.asarray(u, dtype=float)
        scalar = u_arr.ndim == 0
        u_arr = np.atleast_1d(u_arr).astype(float)
        self._check_invertible(u_arr)
        out = np.where(u_arr >= 0.0, u_arr, 0.0)
        neg = u_arr < 0.0
        if np.any(neg):
            out[neg] = self._invert_negative(u_arr[neg])
        return float(out[0]) if scalar else out

    def _invert_negative(self, u: np.ndarray) -> np.ndarray:
        us = self.u_samples
        ps = self.p_samples
        # below-table queries sit in the 1e-9 exclusion slack; extend the
        # bottom bracket slightly so they resolve by extrapolation
        idx = np.clip(np.searchsorted(us, u), 1, len(us) - 1)
        lo = np.where(u < us[0], ps[0] - 1.0, ps[idx - 1]).astype(float)
        hi = ps[idx].astype(float)
        ulo = np.where(u < us[0], u - 1.0, us[idx - 1])
        uhi = us[idx]
        # linear seed inside the bracket
        p = lo + (u - ulo) * (hi - lo) / np.maximum(uhi - ulo, 1.0e-300)
        # the residual tolerance has to be far below tol_q: a slack of t
        # here surfaces as b'(u) * t in every recovered-saturation value,
        # and b' reaches ~1e2.  3e-15 is reachable in the working band;
        # the relative term covers the deep tail where |u| is large and
        # evaluation noise scales with it.
        tol = np.maximum(3.0e-15, 4.0e-15 * np.abs(u))
        for _ in range(80):
            f = self._psi(p) - u
            done = np.abs(f) <= tol
            if np.all(done):
                break
            hi = np.where(f > 0.0, p, hi)
            lo = np.where(f <= 0.0, p, lo)
            d = np.maximum(self._psi_d(p), self.model.k_floor * 1.0e-3)
            step = f / d
            p_new = p - step
            bad = (p_new <= lo) | (p_new >= hi)
            p_new = np.where(bad, 0.5 * (lo + hi), p_new)
            p = np.where(done, p, p_new)
        return p

    # -- transformed saturation and potential ------------------------------------

    def b_of_u(self, u):
        """Transformed saturation b(u) = S(psi^-1(u)); 1 on ``u >= 0``."""
        u_arr = np.asarray(u, dtype=float)
        scalar = u_arr.ndim == 0
        u_arr = np.atleast_1d(u_arr).astype(float)
        self._check_invertible(u_arr)
        out = np.ones_like(u_arr)
        neg = u_arr < 0.0
        if np.any(neg):
            out[neg] = self._b(np.maximum(u_arr[neg], self.u_samples[0]))
        return float(out[0]) if scalar else out

    def b_prime(self, u):
        """Capacity db/du with the regularization floor ``a_min``.

        The derivative of the same fit that backs :meth:`b_of_u` — whose
        knot slopes are the exact quotients ``S'(p) / K_f(S(p))`` — floored
        at ``a_min``.  One consistent channel: a Jacobian built from
        ``b_prime`` linearizes the residual's ``b_of_u`` term exactly
        wherever the floor is inactive.
        """
        u_arr = np.asarray(u, dtype=float)
        scalar = u_arr.ndim == 0
        u_arr = np.atleast_1d(u_arr).astype(float)
        self._check_invertible(u_arr)
        out = np.full_like(u_arr, self.model.a_min)
        neg = u_arr < 0.0
        if np.any(neg):
            slope = self._b_d(np.maximum(u_arr[neg], self.u_samples[0]))
            out[neg] = np.maximum(slope, self.model.a_min)
        return float(out[0]) if scalar else out

    def legendre_B(self, z):
        """Convex potential ``B(z) = b(z) z - integral_0^z b``.

        Nonnegative, zero on the saturated branch, evaluated from the
        exact antiderivative of the same monotone cubic that represents
        ``b``, so the pairing inequalities hold to rounding.
        """
        z_arr = np.asarray(z, dtype=float)
        scalar = z_arr.ndim == 0
        z_arr = np.atleast_1d(z_arr).astype(float)
        self._check_invertible(z_arr)
        out = np.zeros_like(z_arr)
        neg = z_arr < 0.0
        if np.any(neg):
            zn = np.maximum(z_arr[neg], self.u_samples[0])
            phi = self._b_anti(zn) - self._b_anti(0.0)
            out[neg] = np.maximum(self._b(zn) * zn - phi, 0.0)
        return float(out[0]) if scalar else out

    # -- conductivity along the transformed variable ----------------------------

    def conductivity_of_u(self, u):
        """K_f(b(u)); exactly 1 on the saturated branch.

        Read from the tabulated conductivity-vs-u curve so that
        :meth:`dconductivity_du` is its exact derivative — residual and
        Jacobian assembly then share one conductivity channel.
        """
        u_arr = np.asarray(u, dtype=float)
        scalar = u_arr.ndim == 0
        u_arr = np.atleast_1d(u_arr).astype(float)
        self._check_invertible(u_arr)
        out = np.ones_like(u_arr)
        neg = u_arr < 0.0
        if np.any(neg):
            out[neg] = self._k(np.maximum(u_arr[neg], self.u_samples[0]))
        return float(out[0]) if scalar else out

    def dconductivity_du(self, u):
        """d/du of the tabulated conductivity composition.

        Bounded everywhere (unlike ``conductivity_slope`` at full
        saturation); the exact derivative of :meth:`conductivity_of_u`,
        intended for Jacobian assembly.
        """
        u_arr = np.asarray(u, dtype=float)
        scalar = u_arr.ndim == 0
        u_arr = np.atleast_1d(u_arr).astype(float)
        out = np.zeros_like(u_arr)
        neg = u_arr < 0.0
        if np.any(neg):
            out[neg] = self._k_d(np.maximum(u_arr[neg], self.u_samples[0]))
        return float(out[0]) if scalar else out

    def beta_bound(self) -> float:
        """Growth constant for the stored model (see model docstring)."""
        return self.model.beta_bound()


def build_table(
    model: ConstitutiveModel,
    p_min: float = -1.0e6,
    tol_q: float = 1.0e-12,
) -> KirchhoffTable:
    """Tabulate the Kirchhoff map for ``model`` and wire up interpolants.

    Parameters
    ----------
    model : ConstitutiveModel
    p_min : float
        Most negative tabulated pressure; the map continues analytically
        (constant integrand ``k_floor``) below it.
    tol_q : float
        Accuracy of the tabulated integral values.

    Returns
    -------
    KirchhoffTable
    """
    if p_min >= model.p_reg:
        raise ConstitutiveError("p_min must lie below p_reg")
    neg_grid = _pressure_grid(model, p_min)
    neg_grid = _refine_grid(model, neg_grid, dtol=1.0e-8)
    u_neg, psi = _fit_map(model, neg_grid)
    psi_d = psi.derivative()

    s_neg = np.clip(model.saturation(neg_grid), model.s_res, 1.0)
    # db/du = S'(p) / K_f(S(p)) at the knots, exact by the inverse-function
    # rule; interpolating b against u from values alone would amplify table
    # rounding by 1/K^2
    db_du = model.sat_slope_raw(neg_grid) / model.conductivity_vs_pressure(neg_grid)
    b_interp = _monotone_hermite(u_neg, s_neg, db_du)
    b_d = b_interp.derivative()
    b_anti = b_interp.antiderivative()

    k_neg = model.conductivity(s_neg)
    # dK/du = (dK/dp) / (du/dp) with du/dp = K; top knot takes the p -> 0-
    # limit (capped by the fit when the exponent family makes it infinite)
    with np.errstate(over="ignore"):
        dk_du = model.conductivity_pressure_slope(neg_grid) / k_neg
    dk_du[-1] = model._conductivity_pressure_slope_limit()
    k_interp = _monotone_hermite(u_neg, k_neg, dk_du)
    k_d = k_interp.derivative()

    p_plus = np.array([2.5, 5.0, 7.5, 10.0])
    p_samples = np.concatenate([neg_grid, p_plus])
    u_samples = np.concatenate([u_neg, p_plus])

    u_bot = float(u_neg[0])
    u_lower = u_bot * (1.0 + 2.0e-9)
    margin = 1.0e-9 * abs(u_lower)

    return KirchhoffTable(
        model=model,
        p_samples=p_samples,
        u_samples=u_samples,
        u_lower=u_lower,
        margin=margin,
        interp_order=3,
        tol_q=tol_q,
        _psi=psi,
        _psi_d=psi_d,
        _b=b_interp,
        _b_d=b_d,
        _b_anti=b_anti,
        _k=k_interp,
        _k_d=k_d,
    )


def legendre_transform(b, z: float, tol: float = 1.0e-12) -> float:
    """Potential ``B(z) = integral_0^z (b(z) - b(s)) ds`` for a callable b.

    Adaptive-quadrature reference used to cross-check the tabulated
    :meth:`KirchhoffTable.legendre_B` and to exercise the construction
    with injected monotone functions in tests.
    """
    from scipy.integrate import quad

    bz = float(b(z))
    val, err = quad(lambda s: bz - float(b(s)), 0.0, z, epsabs=tol, epsrel=tol, limit=200)
    return val
