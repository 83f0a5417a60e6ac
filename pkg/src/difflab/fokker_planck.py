r"""1D Fokker-Planck solves for the generated density and its first-order
perturbation in the score error.

The exact generative density obeys :math:`\partial_t q = \mathcal L_t q` with

.. math::

    \mathcal L_t \mu = -\partial_x\bigl(b_t \mu\bigr) + \tfrac{h_t^2}{2}\partial_{xx}\mu,
    \qquad b_t(x) = \tfrac12 g_t^2 x + \tfrac{g_t^2 + h_t^2}{2}\,\nabla\log p_{T-t}(x),

and the perturbation ``v`` obeys
:math:`\partial_t v = \mathcal L_t v - \partial_x\bigl(\tfrac{g_t^2+h_t^2}{2} E_t\, p_{T-t}\bigr)`
with ``v_0 = 0``.  Space is discretised by cell-centred finite volumes with
exponentially fitted (Scharfetter-Gummel) interface fluxes and zero flux at
both walls, so the discrete operator conserves mass exactly.  Time stepping
is backward Euler; :func:`evolve_perturbation` can also Richardson-extrapolate
two step sizes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dgtsv as _gtsv

from . import schedule as sch
from .errors import DomainTooSmallError, StabilityError, UnreliableQuadratureError
from .scores import Perturbation, TimeMask

LEAK_TOL = 1e-6
TAIL_TOL = 0.01


@dataclass(frozen=True)
class Grid1D:
    """``n`` cells of width ``2R/n`` on ``[-R, R]`` and time step ``dt``."""

    R: float
    n: int
    dt: float

    def __post_init__(self):
        if not (self.R > 0 and self.n >= 400 and self.dt > 0):
            raise ValueError("grid needs R > 0, n >= 400, dt > 0")

    @property
    def dx(self) -> float:
        return 2 * self.R / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.R + (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        """Interior interfaces only; the two walls carry no flux."""
        return -self.R + np.arange(1, self.n) * self.dx

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.dx)


def default_grid(sigma0: float, hsq: float, T: float, n: int = 2000, dt: Optional[float] = None) -> Grid1D:
    """``R = 6 max(sigma0, 1) + 2`` and the largest admissible ``dt``."""
    R = 6 * max(sigma0, 1.0) + 2
    return Grid1D(R, n, dt if dt is not None else max_dt(hsq, T))


def max_dt(hsq: float, T: float) -> float:
    """Accuracy bound ``1e-3 T / (1 + h^2)`` on the backward-Euler step."""
    return 1e-3 * T / (1 + hsq)


def check_step(grid: Grid1D, hsq: float, T: float):
    lim = max_dt(hsq, T)
    if grid.dt > lim * (1 + 1e-12):
        raise StabilityError(f"dt = {grid.dt:g} exceeds {lim:g} for h^2 = {hsq:g}", suggested_dt=lim)


def _bernoulli(w):
    """``w / (exp(w) - 1)`` with the removable singularity filled in."""
    w = np.asarray(w, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        out = w / np.expm1(w)
    out[w == 0.0] = 1.0
    return out


class FPOperator:
    """Spatial operator of the exact generative density on a fixed grid.

    ``hsq`` is the constant ``h^2`` of the unit-``g`` clock; on a general
    schedule it becomes ``h_t = sqrt(hsq) g_t``.
    """

    def __init__(self, model, hsq: float, grid: Grid1D):
        if hsq < 0:
            raise ValueError("hsq must be >= 0")
        self.model = model
        self.params = model.params
        self.hsq = float(hsq)
        self.grid = grid
        self._xf = grid.faces
        self._cache = (None, None)

    def coeffs(self, t_gen):
        """``g^2``, ``h^2``, and the interface drift at generative time ``t_gen``."""
        t_gen = float(t_gen)
        if self._cache[0] == t_gen:
            return self._cache[1]
        p = self.params
        t_fwd = sch.to_forward(p, t_gen)
        g2 = sch.g(p, t_fwd) ** 2
        h2 = self.hsq * g2
        xf = self._xf
        s = np.asarray(self.model.score(t_fwd, xf), dtype=float).reshape(xf.shape)
        b = 0.5 * g2 * xf + 0.5 * (g2 + h2) * s
        self._cache = (t_gen, (g2, h2, b))
        return g2, h2, b

    def face_weights(self, t_gen):
        """``(A, C)`` with interface flux ``J = A mu_left - C mu_right``."""
        _, h2, b = self.coeffs(t_gen)
        dx = self.grid.dx
        D = 0.5 * h2
        if D == 0.0:
            return np.maximum(b, 0.0), np.maximum(-b, 0.0)
        w = b * dx / D
        # B(-w) = B(w) + w; evaluate B on |w| so the small side stays accurate
        a = np.abs(w)
        small = _bernoulli(a)
        big = small + a
        pos = w >= 0
        k = D / dx
        return k * np.where(pos, big, small), k * np.where(pos, small, big)

    def tridiag(self, t_gen, dt):
        """Sub-, main and super-diagonal of ``I - dt * L_h``."""
        A, C = self.face_weights(t_gen)
        r = dt / self.grid.dx
        rA = r * A
        rC = r * C
        diag = np.ones(self.grid.n)
        # outflow through the right face of cell i, and through its left face
        diag[:-1] += rA
        diag[1:] += rC
        return -rA, diag, -rC

    def implicit_step(self, t_gen, dt, rhs, overwrite_rhs: bool = False):
        """Solve ``(I - dt L_h(t_gen)) y = rhs``."""
        lower, diag, upper = self.tridiag(t_gen, dt)
        _, _, _, y, info = _gtsv(lower, diag, upper, rhs, True, True, True, overwrite_rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return y

    def apply(self, t_gen, mu):
        """``L_h mu`` (explicit action, used for conservation checks)."""
        A, C = self.face_weights(t_gen)
        J = A * mu[:-1] - C * mu[1:]
        out = np.zeros_like(mu)
        out[:-1] -= J
        out[1:] += J
        return out / self.grid.dx


def _source_faces(op: FPOperator, pert: Perturbation, t_gen):
    """Interface flux ``(g^2 + h^2)/2 * field * p_{T-t}``, mask not applied."""
    p = op.params
    t_fwd = sch.to_forward(p, t_gen)
    g2, h2, _ = op.coeffs(t_gen)
    xf = op._xf
    dens = np.asarray(op.model.density(t_fwd, xf), dtype=float).reshape(xf.shape)
    if pert.mode == "score_proportional":
        fld = np.asarray(op.model.score(t_fwd, xf), dtype=float).reshape(xf.shape)
    else:
        fld = pert.linear_coef(t_gen) * xf
    return 0.5 * (g2 + h2) * fld * dens


def _div(F, n, dx):
    out = np.zeros(n)
    out[:-1] -= F
    out[1:] += F
    return out / dx


@dataclass
class PerturbationResult:
    x: np.ndarray
    v: np.ndarray
    grid: Grid1D
    mass: float
    edge_fraction: float


def _march_perturbation(model, pert: Perturbation, hsq: float, grid: Grid1D, project: bool = True):
    op = FPOperator(model, hsq, grid)
    T = op.params.T
    steps = max(1, int(round(T / grid.dt)))
    dt = T / steps
    n, dx = grid.n, grid.dx
    mask: TimeMask = pert.mask
    v = np.zeros(n)
    x = grid.x
    for k in range(steps):
        t0, t1 = k * dt, (k + 1) * dt
        m = mask.average(t0, t1, T)
        rhs = v
        if m != 0.0:
            # _div returns -dF/dx, the source term itself
            F = _source_faces(op, pert, t1)
            rhs = v + dt * m * _div(F, n, dx)
        v = op.implicit_step(t1, dt, rhs, overwrite_rhs=True)
        if project:
            # the exact v carries no mass; rounding adds some, and that part is
            # transported as the undamped mode p_{T-t}, so remove it each step
            q = np.asarray(model.density(sch.to_forward(op.params, t1), x), dtype=float).reshape(n)
            v = v - (np.sum(v) / np.sum(q)) * q
    return v


def _edge_fraction(grid, f):
    tot = np.sum(np.abs(f))
    if tot == 0:
        return 0.0
    k = max(1, grid.n // 100)
    return float((np.sum(np.abs(f[:k])) + np.sum(np.abs(f[-k:]))) / tot)


def evolve_perturbation(model, pert: Perturbation, hsq: float, grid: Grid1D, richardson: bool = False, check: bool = True, project: bool = True) -> PerturbationResult:
    """First-order density perturbation ``v_T`` on ``grid``.

    ``pert.epsilon`` is ignored; ``v`` is the derivative at zero.  With
    ``richardson`` the result is ``2 v(dt/2) - v(dt)``.  ``project`` removes
    rounding-level mass after every step; without it the scheme alone keeps
    the mass to rounding error, but that residue sets a floor near 1e-29 on
    ``L`` once the true value is smaller.
    """
    if check:
        check_step(grid, hsq, model.params.T)
    v = _march_perturbation(model, pert, hsq, grid, project)
    if richardson:
        half = Grid1D(grid.R, grid.n, grid.dt / 2)
        v = 2 * _march_perturbation(model, pert, hsq, half, project) - v
    edge = _edge_fraction(grid, v)
    if edge > LEAK_TOL:
        raise DomainTooSmallError(f"perturbation reaches the wall (edge fraction {edge:.2e})")
    return PerturbationResult(grid.x, v, grid, grid.integrate(v), edge)


@dataclass
class LeadingLPDE:
    L: float
    tail_mass: float
    n: int = 0
    converged: bool = True


def leading_L_pde(v, p0, grid: Grid1D, rel_floor: float = 1e-12) -> LeadingLPDE:
    """``1/2 int v^2 / p_0`` over ``{p_0 > rel_floor * max p_0}``.

    ``tail_mass`` is the share of ``int |v|`` lying outside that set.
    """
    v = np.asarray(v, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    keep = p0 > rel_floor * p0.max()
    keep &= p0 > 1e-300
    tot = np.sum(np.abs(v))
    tail = float(np.sum(np.abs(v[~keep])) / tot) if tot > 0 else 0.0
    if tail > TAIL_TOL:
        raise UnreliableQuadratureError(f"truncated tail carries {tail:.2%} of |v|")
    L = 0.5 * grid.integrate(v[keep] ** 2 / p0[keep])
    return LeadingLPDE(float(L), tail)


REFINE_TOL = 0.005
MAX_CELLS = 64000


def leading_L_fp(model, pert: Perturbation, hsq: float, grid: Grid1D, richardson: bool = True, refine: bool = True) -> LeadingLPDE:
    """``L`` from the PDE route: solve for ``v_T`` then integrate against ``p_0``.

    With ``refine`` the cell count starts at ``grid.n / 2`` (at least 400) and
    doubles until two successive values differ by under ``REFINE_TOL``
    relative; the finest value is returned.  At ``h = 0`` the fluxes reduce
    to first-order upwinding, so narrow densities need several doublings.
    """

    def solve(n):
        g = Grid1D(grid.R, n, grid.dt)
        res = evolve_perturbation(model, pert, hsq, g, richardson=richardson)
        p0 = np.asarray(model.density(0.0, g.x), dtype=float).reshape(n)
        out = leading_L_pde(res.v, p0, g)
        out.n = n
        return out

    if not refine:
        return solve(grid.n)
    prev = solve(max(400, grid.n // 2))
    while True:
        cur = solve(2 * prev.n)
        if abs(cur.L - prev.L) <= REFINE_TOL * abs(cur.L) or cur.L == prev.L:
            return cur
        if 2 * cur.n > MAX_CELLS:
            cur.converged = False
            warnings.warn(f"L not converged at n = {cur.n}: last change {abs(cur.L / prev.L - 1):.2%}", RuntimeWarning, stacklevel=2)
            return cur
        prev = cur


def evolve_density(model, hsq: float, grid: Grid1D, mu, t0: float, t1: float, dt: Optional[float] = None):
    """Homogeneous propagator ``Phi_{t0 -> t1}`` applied to ``mu``."""
    mu = np.array(mu, dtype=float)
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if t1 == t0:
        return mu
    op = FPOperator(model, hsq, grid)
    dt = grid.dt if dt is None else dt
    steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    d = (t1 - t0) / steps
    for k in range(steps):
        mu = op.implicit_step(t0 + (k + 1) * d, d, mu)
    return mu


def density_transport_error(model, hsq: float, grid: Grid1D) -> float:
    """L1 distance between the evolved ``p_T`` and ``p_0`` on the grid."""
    T = model.params.T
    x = grid.x
    pT = np.asarray(model.density(T, x), dtype=float).reshape(grid.n)
    q = evolve_density(model, hsq, grid, pT, 0.0, T)
    edge = _edge_fraction(grid, q)
    if edge > LEAK_TOL:
        raise DomainTooSmallError(f"density reaches the wall (edge fraction {edge:.2e})")
    p0 = np.asarray(model.density(0.0, x), dtype=float).reshape(grid.n)
    return grid.integrate(np.abs(q - p0))


def semigroup_check(model, hsq: float, grid: Grid1D, s: float, t: float, r: float, mu=None) -> float:
    """``|| Phi_{t->r} Phi_{s->t} mu - Phi_{s->r} mu ||_1`` on the grid.

    The default test measure is the zero-mass difference of two Gaussians.
    """
    if not s <= t <= r:
        raise ValueError("need s <= t <= r")
    x = grid.x
    if mu is None:
        mu = np.exp(-0.5 * (x - 0.3) ** 2 / 0.25) - np.exp(-0.5 * (x + 0.2) ** 2 / 0.36) * np.sqrt(0.25 / 0.36)
    composed = evolve_density(model, hsq, grid, evolve_density(model, hsq, grid, mu, s, t), t, r)
    direct = evolve_density(model, hsq, grid, mu, s, r)
    return grid.integrate(np.abs(composed - direct))


def mass_drift_rate(model, hsq: float, grid: Grid1D, mu=None, t0=0.0, t1=None) -> float:
    """``|mass(t1) - mass(t0)| / (t1 - t0)`` under the homogeneous evolution."""
    T = model.params.T
    t1 = T if t1 is None else t1
    x = grid.x
    if mu is None:
        mu = np.asarray(model.density(T - t0, x), dtype=float).reshape(grid.n)
    out = evolve_density(model, hsq, grid, mu, t0, t1)
    return abs(grid.integrate(out) - grid.integrate(mu)) / (t1 - t0)


def potential_U(model, t_gen, x):
    """``U = -log p_{T-t}`` on the generative clock."""
    return -np.asarray(model.log_density(sch.to_forward(model.params, t_gen), x), dtype=float)


def potential_V(model, hsq: float, t_gen, x):
    """``V = (1 + 1/h^2) U - x^2 / (2 h^2)`` for ``h^2 > 0``."""
    if hsq <= 0:
        raise ValueError("potential V needs h^2 > 0")
    x = np.asarray(x, dtype=float)
    return (1 + 1 / hsq) * potential_U(model, t_gen, x) - x * x / (2 * hsq)


def rho(model, hsq: float, t_gen, grid: Grid1D):
    """Normalised ``exp(-V)`` on the grid."""
    V = potential_V(model, hsq, t_gen, grid.x)
    w = np.exp(-(V - V.min()))
    return w / grid.integrate(w)
