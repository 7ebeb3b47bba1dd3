"""Photon-subtraction failure probabilities and fidelities for pulses
scattering off a waveguide-coupled three-level emitter.

Working objects, all on the unit time bin [0, 1] with coupling gamma in
units of one over the bin length:

    u(t)        input temporal profile, real, nonnegative, L2-normalized
    u~(t)       exponential smoothing of u:  du~/dt = 2 gamma (u - u~)
    G(t)        remaining pulse weight  1 - int_0^t |u|^2
    Theta~(t)   smoothing of (u~ - u) with the same 2 gamma kernel
    w~(t)       smoothing of 4 gamma (u u~ - u Theta~) with a 4 gamma kernel

All smoothed kernels are integrated as their defining linear ODEs with a
fixed-step classical 4th-order scheme; the grid is refined automatically
until 2 gamma h <= 0.5, and forcings are sampled on nested half-grids so the
scheme keeps full order.  Every [1, inf) tail is summed in closed form from
the exponential decay of the smoothed quantities, which avoids truncation
bias at large gamma.

The two-photon failure correlator

    c(t, t2) = sqrt(2) [ (u - u~)(t) (u - u~)(t2)
                         - u~(t)^2 exp(-2 gamma (t2 - t)) ]

follows from u~(t2, t1) = u~(t2) - exp(-2 gamma (t2 - t1)) u~(t1), so its
squared double integral reduces exactly to one-dimensional quadratures plus
one backward exponential-kernel integral.  The same reduction applies to the
two-layer subtraction fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, quad, simpson
from scipy.signal import lfilter

__all__ = [
    "PulseShape",
    "SubtractionDerived",
    "derive_quantities",
    "p_fail_k1",
    "p_fail_k2",
    "f_sub_single",
    "f_sub_double",
    "gate_infidelity",
    "gate_infidelity_two_layer",
    "closed_form_infidelity_square",
    "lipschitz_gamma_threshold",
]

DEFAULT_GRID_POINTS = 4097


def _bump_raw(t):
    t = np.asarray(t, dtype=float)
    d = 0.25 - (t - 0.5) ** 2
    out = np.zeros_like(t)
    inside = d > 0
    out[inside] = np.exp(-0.25 / d[inside])
    return out


@dataclass
class PulseShape:
    """Normalized temporal profile on [0, 1], sampled on a uniform grid."""

    name: str
    grid: np.ndarray
    samples: np.ndarray
    func: callable = field(default=None, repr=False)

    @classmethod
    def square(cls, grid_points: int = DEFAULT_GRID_POINTS) -> "PulseShape":
        grid = np.linspace(0.0, 1.0, grid_points)
        f = lambda t: np.ones_like(np.asarray(t, dtype=float))
        return cls("square", grid, f(grid), func=f)

    @classmethod
    def bump(cls, grid_points: int = DEFAULT_GRID_POINTS) -> "PulseShape":
        norm2, _ = quad(lambda t: _bump_raw(t) ** 2, 0.0, 1.0, epsabs=1e-14)
        c = 1.0 / np.sqrt(norm2)
        f = lambda t: c * _bump_raw(t)
        grid = np.linspace(0.0, 1.0, grid_points)
        return cls("bump", grid, f(grid), func=f)

    @classmethod
    def from_samples(cls, name: str, samples) -> "PulseShape":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or samples.size < 3:
            raise ValueError("need a 1D array of at least 3 samples")
        if np.any(samples < 0):
            raise ValueError("pulse samples must be nonnegative")
        grid = np.linspace(0.0, 1.0, samples.size)
        norm = np.sqrt(simpson(samples**2, x=grid))
        return cls(name, grid, samples / norm)

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        if self.func is not None:
            return self.func(t)
        return np.interp(t, self.grid, self.samples)

    def norm_defect(self) -> float:
        """|1 - int |u|^2| under the composite Simpson rule on the grid."""
        return abs(1.0 - simpson(self.samples**2, x=self.grid))


@dataclass
class SubtractionDerived:
    """u and its smoothed companions on a (possibly refined) uniform grid."""

    pulse: PulseShape
    gamma: float
    grid: np.ndarray
    u: np.ndarray
    u_tilde: np.ndarray
    G: np.ndarray
    theta_tilde: np.ndarray
    w_tilde: np.ndarray

    def g(self) -> np.ndarray:
        """Virtual-cavity coupling u / sqrt(G), zero where G has drained."""
        out = np.zeros_like(self.u)
        ok = self.G > 1e-14
        out[ok] = self.u[ok] / np.sqrt(self.G[ok])
        return out

    def ode_residual(self) -> float:
        """Max defect of the integrated ODE
        u~(t) = 2 gamma int_0^t (u - u~), which sidesteps the finite-
        difference noise a pointwise derivative check would pick up inside
        the boundary layer."""
        rhs = 2.0 * self.gamma * cumulative_simpson(
            self.u - self.u_tilde, x=self.grid, initial=0.0
        )
        return float(np.max(np.abs(self.u_tilde - rhs)))


def _rk4_filter(a: float, h: float, f_nodes, f_mids, y0: float = 0.0):
    """March y' = a y + f with classical RK4 at fixed step h.

    f_nodes has N+1 node values, f_mids the N midpoint values.  Constant
    coefficients make the update linear, so the whole march is one IIR
    filter pass.
    """
    q = a * h
    R = 1.0 + q + q**2 / 2.0 + q**3 / 6.0 + q**4 / 24.0
    w0 = (h / 6.0) * (1.0 + q + q**2 / 2.0 + q**3 / 4.0)
    wm = (h / 6.0) * (4.0 + 2.0 * q + q**2 / 2.0)
    w1 = h / 6.0
    g = w0 * f_nodes[:-1] + wm * f_mids + w1 * f_nodes[1:]
    y = lfilter([1.0], [1.0, -R], g)
    if y0 != 0.0:
        n = np.arange(1, len(g) + 1)
        y = y + y0 * R**n
    return np.concatenate(([y0], y))


def _refined_axis(pulse: PulseShape, gamma: float):
    """Base step for the gamma boundary layers.

    The ODE stiffness guard alone would be 2 gamma h <= 0.5; quadratures of
    squared layer quantities decay at rate 4 gamma, so the grid refines to
    2 gamma h <= 1/8, keeping composite Simpson errors below ~1e-5 relative
    even inside the layers.
    """
    n = pulse.grid.size - 1
    h = 1.0 / n
    while 2.0 * gamma * h > 0.125:
        n *= 2
        h = 1.0 / n
    return n


def derive_quantities(pulse: PulseShape, gamma: float) -> SubtractionDerived:
    """u~, G, Theta~, w~ on the stiffness-refined grid.

    The three ODE marches run on nested grids (u~ at h/4, Theta~ at h/2,
    w~ at h) so every forcing midpoint is available at full accuracy.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = _refined_axis(pulse, gamma)
    # finest axis: step h/8 resolves the midpoints of the h/4 march
    t8 = np.linspace(0.0, 1.0, 8 * n + 1)
    u8 = pulse.evaluate(t8)

    # u~ at step h/4, forcing 2 gamma u
    ut4 = _rk4_filter(
        -2.0 * gamma, 1.0 / (4 * n), 2.0 * gamma * u8[::2], 2.0 * gamma * u8[1::2]
    )
    # Theta~ at step h/2, forcing 2 gamma (u~ - u)
    f4 = 2.0 * gamma * (ut4 - u8[::2])
    th2 = _rk4_filter(-2.0 * gamma, 1.0 / (2 * n), f4[::2], f4[1::2])
    # w~ at step h, forcing 4 gamma (u u~ - u Theta~)
    u2 = u8[::4]
    f2 = 4.0 * gamma * u2 * (ut4[::2] - th2)
    w1 = _rk4_filter(-4.0 * gamma, 1.0 / n, f2[::2], f2[1::2])

    grid = t8[::8]
    u = u8[::8]
    G = 1.0 - cumulative_simpson(u2**2, x=t8[::4], initial=0.0)[::2]
    return SubtractionDerived(
        pulse=pulse, gamma=gamma, grid=grid, u=u,
        u_tilde=ut4[::4], G=G, theta_tilde=th2[::2], w_tilde=w1,
    )


def p_fail_k1(pulse: PulseShape, gamma: float) -> float:
    """Single-photon subtraction failure probability
    int_0^inf |u - u~|^2, with the [1, inf) tail summed in closed form."""
    d = derive_quantities(pulse, gamma)
    diff = d.u - d.u_tilde
    body = simpson(diff**2, x=d.grid)
    tail = d.u_tilde[-1] ** 2 / (4.0 * gamma)
    return float(body + tail)


def p_fail_k2(pulse: PulseShape, gamma: float) -> float:
    """Two-photon subtraction failure probability from the squared
    time-ordered two-photon correlator.

    The correlator c(t, t2) factorizes (module docstring), so the double
    integral over 0 <= t <= t2 becomes

        int_0^1 dt [ D^2 S(t) - 2 D u~^2 J(t) + u~^4 / (4 gamma) ]

    with D = u - u~,  S(t) = int_t^inf D^2,  and
    J(t) = int_t^inf D(t2) e^{-2 gamma (t2 - t)} dt2 integrated backward;
    the integrand vanishes identically for t > 1.
    """
    d = derive_quantities(pulse, gamma)
    grid, u, ut = d.grid, d.u, d.u_tilde
    n = grid.size - 1
    h = 1.0 / n
    D = u - ut
    tail1 = ut[-1] ** 2 / (4.0 * gamma)

    cum = cumulative_simpson(D**2, x=grid, initial=0.0)
    S = (cum[-1] - cum) + tail1

    # J by backward march: in s = 1 - t, dJ/ds = -2 gamma J + D(1 - s).
    # Midpoint forcing comes from a half-step refinement of D.
    t2 = np.linspace(0.0, 1.0, 2 * n + 1)
    u_half = pulse.evaluate(t2)
    ut_half = _rk4_filter(
        -2.0 * gamma, h / 2.0, 2.0 * gamma * u_half,
        2.0 * gamma * pulse.evaluate((t2[:-1] + t2[1:]) / 2.0),
    )
    D_half = u_half - ut_half
    Drev = D_half[::-1]
    J = _rk4_filter(
        -2.0 * gamma, h, Drev[::2], Drev[1::2], y0=-ut[-1] / (4.0 * gamma)
    )[::-1]

    integrand = 2.0 * (
        D**2 * S - 2.0 * D * ut**2 * J + ut**4 / (4.0 * gamma)
    )
    return float(simpson(integrand, x=grid))


def f_sub_single(pulse: PulseShape, gamma: float, k: int) -> float:
    """Single-layer subtraction fidelity  |k int u~ u G^{k-1}|^2."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d = derive_quantities(pulse, gamma)
    val = k * simpson(d.u_tilde * d.u * d.G ** (k - 1), x=d.grid)
    return float(val**2)


def f_sub_double(pulse: PulseShape, gamma: float, k: int) -> float:
    """Two-layer subtraction fidelity.

    |k(k-1) intint_{t1<=t2} [u~(t1) u~(t2,t1) + w~(t1) e^{-2g(t2-t1)} / 2]
    u(t1) u(t2) G(t2)^{k-2}|^2, reduced to 1D with the same kernel identity
    as p_fail_k2.
    """
    if k < 2:
        raise ValueError("two-layer fidelity needs k >= 2")
    d = derive_quantities(pulse, gamma)
    grid, u, ut, G, wt = d.grid, d.u, d.u_tilde, d.G, d.w_tilde
    n = grid.size - 1
    h = 1.0 / n

    f = u * ut * G ** (k - 2)
    cum = cumulative_simpson(f, x=grid, initial=0.0)
    A = cum[-1] - cum          # int_t^1 u u~ G^{k-2}

    # B(t) = int_t^1 u(t2) G(t2)^{k-2} e^{-2 gamma (t2-t)} dt2, backward
    t2 = np.linspace(0.0, 1.0, 2 * n + 1)
    u_half = pulse.evaluate(t2)
    G_half = 1.0 - cumulative_simpson(u_half**2, x=t2, initial=0.0)
    fb = u_half * np.clip(G_half, 0.0, None) ** (k - 2)
    fbrev = fb[::-1]
    B = _rk4_filter(-2.0 * gamma, h, fbrev[::2], fbrev[1::2])[::-1]

    inner = u * ut * A + u * (0.5 * wt - ut**2) * B
    val = k * (k - 1) * simpson(inner, x=grid)
    return float(val**2)


def gate_infidelity(p_fail: float, dphi: float) -> float:
    """Single-layer gate infidelity 2 p (1 - p) (1 - cos dphi)."""
    if not 0.0 <= p_fail <= 1.0:
        raise ValueError("p_fail must be a probability")
    return 2.0 * p_fail * (1.0 - p_fail) * (1.0 - np.cos(dphi))


def gate_infidelity_two_layer(
    p1: float, p2: float, p3: float, p4: float,
    phi1: float, phi2: float, phi3: float,
) -> float:
    """Two-layer gate infidelity 1 - F_gate with

    F_gate = |p1 e^{i[(phi1-phi3)+(phi2-phi3)]} + p2 e^{i(phi2-phi3)}
              + p3 e^{i(phi1-phi3)} + p4|^2.
    """
    ps = np.array([p1, p2, p3, p4], dtype=float)
    if np.any(ps < 0) or np.any(ps > 1):
        raise ValueError("branch probabilities must lie in [0, 1]")
    if abs(ps.sum() - 1.0) > 1e-9:
        raise ValueError(f"branch probabilities must sum to 1, got {ps.sum()}")
    a = phi1 - phi3
    b = phi2 - phi3
    f = abs(
        p1 * np.exp(1j * (a + b)) + p2 * np.exp(1j * b)
        + p3 * np.exp(1j * a) + p4
    ) ** 2
    return float(1.0 - f)


def closed_form_infidelity_square(gamma: float, k: int) -> float:
    """Exact square-pulse 1 - F_sub for k = 1, 2 (single layer)."""
    E = np.exp(-2.0 * gamma)
    if k == 1:
        return (1.0 / gamma) * (1.0 - E) * (1.0 - (1.0 - E) / (4.0 * gamma))
    if k == 2:
        return (
            (2.0 / gamma)
            * (1.0 - (1.0 - E) / (2.0 * gamma))
            * (1.0 - 1.0 / (2.0 * gamma) + (1.0 - E) / (4.0 * gamma**2))
        )
    raise ValueError("closed forms available for k = 1, 2 only")


def lipschitz_gamma_threshold(pulse: PulseShape, eps: float) -> float:
    """Coupling above which the failure probability provably drops below
    4 eps for a smooth pulse: max of (1/(2 eta eps)) ln(M/eps), 2M, and
    M^2 / (4 eps), with M the sup of u and 1/eta its Lipschitz constant."""
    if not 0 < eps < 0.25:
        raise ValueError("eps must be in (0, 1/4)")
    M = float(np.max(pulse.samples))
    slope = float(np.max(np.abs(np.gradient(pulse.samples, pulse.grid))))
    eta = 1.0 / slope if slope > 0 else np.inf
    terms = [2.0 * M, M**2 / (4.0 * eps)]
    if np.isfinite(eta):
        terms.append(np.log(M / eps) / (2.0 * eta * eps))
    return float(max(terms))
