"""Compile Trotter hopping steps into time-bin waveguide schedules and
re-enact them as discrete-event simulations.

Bins propagate at unit group velocity, so a bin is identified by its
arrival time at each element; a fiber delay adds a constant to every
arrival time of one waveguide.  All times are exact rationals (Fractions)
on the grid of bin coincidences, and both 1D variants circulate fully
packed trains, so coincidences are compared modulo the train period
(N_x/2) l_x -- the wrap-around coupling is precisely a coincidence with the
neighboring period.

1D layout (0-based sites): even sites ride waveguide 0, odd sites
waveguide 1, one slot per site pair.  even_simple couples everything with
two static beamsplitters; the general variant uses one static and two
gated beamsplitters and works out to the same unitary for even N_x.

2D layout: four waveguides indexed by (x parity, y parity); rows form
coarse clusters with pitch l_y and fine pitch l_x inside.  The x-direction
layers run the 1D general circuit on both waveguide pairs at the fine
pitch, then the y-direction layers repeat it on the coarse clusters.
Gauge phases ride on the beamsplitter windows (per coinciding pair), so
every 2D beamsplitter event is emitted in gated form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fock import FockBasis, SectorOperator
from .gates import beamsplitter_gate, number_phase_gate

__all__ = [
    "TimeBinLayout",
    "ScheduleEvent",
    "ScheduleError",
    "compile_1d",
    "compile_2d",
    "simulate_schedule",
    "certify_equivalence",
    "serialize_schedule",
    "parse_schedule",
]


class ScheduleError(RuntimeError):
    pass


@dataclass
class TimeBinLayout:
    """Waveguide/arrival-time assignment of lattice sites."""

    n_waveguides: int
    bin_assignment: dict          # site -> (waveguide, arrival Fraction)
    period: Fraction = None       # train period for circulating schedules
    l_x: Fraction = None
    l_y: Fraction = None

    def sites_on(self, wg: int):
        return [s for s, (w, _) in self.bin_assignment.items() if w == wg]


@dataclass
class ScheduleEvent:
    """One schedule element.

    kind "delay": waveguides = (wg,), length set.
    kind "bs":    waveguides = (wg_a, wg_b), theta/phi set; windows is None
    for a static splitter, else a tuple of (lo, hi, phi) on-intervals.
    kind "phase": waveguides = (wg,), table set.
    """

    kind: str
    waveguides: tuple
    length: Fraction = None
    theta: float = 0.0
    phi: float = 0.0
    windows: tuple = None
    table: tuple = None


def _pair_phase(phases, a: int, b: int, default: float) -> float:
    """Oriented hop phase for the pair (a, b); reversing flips the sign."""
    if phases is None:
        return default
    if callable(phases):
        return phases(a, b)
    if (a, b) in phases:
        return phases[(a, b)]
    if (b, a) in phases:
        return -phases[(b, a)]
    raise KeyError(f"no hopping phase for the pair ({a}, {b})")


def _window(t: Fraction, width: Fraction, phi: float):
    return (t - width / 4, t + width / 4, phi)


def _coincidences(layout, delays, wg_a, wg_b):
    """(site_a, site_b, time) triples with equal arrival, modulo the period."""
    period = layout.period
    arr_a = [
        (s, layout.bin_assignment[s][1] + delays[wg_a])
        for s in layout.sites_on(wg_a)
    ]
    arr_b = [
        (s, layout.bin_assignment[s][1] + delays[wg_b])
        for s in layout.sites_on(wg_b)
    ]
    _check_collisions(arr_a, period, wg_a)
    _check_collisions(arr_b, period, wg_b)
    out = []
    for sa, ta in arr_a:
        for sb, tb in arr_b:
            if period is not None:
                if (ta - tb) % period == 0:
                    out.append((sa, sb, ta % period))
            elif ta == tb:
                out.append((sa, sb, ta))
    out.sort(key=lambda x: x[2])
    return out


def _check_collisions(arrivals, period, wg):
    seen = {}
    for s, t in arrivals:
        key = t % period if period is not None else t
        if key in seen:
            raise ScheduleError(
                f"bins for sites {seen[key]} and {s} collide on waveguide "
                f"{wg} at time {key}"
            )
        seen[key] = s


def compile_1d(N_x: int, l_x, theta: float, variant: str = "even_simple",
               phi: float = math.pi, phases=None):
    """Schedule implementing one Trotter hopping step of a periodic chain.

    even_simple: two static beamsplitters with fully packed fiber loops.
    general: static splitter, gated splitter for the interior odd edges,
    and a second gated splitter for the wrap edge, per-edge on-windows.
    Both need even N_x (the fiber lengths are (N_x/2)-multiples of l_x).
    """
    if N_x < 2 or N_x % 2 != 0:
        raise ValueError(f"{variant} compilation needs even N_x, got {N_x}")
    if variant not in ("even_simple", "general"):
        raise ValueError(f"unknown 1D variant {variant!r}")
    l_x = Fraction(l_x)
    assignment = {x: (x % 2, -(x // 2) * l_x) for x in range(N_x)}
    period = Fraction(N_x, 2) * l_x
    layout = TimeBinLayout(
        n_waveguides=2, bin_assignment=assignment, period=period, l_x=l_x
    )

    def pphi(a, b):
        return _pair_phase(phases, a, b, phi)

    if variant == "even_simple":
        events = [
            ScheduleEvent("bs", (0, 1), theta=theta, phi=phi),
            ScheduleEvent("delay", (0,), length=l_x),
            ScheduleEvent("bs", (0, 1), theta=theta, phi=phi),
            ScheduleEvent("delay", (1,), length=l_x),
        ]
        return layout, events

    # general variant: window the interior odd edges and the wrap edge
    d = [Fraction(0), Fraction(0)]
    events = [ScheduleEvent("bs", (0, 1), theta=theta, phi=phi)]
    events.append(ScheduleEvent("delay", (0,), length=l_x))
    d[0] += l_x
    interior = []
    for x in range(2, N_x, 2):
        t = (assignment[x][1] + d[0]) % period
        interior.append(_window(t, l_x, pphi(x, x - 1)))
    events.append(
        ScheduleEvent("bs", (0, 1), theta=theta, phi=phi,
                      windows=tuple(sorted(interior)))
    )
    events.append(ScheduleEvent("delay", (1,), length=Fraction(N_x, 2) * l_x))
    d[1] += Fraction(N_x, 2) * l_x
    t_wrap = (assignment[0][1] + d[0]) % period
    events.append(
        ScheduleEvent("bs", (0, 1), theta=theta, phi=phi,
                      windows=(_window(t_wrap, l_x, pphi(0, N_x - 1)),))
    )
    events.append(
        ScheduleEvent("delay", (0,), length=(Fraction(N_x, 2) - 1) * l_x)
    )
    return layout, events


def compile_2d(N_x: int, N_y: int, l_x, l_y, theta: float, phases=None):
    """Schedule for one Trotter hopping step of a periodic square lattice.

    phases maps oriented site pairs (src, dst) to the hop phase arg(w); a
    missing orientation is looked up reversed with the sign flipped.  Every
    beamsplitter event carries per-window phases since the gauge varies
    from edge to edge.
    """
    if N_x % 2 or N_y % 2:
        raise ValueError("2D compilation needs even N_x and N_y")
    l_x = Fraction(l_x)
    l_y = Fraction(l_y)
    if not l_y > Fraction(N_x, 2) * l_x:
        raise ValueError("cluster pitch l_y must exceed the cluster width")
    assignment = {}
    for y in range(N_y):
        for x in range(N_x):
            site = x + N_x * y
            wg = (y % 2) * 2 + (x % 2)
            assignment[site] = (wg, -(y // 2) * l_y - (x // 2) * l_x)
    period = Fraction(N_y, 2) * l_y
    layout = TimeBinLayout(
        n_waveguides=4, bin_assignment=assignment, period=period,
        l_x=l_x, l_y=l_y,
    )

    def site(x, y):
        return (x % N_x) + N_x * (y % N_y)

    def pphi(a, b):
        return _pair_phase(phases, a, b, math.pi)

    events = []
    delays = [Fraction(0)] * 4

    def emit_windowed(wg_a, wg_b, pairs):
        wins = []
        for sa, sb in pairs:
            ta = (layout.bin_assignment[sa][1] + delays[wg_a]) % period
            wins.append(_window(ta, l_x, pphi(sa, sb)))
        events.append(
            ScheduleEvent("bs", (wg_a, wg_b), theta=theta,
                          windows=tuple(sorted(wins)))
        )

    def add_delay(wg, length):
        events.append(ScheduleEvent("delay", (wg,), length=length))
        delays[wg] += length

    # x-direction layers on both waveguide pairs (fine bins)
    for wg_a, wg_b, ypar in ((0, 1, 0), (2, 3, 1)):
        pairs = [
            (site(x, y), site(x + 1, y))
            for y in range(ypar, N_y, 2) for x in range(0, N_x, 2)
        ]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(0, l_x)
    add_delay(2, l_x)
    for wg_a, wg_b, ypar in ((0, 1, 0), (2, 3, 1)):
        pairs = [
            (site(x, y), site(x - 1, y))
            for y in range(ypar, N_y, 2) for x in range(2, N_x, 2)
        ]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(1, Fraction(N_x, 2) * l_x)
    add_delay(3, Fraction(N_x, 2) * l_x)
    for wg_a, wg_b, ypar in ((0, 1, 0), (2, 3, 1)):
        pairs = [(site(0, y), site(N_x - 1, y)) for y in range(ypar, N_y, 2)]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(0, (Fraction(N_x, 2) - 1) * l_x)
    add_delay(2, (Fraction(N_x, 2) - 1) * l_x)

    # y-direction layers on the coarse clusters
    for wg_a, wg_b, xpar in ((0, 2, 0), (1, 3, 1)):
        pairs = [
            (site(x, y), site(x, y + 1))
            for x in range(xpar, N_x, 2) for y in range(0, N_y, 2)
        ]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(0, l_y)
    add_delay(1, l_y)
    for wg_a, wg_b, xpar in ((0, 2, 0), (1, 3, 1)):
        pairs = [
            (site(x, y), site(x, y - 1))
            for x in range(xpar, N_x, 2) for y in range(2, N_y, 2)
        ]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(2, Fraction(N_y, 2) * l_y)
    add_delay(3, Fraction(N_y, 2) * l_y)
    for wg_a, wg_b, xpar in ((0, 2, 0), (1, 3, 1)):
        pairs = [(site(x, 0), site(x, N_y - 1)) for x in range(xpar, N_x, 2)]
        emit_windowed(wg_a, wg_b, pairs)
    add_delay(0, (Fraction(N_y, 2) - 1) * l_y)
    add_delay(1, (Fraction(N_y, 2) - 1) * l_y)
    return layout, events


def _in_window(t: Fraction, window, period) -> bool:
    lo, hi, _ = window
    if period is None:
        return lo <= t <= hi
    return (t - lo) % period <= (hi - lo)


def simulate_schedule(layout: TimeBinLayout, events, basis: FockBasis):
    """Re-enact a schedule on the encoded modes.

    Returns (SectorOperator, firing log); each firing records
    (site_a, site_b, time, theta, phi) in the order the coincidences reach
    the element.  Bins of one waveguide arriving simultaneously at an
    element is a compilation bug and raises ScheduleError.
    """
    delays = [Fraction(0)] * layout.n_waveguides
    u = np.eye(basis.dim, dtype=complex)
    firings = []
    for ev in events:
        if ev.kind == "delay":
            delays[ev.waveguides[0]] += Fraction(ev.length)
        elif ev.kind == "phase":
            for s in layout.sites_on(ev.waveguides[0]):
                u = number_phase_gate(basis, s, ev.table).entries @ u
        elif ev.kind == "bs":
            wg_a, wg_b = ev.waveguides
            for sa, sb, t in _coincidences(layout, delays, wg_a, wg_b):
                if ev.windows is None:
                    theta, phi = ev.theta, ev.phi
                else:
                    hit = [w for w in ev.windows
                           if _in_window(t, w, layout.period)]
                    if not hit:
                        continue
                    theta, phi = ev.theta, hit[0][2]
                u = beamsplitter_gate(basis, sa, sb, theta, phi).entries @ u
                firings.append((sa, sb, t, theta, phi))
        else:
            raise ScheduleError(f"unknown event kind {ev.kind!r}")
    return SectorOperator(basis, _tocsr(u)), firings


def _tocsr(dense):
    import scipy.sparse as sp

    return sp.csr_matrix(dense)


def certify_equivalence(schedule_unitary: np.ndarray,
                        abstract_unitary: np.ndarray,
                        tol: float = 1e-10):
    """(equal, distance, global_phase): distance is the max-norm difference
    after aligning the global phase via the trace inner product."""
    us = np.asarray(schedule_unitary, dtype=complex)
    ua = np.asarray(abstract_unitary, dtype=complex)
    if us.shape != ua.shape:
        raise ValueError("unitary dimensions differ")
    tr = np.trace(ua.conj().T @ us)
    if abs(tr) > 1e-12:
        c = tr / abs(tr)
    else:
        k = np.unravel_index(np.argmax(np.abs(ua)), ua.shape)
        ratio = us[k] / ua[k] if ua[k] != 0 else 1.0
        c = ratio / abs(ratio) if ratio != 0 else 1.0
    distance = float(np.max(np.abs(us - c * ua)))
    return distance < tol, distance, complex(c)


# --- serialization ----------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize_schedule(layout: TimeBinLayout, events) -> str:
    """Line-oriented text form: layout in comments, one event per line."""
    lines = [
        f"# waveguides {layout.n_waveguides}",
        f"# period {layout.period if layout.period is not None else '-'}",
    ]
    for s in sorted(layout.bin_assignment):
        wg, t = layout.bin_assignment[s]
        lines.append(f"# bin {s} {wg} {t}")
    for ev in events:
        if ev.kind == "delay":
            lines.append(f"DELAY {ev.waveguides[0]} {Fraction(ev.length)}")
        elif ev.kind == "bs":
            head = (
                f"BS {ev.waveguides[0]} {ev.waveguides[1]} "
                f"{_fmt(ev.theta)} {_fmt(ev.phi)}"
            )
            if ev.windows is not None:
                wins = " ".join(
                    f"{lo}:{hi}:{_fmt(p)}" for lo, hi, p in ev.windows
                )
                head = f"{head} {wins}"
            lines.append(head)
        elif ev.kind == "phase":
            table = " ".join(_fmt(v) for v in ev.table)
            lines.append(f"PHASE {ev.waveguides[0]} {table}")
    return "\n".join(lines) + "\n"


def parse_schedule(text: str):
    """Inverse of serialize_schedule."""
    n_wg = None
    period = None
    assignment = {}
    events = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if line.startswith("#"):
            if parts[1] == "waveguides":
                n_wg = int(parts[2])
            elif parts[1] == "period":
                period = None if parts[2] == "-" else Fraction(parts[2])
            elif parts[1] == "bin":
                assignment[int(parts[2])] = (int(parts[3]), Fraction(parts[4]))
            continue
        if parts[0] == "DELAY":
            events.append(
                ScheduleEvent("delay", (int(parts[1]),),
                              length=Fraction(parts[2]))
            )
        elif parts[0] == "BS":
            wg = (int(parts[1]), int(parts[2]))
            theta, phi = float(parts[3]), float(parts[4])
            wins = None
            if len(parts) > 5:
                wins = tuple(
                    (Fraction(w.split(":")[0]), Fraction(w.split(":")[1]),
                     float(w.split(":")[2]))
                    for w in parts[5:]
                )
            events.append(
                ScheduleEvent("bs", wg, theta=theta, phi=phi, windows=wins)
            )
        elif parts[0] == "PHASE":
            events.append(
                ScheduleEvent("phase", (int(parts[1]),),
                              table=tuple(float(v) for v in parts[2:]))
            )
        else:
            raise ScheduleError(f"cannot parse schedule line: {line}")
    layout = TimeBinLayout(
        n_waveguides=n_wg, bin_assignment=assignment, period=period
    )
    return layout, events
