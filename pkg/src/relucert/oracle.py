"""Independent ground-truth engines for cross-checking the exact solver.

For every assignment of the unstable ReLUs the network is affine in the
input, so the optimum restricted to that activation pattern is a small LP in
the input variables alone. Enumerating all patterns is exponential but exact,
and deliberately shares no code path with the MILP encoding or the simplex
engine: constraints are built by affine composition and solved with HiGHS.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .bounds import InputBox, Stability, classify_neurons, propagate_bounds
from .errors import InvalidArg, SolverFailure, TooManyUnstable
from .nnmodel import FoldedNetwork, forward


@dataclass(frozen=True)
class RobustnessSpec:
    """Maximize sign*(x_output - x_ref) over the box."""

    output: int
    sign: int
    x_ref: float

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise InvalidArg("sign must be +1 or -1")


@dataclass(frozen=True)
class TrustSpec:
    """Minimize the scaled ball radius subject to the output deviating by
    at least beta in the given direction."""

    output: int
    sign: int
    beta: float
    x_ref: float
    z_ref: tuple
    scale: tuple
    delta_cap: float

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise InvalidArg("sign must be +1 or -1")
        if not self.beta > 0 or not self.delta_cap > 0:
            raise InvalidArg("beta and delta_cap must be positive")
        object.__setattr__(self, "z_ref", tuple(float(v) for v in self.z_ref))
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        if any(s <= 0 for s in self.scale):
            raise InvalidArg("scale must be positive elementwise")


@dataclass
class OracleResult:
    value: float | None
    point: np.ndarray | None
    delta: float | None
    status: str  # "optimal" | "infeasible"
    patterns_total: int
    patterns_feasible: int


@dataclass
class SampleBound:
    value: float | None
    point: np.ndarray | None
    delta: float | None
    n_points: int


def _solve_pattern_lp(c, rows_a, rows_b, lo, hi):
    a_ub = np.array(rows_a) if rows_a else None
    b_ub = np.array(rows_b) if rows_b else None
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=list(zip(lo, hi)), method="highs")
    if res.status == 0:
        return res
    if res.status == 2:
        return None
    raise SolverFailure(f"pattern LP ended with status {res.status}: {res.message}")


def pattern_enumerate_opt(
    net: FoldedNetwork,
    box: InputBox,
    spec: RobustnessSpec | TrustSpec,
    max_unstable: int = 16,
) -> OracleResult:
    """Exact optimum by exhausting ReLU phase patterns of unstable neurons.

    Certifiably stable neurons keep their phase; each remaining pattern adds
    half-space rows locating the input in the pattern's region and reduces
    the network to one affine map, solved as an LP over the inputs.
    """
    lb = propagate_bounds(net, box)
    sm = classify_neurons(lb)
    unstable = [
        (k, t)
        for k in range(net.num_hidden)
        for t in range(net.layers[k].width)
        if sm.layers[k][t] == Stability.UNSTABLE
    ]
    if len(unstable) > max_unstable:
        raise TooManyUnstable(
            f"{len(unstable)} unstable neurons exceed the enumeration cap {max_unstable}"
        )
    n0 = net.input_dim
    trust = isinstance(spec, TrustSpec)
    if trust:
        z_ref = np.asarray(spec.z_ref)
        scale = np.asarray(spec.scale)
        nv = n0 + 1
        lo = np.append(box.lo, 0.0)
        hi = np.append(box.hi, spec.delta_cap)
        c = np.zeros(nv)
        c[n0] = 1.0
    else:
        nv = n0
        lo, hi = box.lo, box.hi
        c = None  # set per pattern

    best: OracleResult | None = None
    total = feasible = 0
    for bits in itertools.product((0, 1), repeat=len(unstable)):
        total += 1
        phase = dict(zip(unstable, bits))
        G = np.eye(n0)
        g = np.zeros(n0)
        rows_a: list[np.ndarray] = []
        rows_b: list[float] = []
        for k in range(net.num_hidden):
            layer = net.layers[k]
            P = layer.A @ G
            p = layer.A @ g + layer.c
            mask = np.zeros(layer.width)
            for t in range(layer.width):
                s = Stability(sm.layers[k][t])
                on = (
                    s is Stability.ACTIVE
                    if s is not Stability.UNSTABLE
                    else bool(phase[(k, t)])
                )
                mask[t] = 1.0 if on else 0.0
                if s is Stability.UNSTABLE:
                    row = np.zeros(nv)
                    # active phase needs pre >= 0; dead phase needs pre <= 0
                    row[:n0] = -P[t] if on else P[t]
                    rows_a.append(row)
                    rows_b.append(float(p[t]) if on else float(-p[t]))
            G = mask[:, None] * P
            g = mask * p
        out = net.layers[-1]
        F = out.A @ G
        f = out.A @ g + out.c
        i = spec.output
        if trust:
            row = np.zeros(nv)
            row[:n0] = -spec.sign * F[i]
            rows = rows_a + [row]
            rhs = rows_b + [float(spec.sign * (f[i] - spec.x_ref) - spec.beta)]
            for j in range(n0):
                r1 = np.zeros(nv)
                r1[j], r1[n0] = 1.0, -scale[j]
                r2 = np.zeros(nv)
                r2[j], r2[n0] = -1.0, -scale[j]
                rows += [r1, r2]
                rhs += [float(z_ref[j]), float(-z_ref[j])]
            res = _solve_pattern_lp(c, rows, rhs, lo, hi)
            if res is None:
                continue
            feasible += 1
            val = float(res.x[n0])
            if best is None or val < best.value:
                best = OracleResult(val, res.x[:n0].copy(), val, "optimal", 0, 0)
        else:
            obj = np.zeros(nv)
            obj[:n0] = -spec.sign * F[i]  # linprog minimizes
            res = _solve_pattern_lp(obj, rows_a, rows_b, lo, hi)
            if res is None:
                continue
            feasible += 1
            val = float(-res.fun + spec.sign * (f[i] - spec.x_ref))
            if best is None or val > best.value:
                best = OracleResult(val, res.x[:n0].copy(), None, "optimal", 0, 0)
    if best is None:
        return OracleResult(None, None, None, "infeasible", total, feasible)
    best.patterns_total = total
    best.patterns_feasible = feasible
    return best


def sample_bound(
    net: FoldedNetwork,
    box: InputBox,
    spec: RobustnessSpec | TrustSpec,
    n: int,
    seed: int,
) -> SampleBound:
    """One-sided bound from forward evaluation at quasi-random points plus
    all box corners in low dimension. Every reported value is achieved by an
    actual input, so it can only under-claim, never over-claim."""
    if n < 1:
        raise InvalidArg("need at least one sample")
    n0 = net.input_dim
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # Sobol balance warning for non-2^k n
        pts = qmc.Sobol(d=n0, scramble=True, seed=seed).random(n)
    pts = box.lo + pts * (box.hi - box.lo)
    if n0 <= 12:
        corners = np.array(list(itertools.product(*zip(box.lo, box.hi))))
        pts = np.vstack([pts, corners])
    X = forward(net, pts)
    dev = spec.sign * (X[:, spec.output] - spec.x_ref)
    if isinstance(spec, TrustSpec):
        z_ref = np.asarray(spec.z_ref)
        scale = np.asarray(spec.scale)
        deltas = np.max(np.abs(pts - z_ref) / scale, axis=1)
        ok = (dev >= spec.beta) & (deltas <= spec.delta_cap)
        if not np.any(ok):
            return SampleBound(None, None, None, pts.shape[0])
        j = int(np.flatnonzero(ok)[np.argmin(deltas[ok])])
        return SampleBound(float(deltas[j]), pts[j].copy(), float(deltas[j]), pts.shape[0])
    j = int(np.argmax(dev))
    return SampleBound(float(dev[j]), pts[j].copy(), None, pts.shape[0])
