"""Verification drivers: certified robustness over perturbation balls and
minimum-perturbation trust queries, their 2M-subproblem decomposition, batch
sweeps over operating conditions, and report assembly."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bnb import BnbOptions, BnbStatus, MilpResult, solve_milp
from .bounds import (
    InputBox,
    classify_neurons,
    empirical_stability,
    lp_tighten,
    propagate_bounds,
)
from .errors import DimensionMismatch, InvalidArg, InvalidValue, SolverFailure
from .milp import default_delta_cap, encode_network, set_robustness_objective, set_trust_problem
from .nnmodel import FoldedNetwork, forward
from .simplex import SimplexOptions

# automatic LP tightening kicks in above this many unstable neurons
_TIGHTEN_AUTO_THRESHOLD = 32


@dataclass(frozen=True)
class VerificationQuery:
    """One operating condition: reference input, reference output, and the
    perturbation model (ball radii for robustness, target size for trust)."""

    z_ref: np.ndarray
    x_ref: np.ndarray
    alpha: np.ndarray | None = None
    beta: float | None = None
    scale: np.ndarray | None = None
    clip_to_domain: bool = True
    delta_cap: float | None = None
    query_id: str = ""

    def __post_init__(self):
        z_ref = np.atleast_1d(np.asarray(self.z_ref, dtype=float))
        x_ref = np.atleast_1d(np.asarray(self.x_ref, dtype=float))
        if np.any(z_ref < -1e-12) or np.any(z_ref > 1.0 + 1e-12):
            raise InvalidValue("z_ref must lie in the unit box")
        object.__setattr__(self, "z_ref", z_ref)
        object.__setattr__(self, "x_ref", x_ref)
        if self.alpha is not None:
            alpha = np.broadcast_to(
                np.asarray(self.alpha, dtype=float), z_ref.shape
            ).copy()
            if np.any(alpha < 0):
                raise InvalidValue("alpha must be nonnegative")
            object.__setattr__(self, "alpha", alpha)
        if self.beta is not None and not self.beta > 0:
            raise InvalidValue("beta must be positive")
        if self.scale is not None:
            scale = np.broadcast_to(np.asarray(self.scale, dtype=float), z_ref.shape).copy()
            if np.any(scale <= 0):
                raise InvalidValue("scale must be positive")
            object.__setattr__(self, "scale", scale)
        if self.delta_cap is not None and not self.delta_cap > 0:
            raise InvalidValue("delta_cap must be positive")

    def effective_scale(self) -> np.ndarray:
        return self.scale if self.scale is not None else np.ones_like(self.z_ref)

    def to_dict(self) -> dict:
        return {
            "z_ref": self.z_ref.tolist(),
            "x_ref": self.x_ref.tolist(),
            "alpha": None if self.alpha is None else self.alpha.tolist(),
            "beta": self.beta,
            "scale": None if self.scale is None else self.scale.tolist(),
            "clip_to_domain": self.clip_to_domain,
            "delta_cap": self.delta_cap,
            "query_id": self.query_id,
        }


def query_hash(q: VerificationQuery) -> str:
    text = json.dumps(q.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class VerifyOptions:
    bnb: BnbOptions = field(default_factory=BnbOptions)
    jobs: int = 1
    tighten: bool | None = None  # None = only when many neurons are unstable
    use_model_reference: bool = False
    # Empirically observed stability fixing. Fixing from samples is NOT a
    # certificate: results computed with it are marked uncertified.
    unsafe_empirical_fix_samples: np.ndarray | None = None

    def __post_init__(self):
        if self.jobs < 1:
            raise InvalidArg("jobs must be >= 1")


@dataclass
class OutputRobustness:
    name: str
    dev_plus: float | None
    dev_minus: float | None
    R: float | None
    witness: np.ndarray | None
    status: str  # "certified" | "gap_limit" | "uncertified"
    gap: float


@dataclass
class RobustnessResult:
    query: VerificationQuery
    box: InputBox
    per_output: list[OutputRobustness]
    certified: bool
    certified_fixing: bool
    stability_counts: dict
    wall_time: float

    @property
    def R(self) -> np.ndarray:
        return np.array([np.nan if o.R is None else o.R for o in self.per_output])


@dataclass
class OutputTrust:
    name: str
    found: bool
    delta_min: float | None
    sign: int | None
    witness: np.ndarray | None
    delta_cap: float
    status: str  # "certified" | "gap_limit" | "uncertified"
    gap: float


@dataclass
class TrustResult:
    query: VerificationQuery
    per_output: list[OutputTrust]
    delta_min: float | None  # min over found outputs
    certified: bool
    certified_fixing: bool
    stability_counts: dict
    wall_time: float


def _prepare_base(net, box, opts):
    lb = propagate_bounds(net, box)
    if opts.unsafe_empirical_fix_samples is not None:
        sm = empirical_stability(net, opts.unsafe_empirical_fix_samples)
        certified_fixing = False
    else:
        sm = classify_neurons(lb)
        do_tighten = (
            opts.tighten
            if opts.tighten is not None
            else sm.num_unstable > _TIGHTEN_AUTO_THRESHOLD
        )
        if do_tighten:
            lb = lp_tighten(net, box, lb, opts.bnb.lp_options)
            sm = classify_neurons(lb)
        certified_fixing = True
    return encode_network(net, lb, sm, box), sm, certified_fixing


def _dispatch(problems, opts) -> list[MilpResult | Exception]:
    def run(p):
        try:
            return solve_milp(p, opts.bnb)
        except SolverFailure as e:  # numerical breakdown included
            return e

    if opts.jobs > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as ex:
            return list(ex.map(run, problems))
    return [run(p) for p in problems]


def _extract_z(p, point) -> np.ndarray:
    n0 = p.network.input_dim
    return np.array([point[p.var_roles[("input", j)]] for j in range(n0)])


def _status_of(*results) -> tuple[str, float]:
    gap = 0.0
    status = "certified"
    for r in results:
        if isinstance(r, Exception) or r is None:
            return "uncertified", float("inf")
        if r.status in (BnbStatus.GAP_LIMIT, BnbStatus.LIMIT):
            status = "gap_limit"
            gap = max(gap, r.gap)
        elif r.status is BnbStatus.INFEASIBLE:
            return "uncertified", float("inf")
    return status, gap


def _output_names(net: FoldedNetwork) -> list[str]:
    return list(net.output_names)


def robustness(
    net: FoldedNetwork, q: VerificationQuery, opts: VerifyOptions | None = None
) -> RobustnessResult:
    """Certified worst-case deviation of each output over the perturbation
    ball around the reference input, via one max and one min problem per
    output."""
    opts = opts or VerifyOptions()
    if q.alpha is None:
        raise InvalidArg("robustness needs alpha")
    if q.z_ref.shape[0] != net.input_dim:
        raise DimensionMismatch("z_ref length != network input dimension")
    if q.x_ref.shape[0] != net.num_outputs:
        raise DimensionMismatch("x_ref length != network output count")
    x_ref = forward(net, q.z_ref) if opts.use_model_reference else q.x_ref
    box = InputBox.ball(q.z_ref, q.alpha, clip=q.clip_to_domain)
    base, sm, certified_fixing = _prepare_base(net, box, opts)

    problems = []
    for i in range(net.num_outputs):
        for sign in (1, -1):
            problems.append(set_robustness_objective(base, i, sign, float(x_ref[i])))
    results = _dispatch(problems, opts)

    names = _output_names(net)
    per_output = []
    wall = 0.0
    for i in range(net.num_outputs):
        plus, minus = results[2 * i], results[2 * i + 1]
        status, gap = _status_of(plus, minus)
        dev_plus = dev_minus = R = None
        witness = None
        for r in (plus, minus):
            if isinstance(r, MilpResult):
                wall += r.wall_time
        if status != "uncertified" and plus.found and minus.found:
            dev_plus = plus.incumbent_value
            dev_minus = -minus.incumbent_value
            R = max(dev_plus, abs(dev_minus))
            src = plus if dev_plus >= abs(dev_minus) else minus
            witness = _extract_z(problems[2 * i], src.incumbent_point)
        elif status != "uncertified":
            status = "uncertified"  # limit hit before any feasible point
        per_output.append(
            OutputRobustness(
                name=names[i],
                dev_plus=dev_plus,
                dev_minus=dev_minus,
                R=R,
                witness=witness,
                status=status,
                gap=gap,
            )
        )
    return RobustnessResult(
        query=q,
        box=box,
        per_output=per_output,
        certified=certified_fixing and all(o.status == "certified" for o in per_output),
        certified_fixing=certified_fixing,
        stability_counts=sm.counts(),
        wall_time=wall,
    )


def trustworthiness(
    net: FoldedNetwork, q: VerificationQuery, opts: VerifyOptions | None = None
) -> TrustResult:
    """Smallest scaled perturbation radius that moves each output at least
    beta away from its reference, searched over the full unit box."""
    opts = opts or VerifyOptions()
    if q.beta is None:
        raise InvalidArg("trustworthiness needs beta")
    if q.z_ref.shape[0] != net.input_dim:
        raise DimensionMismatch("z_ref length != network input dimension")
    if q.x_ref.shape[0] != net.num_outputs:
        raise DimensionMismatch("x_ref length != network output count")
    x_ref = forward(net, q.z_ref) if opts.use_model_reference else q.x_ref
    scale = q.effective_scale()
    cap = q.delta_cap if q.delta_cap is not None else default_delta_cap(q.z_ref, scale)
    box = InputBox.unit(net.input_dim)
    base, sm, certified_fixing = _prepare_base(net, box, opts)

    problems = []
    for i in range(net.num_outputs):
        for sign in (1, -1):
            problems.append(
                set_trust_problem(base, i, sign, q.beta, float(x_ref[i]), q.z_ref, scale, cap)
            )
    results = _dispatch(problems, opts)

    names = _output_names(net)
    per_output = []
    wall = 0.0
    for i in range(net.num_outputs):
        pair = results[2 * i : 2 * i + 2]
        for r in pair:
            if isinstance(r, MilpResult):
                wall += r.wall_time
        if any(isinstance(r, Exception) for r in pair):
            per_output.append(
                OutputTrust(names[i], False, None, None, None, cap, "uncertified", float("inf"))
            )
            continue
        found = [
            (r, s)
            for r, s in zip(pair, (1, -1))
            if r.found and r.status in (BnbStatus.CERTIFIED, BnbStatus.GAP_LIMIT)
        ]
        if not found:
            if all(r.status is BnbStatus.INFEASIBLE for r in pair):
                # certified: no input within delta_cap moves this output by beta
                per_output.append(
                    OutputTrust(names[i], False, None, None, None, cap, "certified", 0.0)
                )
            else:
                per_output.append(
                    OutputTrust(names[i], False, None, None, None, cap, "uncertified", float("inf"))
                )
            continue
        best, best_sign = min(found, key=lambda rs: rs[0].incumbent_value)
        idx = 2 * i + (0 if best_sign == 1 else 1)
        status = "certified" if all(
            r.status in (BnbStatus.CERTIFIED, BnbStatus.INFEASIBLE) for r in pair
        ) else "gap_limit"
        gap = max((r.gap for r in pair if r.status is BnbStatus.GAP_LIMIT), default=0.0)
        per_output.append(
            OutputTrust(
                name=names[i],
                found=True,
                delta_min=float(best.incumbent_value),
                sign=best_sign,
                witness=_extract_z(problems[idx], best.incumbent_point),
                delta_cap=cap,
                status=status,
                gap=gap,
            )
        )
    found_vals = [o.delta_min for o in per_output if o.found]
    return TrustResult(
        query=q,
        per_output=per_output,
        delta_min=min(found_vals) if found_vals else None,
        certified=certified_fixing and all(o.status == "certified" for o in per_output),
        certified_fixing=certified_fixing,
        stability_counts=sm.counts(),
        wall_time=wall,
    )


@dataclass
class BatchRobustness:
    per_query: list[RobustnessResult | None]
    errors: list[str | None]
    aggregate_R: np.ndarray
    output_names: list[str]


def robustness_batch(
    net: FoldedNetwork, queries: list[VerificationQuery], opts: VerifyOptions | None = None
) -> BatchRobustness:
    """Robustness across operating conditions; the aggregate is the per-output
    elementwise max of R over the queries that completed."""
    if not queries:
        raise InvalidArg("need at least one query")
    opts = opts or VerifyOptions()
    per_query: list[RobustnessResult | None] = []
    errors: list[str | None] = []
    for q in queries:
        try:
            per_query.append(robustness(net, q, opts))
            errors.append(None)
        except (InvalidArg, InvalidValue, DimensionMismatch, SolverFailure) as e:
            per_query.append(None)
            errors.append(f"{type(e).__name__}: {e}")
    agg = np.full(net.num_outputs, -np.inf)
    for r in per_query:
        if r is None:
            continue
        agg = np.fmax(agg, r.R)  # fmax ignores NaN from uncertified outputs
    return BatchRobustness(
        per_query=per_query,
        errors=errors,
        aggregate_R=agg,
        output_names=_output_names(net),
    )


@dataclass
class Comparison:
    R: np.ndarray
    T: np.ndarray
    diff: np.ndarray  # R - T per output
    sample_query: np.ndarray  # index of the matched query per sample
    flagged: np.ndarray  # samples outside every query's ball
    samples_used: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def compare_robustness_vs_test(
    batch: BatchRobustness, net: FoldedNetwork, inputs, targets, bins: int = 10
) -> Comparison:
    """Certified-vs-observed comparison: T_i is the max test error over
    samples matched to a query ball; samples inside no ball are flagged and
    excluded from the guarantee."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise DimensionMismatch("test inputs have wrong width")
    if targets.shape != (inputs.shape[0], net.num_outputs):
        raise DimensionMismatch("test targets have wrong shape")
    queries = [r.query for r in batch.per_query if r is not None]
    if not queries:
        raise InvalidArg("no completed queries to compare against")

    S = inputs.shape[0]
    sample_query = np.zeros(S, dtype=int)
    flagged = np.zeros(S, dtype=bool)
    for s in range(S):
        best_d, best_q = np.inf, 0
        for qi, q in enumerate(queries):
            dz = np.abs(inputs[s] - q.z_ref)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(q.alpha > 0, dz / q.alpha, np.where(dz <= 1e-12, 0.0, np.inf))
            d = float(np.max(ratio))
            if d < best_d:
                best_d, best_q = d, qi
        sample_query[s] = best_q
        flagged[s] = best_d > 1.0 + 1e-9
    out = forward(net, inputs)
    T = np.zeros(net.num_outputs)
    used = 0
    for s in range(S):
        if flagged[s]:
            continue
        used += 1
        err = np.abs(out[s] - queries[sample_query[s]].x_ref)
        T = np.maximum(T, err)
    diff = batch.aggregate_R - T
    finite = diff[np.isfinite(diff)]
    counts, edges = np.histogram(finite, bins=bins) if finite.size else (np.zeros(bins, dtype=int), np.linspace(0, 1, bins + 1))
    return Comparison(
        R=batch.aggregate_R.copy(),
        T=T,
        diff=diff,
        sample_query=sample_query,
        flagged=flagged,
        samples_used=used,
        hist_edges=edges,
        hist_counts=counts,
    )


# ---------------------------------------------------------------------------
# report assembly

def _provenance(network_hash: str, q: VerificationQuery | None, opts: VerifyOptions) -> dict:
    lp_opts = opts.bnb.lp_options or SimplexOptions()
    return {
        "network_sha256": network_hash,
        "query_sha256": query_hash(q) if q is not None else None,
        "tolerances": lp_opts.as_dict(),
        "solver": opts.bnb.as_dict(),
    }


def robustness_report(
    result: RobustnessResult, network_hash: str = "", opts: VerifyOptions | None = None
) -> dict:
    opts = opts or VerifyOptions()
    return {
        "kind": "robustness",
        "query_id": result.query.query_id,
        "query": result.query.to_dict(),
        "per_output": [
            {
                "name": o.name,
                "dev_plus": o.dev_plus,
                "dev_minus": o.dev_minus,
                "R": o.R,
                "status": o.status,
                "gap": None if not np.isfinite(o.gap) else o.gap,
                "witness": None if o.witness is None else o.witness.tolist(),
            }
            for o in result.per_output
        ],
        "aggregate": {
            "R_max": max((o.R for o in result.per_output if o.R is not None), default=None),
            "certified": result.certified,
            "certified_fixing": result.certified_fixing,
            "stability": result.stability_counts,
        },
        "provenance": _provenance(network_hash, result.query, opts),
    }


def trust_report(
    result: TrustResult, network_hash: str = "", opts: VerifyOptions | None = None
) -> dict:
    opts = opts or VerifyOptions()
    return {
        "kind": "trust",
        "query_id": result.query.query_id,
        "query": result.query.to_dict(),
        "per_output": [
            {
                "name": o.name,
                "found": o.found,
                "delta_min": o.delta_min,
                "sign": o.sign,
                "delta_cap": o.delta_cap,
                "status": o.status,
                "gap": None if not np.isfinite(o.gap) else o.gap,
                "witness": None if o.witness is None else o.witness.tolist(),
            }
            for o in result.per_output
        ],
        "aggregate": {
            "delta_min": result.delta_min,
            "certified": result.certified,
            "certified_fixing": result.certified_fixing,
            "stability": result.stability_counts,
        },
        "provenance": _provenance(network_hash, result.query, opts),
    }


def batch_report(
    batch: BatchRobustness, network_hash: str = "", opts: VerifyOptions | None = None
) -> dict:
    opts = opts or VerifyOptions()
    return {
        "kind": "robustness_batch",
        "queries": [
            {"error": err} if r is None else robustness_report(r, network_hash, opts)
            for r, err in zip(batch.per_query, batch.errors)
        ],
        "aggregate": {
            "output_names": batch.output_names,
            "R": [None if not np.isfinite(v) else v for v in batch.aggregate_R],
        },
        "provenance": _provenance(network_hash, None, opts),
    }


def timing_sidecar(results) -> dict:
    """Wall-clock times kept apart from the reports so byte-for-byte report
    comparisons stay meaningful across runs."""
    times = [float(r.wall_time) for r in results]
    return {"per_result_seconds": times, "total_seconds": float(sum(times))}


def delta_percent(
    delta: float, z_ref, scale, norm_lo, norm_hi
) -> float:
    """Radius as percent of the physical reference magnitude, worst case over
    input channels. Channels with a zero reference fall back to percent of
    the channel's physical range."""
    z_ref = np.asarray(z_ref, dtype=float)
    scale = np.asarray(scale, dtype=float)
    span = np.asarray(norm_hi, dtype=float) - np.asarray(norm_lo, dtype=float)
    phys_ref = np.asarray(norm_lo, dtype=float) + z_ref * span
    denom = np.where(np.abs(phys_ref) > 1e-12, np.abs(phys_ref), span)
    return float(np.max(100.0 * delta * scale * span / denom))


def trust_table_csv(results: list[TrustResult], norm_lo, norm_hi) -> str:
    """Per-output minimum perturbation as percent of the reference magnitude,
    one row per (query, output); "not_found" marks outputs that cannot be
    moved by beta within the radius cap."""
    lines = ["query_id,output_name,delta_min_percent"]
    for res in results:
        scale = res.query.effective_scale()
        for o in res.per_output:
            if o.found:
                pct = delta_percent(o.delta_min, res.query.z_ref, scale, norm_lo, norm_hi)
                lines.append(f"{res.query.query_id},{o.name},{pct!r}")
            else:
                lines.append(f"{res.query.query_id},{o.name},not_found")
    return "\n".join(lines) + "\n"


def histogram_csv(edges, counts) -> str:
    lines = ["bin_lo,bin_hi,count"]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"{float(lo)!r},{float(hi)!r},{int(c)}")
    return "\n".join(lines) + "\n"
