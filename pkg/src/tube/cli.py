"""Command-line driver: each subcommand emits CSV or JSON records.

Every record carries the command name, the seed and the package version,
and a rerun with the same arguments writes byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from collections import Counter
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .bridge import (
    BridgeRequest,
    Method,
    RejectionCapExceeded,
    ensemble_stats,
    sample_bridges,
    scaling_fit,
)
from .core import ORIGIN, Direction, apply_move, enumerate_moves, hardy_ramanujan, partition_count, partitions
from .exact import (
    BridgeUnreachable,
    SeriesLengthError,
    StateSpaceTooLarge,
    StationaryError,
    auto_truncation,
    bridge_marginal,
    bridge_truncation,
    duality_check,
    enumerate_space,
    h_monotonicity_violations,
    return_probability_with_defect,
    square_sum_check,
    truncated_stationary,
)
from .measures import alpha, c_of_p, theorem_constants
from .simulate import (
    RngStream,
    Trajectory,
    coupled_pair,
    gillespie,
    independent_walks,
    order_violations,
    origin_time_batches,
    stirred_positions,
)

log = logging.getLogger("tube")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# substream namespaces so that subcommands never share random numbers
_STREAM = {
    "bridge": 1,
    "scaling": 2,
    "stationary": 3,
    "coupling-check": 4,
    "sampler-check": 5,
    "negative-dependence": 6,
}


class UsageError(ValueError):
    pass


# -- output -------------------------------------------------------------------


def _num(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return repr(v)
    s = format(v, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _num(float(v))
    return str(v)


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return _num(v) if math.isfinite(v) else "null"
    return json.dumps(str(v))


def render(records: Sequence[dict], fmt: str = "csv", fields: Sequence[str] | None = None) -> str:
    if fields is None:
        fields = list(records[0].keys()) if records else []
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(fields)
        for r in records:
            w.writerow([_cell(r.get(k)) for k in fields])
        return buf.getvalue()
    if fmt == "json":
        rows = [
            "{" + ", ".join(f"{json.dumps(k)}: {_json_value(r.get(k))}" for k in fields) + "}"
            for r in records
        ]
        return "[\n" + ",\n".join("  " + row for row in rows) + ("\n" if rows else "") + "]\n"
    raise UsageError(f"unknown format {fmt!r}")


def emit(records: Sequence[dict], fmt: str = "csv", path: str | None = None,
         fields: Sequence[str] | None = None) -> None:
    """Write records as RFC-4180 CSV or a JSON array of flat objects.

    ``path`` of None or "-" writes to stdout.  ``fields`` fixes the column
    order, which also gives an empty record list its header.
    """
    text = render(records, fmt, fields)
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


# -- argument helpers -------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        out = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _count(text: str) -> int:
    # accept 1e5 style counts
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return int(v)


def _meta(args, **fields) -> dict:
    fields["command"] = args.command
    fields["seed"] = args.seed
    fields["version"] = __version__
    return fields


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise UsageError(f"p must lie in (0, 1), got {p}")


def _check_t(t: float) -> None:
    if not t >= 0:
        raise UsageError(f"t must be nonnegative, got {t}")


def _default_method(p: float) -> Method:
    if p > 0.5:
        return Method.DUALITY
    if p < 0.5:
        return Method.REJECTION
    return Method.HTRANSFORM


def _state_at(tr: Trajectory, s: float):
    x = tr.initial
    for tm, mv in tr.events:
        if tm > s:
            break
        x = apply_move(x, mv)
    return x


# -- subcommands ---------------------------------------------------------------


def cmd_constants(args) -> tuple[list[dict], int]:
    c, c_prime = theorem_constants(args.tol)
    rec = _meta(args, c=c, c_prime=c_prime, tol=args.tol)
    return [rec], EXIT_OK


def cmd_return_prob(args) -> tuple[list[dict], int]:
    _check_p(args.p)
    out = []
    for t in args.t:
        _check_t(t)
        N = args.truncate if args.truncate is not None else auto_truncation(args.p, t, args.max_defect, tol=args.tol)
        log.info("return-prob p=%g t=%g N=%d", args.p, t, N)
        P, defect = return_probability_with_defect(args.p, t, N, args.tol)
        scaled = -math.log(P) / math.sqrt(t) if P > 0 and t > 0 else float("nan")
        out.append(_meta(args, p=args.p, t=t, N=N, states=len(enumerate_space(N)), tol=args.tol,
                         P=P, defect=defect, neg_log_P_over_sqrt_t=scaled))
    return out, EXIT_OK


def cmd_duality_check(args) -> tuple[list[dict], int]:
    out = []
    for p in args.p:
        _check_p(p)
        for t in args.t:
            _check_t(t)
            P_p, P_q, res = duality_check(p, t, args.truncate, args.tol)
            out.append(_meta(args, p=p, t=t, N=args.truncate, P_p=P_p, P_q=P_q,
                             residual=res, seed=args.seed, tol=args.tol))
    return out, EXIT_OK


def cmd_square_sum(args) -> tuple[list[dict], int]:
    out = []
    for t in args.t:
        _check_t(t)
        full, sq, res = square_sum_check(t, args.truncate, args.tol)
        out.append(_meta(args, t=t, N=args.truncate, P_t=full, sum_squares_half=sq,
                         residual=res, tol=args.tol))
    return out, EXIT_OK


def _bridge_batch(args, p: float, t: float, method: Method, N: int | None, stream: RngStream):
    if method is Method.HTRANSFORM and N is None:
        N = bridge_truncation(p, t)
        log.info("h-transform truncation N=%d at p=%g t=%g", N, p, t)
    req = BridgeRequest(p=p, t=t, method=method, N=N, samples=args.samples,
                        stream=stream, attempt_cap=args.cap)
    trs, acc = sample_bridges(req)
    return trs, acc, N


def cmd_bridge(args) -> tuple[list[dict], int]:
    _check_p(args.p)
    _check_t(args.t)
    method = Method(args.method) if args.method else _default_method(args.p)
    stream = RngStream(args.seed, (_STREAM["bridge"],))
    trs, acc, N = _bridge_batch(args, args.p, args.t, method, args.truncate, stream)
    st = ensemble_stats(trs, args.particles, acc)
    if args.per_sample:
        disp = st.displacement_max
        out = []
        for i in range(len(trs)):
            rec = {"sample": i, "max_D": int(st.max_D[i]), "max_M": int(st.max_M[i]),
                   "events": len(trs[i])}
            for k in range(disp.shape[1]):
                rec[f"disp_max_{k + 1}"] = int(disp[i, k])
            out.append(_meta(args, p=args.p, t=args.t, method=method.value, N=N, **rec))
        return out, EXIT_OK
    summ = st.summary()
    summ.pop("acceptance_rate", None)
    disp_means = st.displacement_max.mean(axis=0)
    rec = _meta(args, p=args.p, t=args.t, method=method.value, N=N, acceptance_rate=acc, **summ)
    for k, v in enumerate(disp_means, start=1):
        rec[f"disp_max_{k}_mean"] = float(v)
    return [rec], EXIT_OK


def cmd_scaling(args) -> tuple[list[dict], int]:
    _check_p(args.p)
    method = Method(args.method) if args.method else _default_method(args.p)
    rows = []
    for i, t in enumerate(args.t):
        _check_t(t)
        log.info("scaling: sampling %d bridges at t=%g (%s)", args.samples, t, method.value)
        stream = RngStream(args.seed, (_STREAM["scaling"], i))
        trs, acc, N = _bridge_batch(args, args.p, t, method, args.truncate, stream)
        st = ensemble_stats(trs, 1, acc)
        arr = np.asarray(st.max_M if args.statistic == "maxM" else st.max_D, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else float("nan")
        rows.append({"t": t, "N": N, "mean": float(arr.mean()), "se": se, "acceptance_rate": acc})
    fit = scaling_fit([(r["t"], r["mean"]) for r in rows], args.model)
    c_p = c_of_p(args.p) if args.p != 0.5 else float("nan")
    out = []
    for r in rows:
        out.append(_meta(
            args, p=args.p, t=r["t"], method=method.value, N=r["N"], samples=args.samples,
            statistic=args.statistic, mean=r["mean"], se=r["se"], mean_over_t=r["mean"] / r["t"],
            acceptance_rate=r["acceptance_rate"], model=fit.model, slope=fit.slope,
            intercept=fit.intercept, c_p=c_p, slope_over_c_p=fit.slope / c_p,
        ))
    return out, EXIT_OK


def cmd_stationary(args) -> tuple[list[dict], int]:
    _check_p(args.p)
    if not args.p < 0.5:
        raise UsageError("the stationary atom exists only for p < 1/2")
    a_prod = alpha(args.p, args.epsilon)
    space = enumerate_space(args.truncate)
    a_trunc = float(truncated_stationary(space, args.p).weights[0])
    mc = se = float("nan")
    if args.mc_time > 0:
        log.info("stationary: simulating to t=%g", args.mc_time)
        tr = gillespie(ORIGIN, args.p, args.mc_time, RngStream(args.seed, (_STREAM["stationary"],)))
        # discard the first batch as burn-in
        batches = origin_time_batches(tr, args.batches + 1)[1:]
        mc = float(batches.mean())
        se = float(batches.std(ddof=1) / math.sqrt(len(batches)))
    tol_mc = max(1e-3, 3 * se) if args.mc_time > 0 else float("nan")
    agree = abs(a_prod - a_trunc) <= 1e-3
    if args.mc_time > 0:
        agree = agree and abs(mc - a_prod) <= tol_mc and abs(mc - a_trunc) <= tol_mc
    rec = _meta(args, p=args.p, N=args.truncate, epsilon=args.epsilon, alpha_product=a_prod,
                alpha_truncated=a_trunc, mc_time=args.mc_time, mc_fraction=mc, mc_se=se,
                agree=agree)
    return [rec], EXIT_OK


def cmd_partitions(args) -> tuple[list[dict], int]:
    if args.n < 1:
        raise UsageError("n must be at least 1")
    out = []
    for n in range(1, args.n + 1):
        p_n = partition_count(n)
        brute = sum(1 for _ in partitions(n)) if n <= args.brute_max else None
        hr = hardy_ramanujan(n)
        out.append(_meta(args, n=n, p_n=p_n, brute_force=brute, hardy_ramanujan=hr, ratio=p_n / hr))
    return out, EXIT_OK


def _random_ordered_pair(space, rng: np.random.Generator, extra_moves: int):
    lower = space.states[int(rng.integers(len(space)))]
    upper = lower
    for _ in range(int(rng.integers(extra_moves + 1))):
        rights = [m for m in enumerate_moves(upper) if m.direction is Direction.RIGHT]
        upper = apply_move(upper, rights[int(rng.integers(len(rights)))])
    return upper, lower


def cmd_coupling_check(args) -> tuple[list[dict], int]:
    out = []
    space = enumerate_space(args.truncate)
    ok = True
    for i, p in enumerate(args.p):
        _check_p(p)
        rng = RngStream(args.seed, (_STREAM["coupling-check"], i)).generator()
        bad = 0
        for _ in range(args.runs):
            upper, lower = _random_ordered_pair(space, rng, 4)
            a, b = coupled_pair(upper, lower, p, args.t, rng)
            bad += order_violations(a, b)
        h_bad, pairs = h_monotonicity_violations(p, args.t, args.truncate)
        passed = bad == 0 and h_bad == 0
        ok &= passed
        out.append(_meta(args, p=p, t=args.t, runs=args.runs, order_violations=bad,
                         N=args.truncate, h_pairs=pairs, h_violations=h_bad, passed=passed))
    return out, EXIT_OK if ok else EXIT_FAIL


def _chi2(a: Sequence, b: Sequence, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Two-sample chi-square homogeneity test, pooling sparse categories into one bin."""
    ca, cb = Counter(a), Counter(b)
    keys = sorted(set(ca) | set(cb), key=lambda k: -(ca[k] + cb[k]))
    na, nb = len(a), len(b)
    rows, other = [], [0, 0]
    for k in keys:
        tot = ca[k] + cb[k]
        if min(na, nb) * tot / (na + nb) >= min_expected:
            rows.append([ca[k], cb[k]])
        else:
            other[0] += ca[k]
            other[1] += cb[k]
    if sum(other):
        rows.append(other)
    if len(rows) < 2:
        return 0.0, 0, 1.0
    chi2, pval, dof, _ = stats.chi2_contingency(np.array(rows).T, correction=False)
    return float(chi2), int(dof), float(pval)


def cmd_sampler_check(args) -> tuple[list[dict], int]:
    cases = [
        (0.5, 4.0, Method.HTRANSFORM, Method.REJECTION),
        (0.7, 2.0, Method.DUALITY, Method.REJECTION),
    ]
    out = []
    ok = True
    for i, (p, t, m_a, m_b) in enumerate(cases):
        N = args.truncate if m_a is Method.HTRANSFORM else None
        ens = []
        for j, m in enumerate((m_a, m_b)):
            log.info("sampler-check: %d %s bridges at p=%g t=%g", args.samples, m.value, p, t)
            stream = RngStream(args.seed, (_STREAM["sampler-check"], i, j))
            with warnings.catch_warnings():
                # direct rejection at p >= 1/2 is the reference here, and cheap at these t
                warnings.simplefilter("ignore", RuntimeWarning)
                trs, _, N_used = _bridge_batch(args, p, t, m, N, stream)
            if m is Method.HTRANSFORM:
                N = N_used
            ens.append(trs)
        for stat in ("X_mid", "max_D"):
            if stat == "X_mid":
                vals = [[_state_at(tr, t / 2).parts for tr in trs] for trs in ens]
            else:
                vals = [list(ensemble_stats(trs, 1).max_D) for trs in ens]
            chi2, dof, pval = _chi2(vals[0], vals[1])
            passed = pval > args.alpha
            ok &= passed
            out.append(_meta(args, p=p, t=t, N=N, method_a=m_a.value, method_b=m_b.value,
                             samples=args.samples, statistic=stat, chi2=chi2, dof=dof,
                             p_value=pval, passed=passed))
    return out, EXIT_OK if ok else EXIT_FAIL


def _parse_cases(text: str) -> list[tuple[float, float, int]]:
    cases = []
    for item in text.split(","):
        try:
            p, t, N = item.split(":")
            cases.append((float(p), float(t), int(N)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"cases are p:t:N, got {item!r}")
    return cases


def cmd_reversal_check(args) -> tuple[list[dict], int]:
    out = []
    ok = True
    for p, t, N in args.cases:
        _check_p(p)
        space = enumerate_space(N)
        for frac in args.fractions:
            s = frac * t
            a = bridge_marginal(space, p, t, s, args.tol).weights
            b = bridge_marginal(space, p, t, t - s, args.tol).weights
            diff = float(np.abs(a - b).max())
            passed = diff <= args.threshold
            ok &= passed
            out.append(_meta(args, p=p, t=t, N=N, s=s, max_abs_diff=diff, passed=passed))
    return out, EXIT_OK if ok else EXIT_FAIL


def cmd_negative_dependence(args) -> tuple[list[dict], int]:
    _check_t(args.t)
    starts = args.starts
    rng = RngStream(args.seed, (_STREAM["negative-dependence"], 0)).generator()
    log.info("negative-dependence: %d stirring runs", args.runs)
    hits = 0
    for _ in range(args.runs):
        hits += bool(np.all(stirred_positions(starts, args.t, rng) < 0))
    rng_i = RngStream(args.seed, (_STREAM["negative-dependence"], 1)).generator()
    ind = independent_walks(starts, args.t, rng_i, size=args.runs)
    p_s = hits / args.runs
    p_i = float(np.all(ind < 0, axis=1).mean())
    se_s = math.sqrt(p_s * (1 - p_s) / args.runs)
    se_i = math.sqrt(p_i * (1 - p_i) / args.runs)
    pooled = math.hypot(se_s, se_i)
    passed = p_s <= p_i + 3 * pooled
    rec = _meta(args, t=args.t, runs=args.runs, starts=" ".join(map(str, starts)),
                p_stirred=p_s, se_stirred=se_s, p_independent=p_i, se_independent=se_i,
                pooled_se=pooled, passed=passed)
    return [rec], EXIT_OK if passed else EXIT_FAIL


def cmd_selfcheck(args) -> tuple[list[dict], int]:
    checks: list[tuple[str, Callable[[], float], float]] = [
        ("duality p=0.7 t=2 N=8", lambda: duality_check(0.7, 2.0, 8)[2], 1e-8),
        ("square-sum t=2 N=10", lambda: square_sum_check(2.0, 10)[2], 1e-8),
        ("c_prime vs 0.4775", lambda: abs(theorem_constants(1e-8)[1] - 0.4775), 5e-4),
        ("partition recurrence vs brute force n<=20",
         lambda: float(sum(partition_count(n) != sum(1 for _ in partitions(n)) for n in range(21))), 0.0),
        ("Hardy-Ramanujan |ratio-1| n=500", lambda: abs(partition_count(500) / hardy_ramanujan(500) - 1), 0.1),
        ("h-monotonicity violations N=6", lambda: float(sum(
            h_monotonicity_violations(p, 1.0, 6)[0] for p in (0.3, 0.5, 0.7))), 0.0),
        ("time reversal p=0.7 t=2 N=8", lambda: float(np.abs(
            bridge_marginal(enumerate_space(8), 0.7, 2.0, 0.5).weights
            - bridge_marginal(enumerate_space(8), 0.7, 2.0, 1.5).weights).max()), 1e-10),
        ("alpha product vs truncated N=12 p=0.3", lambda: abs(
            alpha(0.3) - float(truncated_stationary(enumerate_space(12), 0.3).weights[0])), 1e-3),
    ]
    out = []
    ok = True
    for name, fn, threshold in checks:
        value = fn()
        passed = value <= threshold
        ok &= passed
        log.info("selfcheck %-45s %s", name, "ok" if passed else "FAILED")
        out.append(_meta(args, check=name, value=value, threshold=threshold, passed=passed))
    return out, EXIT_OK if ok else EXIT_FAIL


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    parser = _Parser(prog="tube", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("constants", cmd_constants, "the constants pi/sqrt(6) and int_0^inf -log Phi")
    sp.add_argument("--tol", type=float, default=1e-5)

    sp = add("return-prob", cmd_return_prob, "exact truncated return probabilities")
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--t", type=_floats, required=True)
    sp.add_argument("--truncate", type=int, default=None, help="N; chosen from --max-defect if omitted")
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--max-defect", type=float, default=1e-6)

    sp = add("duality-check", cmd_duality_check, "P_p(X_t=O) e^{(2p-1)t} = P_{1-p}(X_t=O)")
    sp.add_argument("--p", type=_floats, required=True)
    sp.add_argument("--t", type=_floats, required=True)
    sp.add_argument("--truncate", type=int, required=True)
    sp.add_argument("--tol", type=float, default=1e-12)

    sp = add("square-sum", cmd_square_sum, "P(X_t=O) = sum_x P(X_{t/2}=x)^2 at p=1/2")
    sp.add_argument("--t", type=_floats, required=True)
    sp.add_argument("--truncate", type=int, required=True)
    sp.add_argument("--tol", type=float, default=1e-12)

    def bridge_flags(sp):
        sp.add_argument("--p", type=float, required=True)
        sp.add_argument("--samples", type=_count, default=200)
        sp.add_argument("--method", choices=[m.value for m in Method], default=None)
        sp.add_argument("--truncate", type=int, default=None)
        sp.add_argument("--cap", type=_count, default=10_000_000)

    sp = add("bridge", cmd_bridge, "sample bridges and summarize them")
    bridge_flags(sp)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--particles", type=int, default=5)
    sp.add_argument("--per-sample", action="store_true")

    sp = add("scaling", cmd_scaling, "bridge excursion statistic across horizons with a fit")
    bridge_flags(sp)
    sp.add_argument("--t", type=_floats, required=True)
    sp.add_argument("--statistic", choices=("maxM", "maxD"), default="maxM")
    sp.add_argument("--model", choices=("logt", "linear"), default="logt")

    sp = add("stationary", cmd_stationary, "the stationary mass of O three ways")
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--truncate", type=int, default=12)
    sp.add_argument("--epsilon", type=float, default=1e-10)
    sp.add_argument("--mc-time", type=float, default=0.0)
    sp.add_argument("--batches", type=int, default=20)

    sp = add("partitions", cmd_partitions, "partition numbers against brute force and Hardy-Ramanujan")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--brute-max", type=int, default=30)

    sp = add("coupling-check", cmd_coupling_check, "order preservation and h-monotonicity")
    sp.add_argument("--p", type=_floats, default=[0.3, 0.5, 0.7])
    sp.add_argument("--t", type=float, default=2.0)
    sp.add_argument("--runs", type=_count, default=1000)
    sp.add_argument("--truncate", type=int, default=6)

    sp = add("sampler-check", cmd_sampler_check, "chi-square agreement between bridge samplers")
    sp.add_argument("--samples", type=_count, default=10_000)
    sp.add_argument("--truncate", type=int, default=None)
    sp.add_argument("--cap", type=_count, default=10_000_000)
    sp.add_argument("--alpha", type=float, default=1e-3)

    sp = add("reversal-check", cmd_reversal_check, "bridge marginals at s and t-s coincide")
    sp.add_argument("--cases", type=_parse_cases, default=[(0.7, 2.0, 8), (0.5, 4.0, 16)])
    sp.add_argument("--fractions", type=_floats, default=[0.1, 0.25, 0.4])
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--threshold", type=float, default=1e-10)

    sp = add("negative-dependence", cmd_negative_dependence, "stirring versus independent walks")
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--runs", type=_count, default=100_000)
    sp.add_argument("--starts", type=_ints, default=[-1, -2, -3])

    add("selfcheck", cmd_selfcheck, "run the invariant suite")
    return parser


_FAILURES = (RejectionCapExceeded, BridgeUnreachable, StateSpaceTooLarge, SeriesLengthError,
             StationaryError, MemoryError)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tube: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        records, code = args.func(args)
        emit(records, args.format, args.out)
    except ValueError as exc:
        print(f"tube {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _FAILURES as exc:
        print(f"tube {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"tube {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
