"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the "acceptance criteria" section of the terminal summary.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from nearfield_osm import runner, specfun, validation
from nearfield_osm.scene import SamplingGrid

from oracles import mp, mp_sph_j0

# 3D campaign grids are evaluated at this resolution instead of the preset's
ACCEPTANCE_GRID_3D = 30


def judge(report, number, result, budget):
    result.elapsed = round(result.elapsed, 1)
    within = result.elapsed <= budget
    line = f"criterion {number} {result.line()} (elapsed {result.elapsed:.1f}s, budget {budget}s)"
    report(line)
    return within


def timed(fn, **kw):
    t = time.perf_counter()
    res = fn(**kw)
    res.elapsed = time.perf_counter() - t
    return res


def test_criterion_1_boundary_volume_identity_2d(acceptance_report):
    res = timed(validation.check_boundary_volume_2d)
    in_time = judge(acceptance_report, 1, res, 120)
    assert res.passed, res.line()
    assert in_time


def test_criterion_2_boundary_volume_identity_maxwell(acceptance_report):
    res = timed(validation.check_boundary_volume_maxwell)
    in_time = judge(acceptance_report, 2, res, 600)
    assert res.passed, res.line()
    assert in_time


def test_criterion_3_green_representation(acceptance_report):
    t = time.perf_counter()
    r2 = validation.check_green_identity_2d()
    r3 = validation.check_green_identity_3d()
    res = validation.CheckResult(
        "green_representation",
        r2.passed and r3.passed,
        {**{f"2d_{k}": v for k, v in r2.measured.items()}, **{f"3d_{k}": v for k, v in r3.measured.items()}},
        {"2d": r2.tolerance, "3d": r3.tolerance},
        elapsed=time.perf_counter() - t,
    )
    in_time = judge(acceptance_report, 3, res, 60)
    assert res.passed, res.line()
    assert in_time


def test_criterion_4_stability(acceptance_report):
    res = timed(validation.check_stability)
    in_time = judge(acceptance_report, 4, res, 300)
    assert res.passed, res.line()
    assert in_time


def test_criterion_5_decay_rates(acceptance_report):
    t = time.perf_counter()
    r2 = validation.check_decay("helmholtz")
    r3 = validation.check_decay("maxwell")
    res = validation.CheckResult(
        "decay_rates",
        r2.passed and r3.passed,
        {"slope_2d": r2.measured["slope"], "slope_maxwell": r3.measured["slope"]},
        {"2d": r2.tolerance, "maxwell": r3.tolerance},
        elapsed=time.perf_counter() - t,
    )
    in_time = judge(acceptance_report, 5, res, 300)
    assert res.passed, res.line()
    assert in_time


def test_criterion_6_kernel_limits(acceptance_report):
    res = timed(validation.check_kernel_limits)
    in_time = judge(acceptance_report, 6, res, 60)
    assert res.passed, res.line()
    assert in_time


# --- criterion 7: campaign presets -----------------------------------------------


def campaign_config(name):
    cfg = runner.load_config(name)
    scenes = []
    for sc in cfg.scenarios:
        if sc.dim == 3:
            sc = sc.with_(grid=SamplingGrid(sc.grid.ranges, (ACCEPTANCE_GRID_3D,) * 3))
        scenes.append(sc)
    return replace(cfg, scenarios=tuple(scenes))


def campaign_ratios(name):
    """{scenario: [(axis value, contrast ratio), ...]} along the preset's sweep axis."""
    cfg = campaign_config(name)
    out = {}
    for row, _ in runner.run_sweep(cfg, cfg.sweep_axis):
        out.setdefault(row["scenario"], []).append((row["value"], float(row["contrast_ratio"])))
    return cfg, out


def increasing(pairs, strict=True):
    r = [v for _, v in sorted(pairs)]
    return all((b > a) if strict else (b >= a) for a, b in zip(r, r[1:]))


def fmt(pairs):
    return " ".join(f"{v}:{r:.3f}" for v, r in pairs)


def test_criterion_7_campaign_presets(acceptance_report):
    t0 = time.perf_counter()
    verdicts = {}
    for name in ("fig1-analog", "fig2-analog", "fig3-analog", "fig4-analog", "fig5-analog", "fig6-analog"):
        t = time.perf_counter()
        cfg, ratios = campaign_ratios(name)
        for scene_name, pairs in ratios.items():
            if name in ("fig1-analog", "fig2-analog", "fig6-analog"):
                ok = increasing(pairs)
            elif name == "fig4-analog":
                ok = increasing(pairs, strict=False)
            elif name == "fig5-analog":
                size = {n: len(v) for n, v in cfg.probe_sets.items()}
                m3 = [r for v, r in pairs if size[v] == 3]
                m1 = [r for v, r in pairs if size[v] == 1]
                ok = min(m3) >= max(m1)
            else:
                ok = None
            if ok is not None:
                verdicts[(name, scene_name)] = ok
            status = "INFO" if ok is None else ("PASS" if ok else "FAIL")
            acceptance_report(
                f"criterion 7   [{status}] {name} {scene_name} {cfg.sweep_axis}-> {fmt(pairs)}"
                f" ({time.perf_counter() - t:.0f}s)"
            )
    elapsed = time.perf_counter() - t0
    failed = [f"{n}/{s}" for (n, s), ok in verdicts.items() if not ok]
    passed = not failed and elapsed <= 1800
    acceptance_report(
        f"criterion 7 [{'PASS' if passed else 'FAIL'}] campaign_presets: "
        f"{len(verdicts) - len(failed)}/{len(verdicts)} orderings hold"
        + (f"; failing {', '.join(failed)}" if failed else "")
        + f" (elapsed {elapsed:.0f}s, budget 1800s)"
    )
    assert passed


# --- criterion 8: special functions against mpmath -------------------------------

ARGS = np.logspace(-6, np.log10(200.0), 10_000)


@pytest.fixture(scope="module")
def bessel_reference():
    ref = {}
    for kind, f in (("j", mp.besselj), ("y", mp.bessely)):
        for order in (0, 1):
            ref[kind, order] = np.array([float(f(order, mp.mpf(float(x)))) for x in ARGS])
    ref["sph"] = np.array([mp_sph_j0(x) for x in ARGS])
    return ref


def envelope_error(values, ref, envelope):
    """Relative error, floored at 1e-3 of the local oscillation amplitude."""
    return np.abs(values - ref) / np.maximum(np.abs(ref), 1e-3 * envelope)


def test_criterion_8_special_functions(bessel_reference, acceptance_report):
    t = time.perf_counter()
    ref = bessel_reference
    errs, tols = {}, {}
    for order in (0, 1):
        env = np.hypot(ref["j", order], ref["y", order])
        errs[f"J{order}"] = envelope_error(specfun.bessel_j(order, ARGS), ref["j", order], env).max()
        errs[f"Y{order}"] = envelope_error(specfun.bessel_y(order, ARGS), ref["y", order], env).max()
        tols[f"J{order}"], tols[f"Y{order}"] = 1e-10, 1e-9
    errs["j0"] = envelope_error(specfun.sph_j0(ARGS), ref["sph"], np.minimum(1.0, 1.0 / ARGS)).max()
    tols["j0"] = 1e-12
    res = validation.CheckResult(
        "special_functions",
        all(errs[n] <= tols[n] for n in errs),
        {n: float(e) for n, e in errs.items()},
        tols,
        elapsed=time.perf_counter() - t,
    )
    judge(acceptance_report, 8, res, 60)
    assert res.passed, res.line()
