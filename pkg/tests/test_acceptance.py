"""
Desk-scale reproductions of the published rejection rates. Each run takes
minutes; enable with EIV_RUN_SLOW=1.
"""
import os
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chi2, kstest

from simulate import (SimConfig, StudyRunner, discrepancy_curve, load_sim_config, run_null_study,
                      run_power_study)

pytestmark = pytest.mark.slow

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def cfg(name, p, n, **overrides):
    return replace(load_sim_config(os.path.join(CONFIGS, name)).cell(p=p, n=n), **overrides)


def test_normal_p2_null_rates():
    report = run_null_study(cfg("null_normal.cfg", 2, 20, replications=2000), progress=False)
    assert not report.unreliable
    assert abs(report.rates["lr"][0.05] - 0.082) <= 0.019
    assert abs(report.rates["lr_dstar"][0.05] - 0.052) <= 0.015


def test_student_t_p3_null_rates():
    report = run_null_study(cfg("null_student_t.cfg", 3, 20, replications=2000), progress=False)
    assert not report.unreliable
    assert abs(report.rates["lr"][0.01] - 0.025) <= 0.011
    assert abs(report.rates["lr_dstar"][0.01] - 0.011) <= 0.007


def test_power_exponential_p4_null_rates():
    report = run_null_study(cfg("null_power_exponential.cfg", 4, 30, replications=2000),
                            progress=False)
    assert not report.unreliable
    assert abs(report.rates["lr"][0.05] - 0.078) <= 0.018
    assert abs(report.rates["lr_dstar"][0.05] - 0.049) <= 0.015


def test_normal_power_at_eta_one():
    config = SimConfig(kind="normal", m=1, p=2, q=2, n=20, replications=2000, seed=20140,
                       nominal_levels=(0.05,), power_grid=(1.0,))
    (report,) = run_power_study(config, progress=False)
    assert abs(report.rates["lr_star"][0.05] - 0.728) <= 0.030


def _mid_discrepancy(values, q):
    curve = np.array(discrepancy_curve(values, q))
    mid = (curve[:, 0] > chi2.ppf(0.2, q)) & (curve[:, 0] < chi2.ppf(0.95, q))
    return curve[mid, 1]


def test_lr_discrepancy_curve_lies_above_the_adjusted_one():
    config = cfg("discrepancy_student_t_p4q3.cfg", 4, 20, replications=600)
    report = run_null_study(config, progress=False)
    lr = _mid_discrepancy(report.values["lr"], config.q)
    adjusted = _mid_discrepancy(report.values["lr_dstar"], config.q)
    assert np.mean(lr) > 0
    assert np.mean(lr > adjusted) > 0.8
    assert np.mean(np.abs(adjusted)) < np.mean(np.abs(lr))


def test_adjusted_statistic_is_chi2_in_large_samples():
    config = SimConfig(kind="normal", m=1, p=2, q=2, n=200, replications=1000, seed=20170)
    report = run_null_study(config, progress=False)
    stat = kstest(report.values["lr_dstar"], chi2(config.q).cdf).statistic
    assert stat < 0.06


def test_null_rate_at_n_2000():
    config = SimConfig(kind="normal", m=1, p=2, q=2, n=2000, replications=500, seed=20180,
                       nominal_levels=(0.05,))
    report = run_null_study(config, progress=False)
    assert 0.035 <= report.rates["lr_dstar"][0.05] <= 0.065


def test_correction_shrinks_with_n():
    medians = []
    for n, reps in ((50, 200), (200, 200), (2000, 100)):
        config = SimConfig(kind="normal", m=1, p=2, q=2, n=n, replications=reps, seed=20190)
        outcomes = StudyRunner(config, progress=False).run(0.0)
        log_rho = [o["log_rho"] for o in outcomes.values() if not o.get("failed")]
        medians.append(np.median(np.abs(log_rho)))
    assert medians[0] > medians[1] > medians[2]
