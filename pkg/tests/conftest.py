"""Shared fixtures.

Every call to ``fit_quantile`` made anywhere in the suite is recorded so the
suite can assert that the optimality certificate never fails. Unpenalized
panel fits are recorded too, with one certificate per firm.
"""
from __future__ import annotations

import functools

import numpy as np
import pytest

import capstruct
from capstruct import adjustment, panel_quantreg, quantreg

CERTIFICATE_LOG: list[tuple[float, int, bool]] = []

_original_fit_quantile = quantreg.fit_quantile


@functools.wraps(_original_fit_quantile)
def _recording_fit_quantile(*args, **kwargs):
    fit = _original_fit_quantile(*args, **kwargs)
    CERTIFICATE_LOG.append((fit.tau, fit.nobs, fit.certificate.passed))
    return fit


quantreg.fit_quantile = _recording_fit_quantile
capstruct.fit_quantile = _recording_fit_quantile

_original_fit_panel = panel_quantreg.fit_panel_quantile


@functools.wraps(_original_fit_panel)
def _recording_fit_panel(design, tau, lam=0.0, *args, **kwargs):
    fit = _original_fit_panel(design, tau, lam, *args, **kwargs)
    if lam == 0.0:
        index = {f: g for g, f in enumerate(fit.firms)}
        keep = np.array([f in index for f in design.firm_ids])
        codes = np.array([index[f] for f in design.firm_ids[keep]])
        certs = panel_quantreg.certify_panel_optimality(fit, design.y[keep], codes)
        CERTIFICATE_LOG.append((fit.tau, fit.nobs, all(c.passed for c in certs)))
    return fit


panel_quantreg.fit_panel_quantile = _recording_fit_panel
adjustment.fit_panel_quantile = _recording_fit_panel
capstruct.fit_panel_quantile = _recording_fit_panel


def certificate_failures() -> list[tuple[float, int, bool]]:
    return [entry for entry in CERTIFICATE_LOG if not entry[2]]


def pytest_sessionfinish(session, exitstatus):
    failures = certificate_failures()
    line = (f"optimality certificates: {len(CERTIFICATE_LOG)} fits recorded, "
            f"{len(failures)} failures")
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line(line)
    if failures and session.exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so the certificate criterion sees every fit in the suite
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    state = {}

    def verdict(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else "")
        state["line"] = line
        print(line)
        assert ok, line

    yield verdict
    if "line" not in state:
        name = request.node.name
        state["line"] = f"FAIL  {name}: raised before reaching a verdict"
    ACCEPTANCE_LINES.append(state["line"])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
