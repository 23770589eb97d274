"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .combine import RangeGrid
from .exceptions import InvalidArgumentError
from .subband import OfdmParams, Subband, SubbandPlan
from .synth import CALIBRATED, Cfr


def check_sweeps(X, state: str | None = CALIBRATED) -> list[list[Cfr]]:
    """Normalise ``X`` to a list of sweeps (each a list of per-subband CFRs).

    Accepts one sweep (a sequence of :class:`Cfr`) or a sequence of sweeps.
    All sweeps must cover the same subbands in the same order.
    """
    if isinstance(X, Cfr):
        X = [[X]]
    X = list(X)
    if not X:
        raise InvalidArgumentError("no CFR data")
    if isinstance(X[0], Cfr):
        X = [X]
    sweeps = [list(s) for s in X]
    ref = sweeps[0]
    if not ref:
        raise InvalidArgumentError("empty sweep")
    for sweep in sweeps:
        if len(sweep) != len(ref):
            raise InvalidArgumentError("sweeps differ in subband count")
        for a, b in zip(sweep, ref):
            if not isinstance(a, Cfr):
                raise InvalidArgumentError(f"expected Cfr, got {type(a).__name__}")
            if (a.index, a.carrier, a.bandwidth, a.n_subcarriers) != (
                b.index, b.carrier, b.bandwidth, b.n_subcarriers
            ):
                raise InvalidArgumentError("sweeps cover different subbands")
            if state is not None and a.state != state:
                raise InvalidArgumentError(f"expected {state} CFRs, got {a.state}")
    return sweeps


def plan_from_cfrs(sweep: Sequence[Cfr], t_switch: float = 10e-3) -> SubbandPlan:
    """Rebuild the subband plan a sweep was measured on."""
    spacing = {c.subcarrier_spacing for c in sweep}
    if len(spacing) != 1:
        raise InvalidArgumentError("mixed subcarrier spacings in one sweep")
    bands = tuple(Subband(c.carrier, c.bandwidth) for c in sweep)
    return SubbandPlan(bands, OfdmParams(spacing.pop()), t_switch)


def check_grid(grid) -> RangeGrid:
    if isinstance(grid, RangeGrid):
        return grid
    try:
        r_min, r_max, step = (float(v) for v in grid)
    except (TypeError, ValueError):
        raise InvalidArgumentError("grid must be a RangeGrid or (r_min, r_max, step)") from None
    return RangeGrid(r_min, r_max, step)


def check_fitted_plan(plan: SubbandPlan, sweep: Sequence[Cfr]) -> None:
    if len(sweep) != plan.K or not np.allclose(
        [c.carrier for c in sweep], plan.carriers, rtol=0, atol=1.0
    ):
        raise InvalidArgumentError("data do not match the subbands seen in fit")
