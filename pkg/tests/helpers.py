"""Dataset builders shared by the test modules."""

import numpy as np

from didguard.core import TimeLayout
from didguard.estimators import Dataset, Design

# 0.95 quantile of |Z1| + |Z2| for independent standard normals, from adaptive
# quadrature of the CDF  P(|Z1|+|Z2| <= c) = int_{-c}^{c} phi(x) (2 Phi(c-|x|) - 1) dx
# solved by Brent's method.
ABS_SUM_Q95 = 3.1628556026643047


def cell_dataset(treated_means, control_means, t0, spread=1.0, n=2, design=Design.REPEATED_CROSS_SECTION):
    """Dataset whose cells have the given means, each cell holding ``n`` symmetric rows."""
    T = len(treated_means)
    offsets = np.linspace(-spread, spread, n)
    time, treated, outcome, unit = [], [], [], []
    for d, means in ((1, treated_means), (0, control_means)):
        for t, m in enumerate(means, start=1):
            for j, off in enumerate(offsets):
                time.append(t)
                treated.append(d)
                outcome.append(m + off)
                unit.append(f"{d}-{j}")
    return Dataset(
        time=np.array(time),
        treated=np.array(treated),
        outcome=np.array(outcome),
        layout=TimeLayout(T, t0),
        design=design,
        unit_id=np.array(unit, dtype=object) if design is Design.PANEL else None,
    )


def random_panel(rng, T, t0, n_units, treated_share=0.5):
    n_treated = max(2, min(n_units - 2, int(round(n_units * treated_share))))
    unit_effect = rng.normal(size=n_units)
    time_effect = rng.normal(size=T)
    is_treated = np.arange(n_units) < n_treated
    units = np.repeat(np.arange(n_units), T)
    times = np.tile(np.arange(1, T + 1), n_units)
    d = is_treated[units]
    y = unit_effect[units] + time_effect[times - 1] + 0.8 * d * (times >= t0) + rng.normal(size=units.size)
    return Dataset(
        time=times,
        treated=d,
        outcome=y,
        layout=TimeLayout(T, t0),
        design=Design.PANEL,
        unit_id=units.astype(str).astype(object),
    )
