"""Design-matrix construction from panel histories.

Regressions in the sequential pass condition on the history through the
visit-(l-1) treatment pair; treatment mechanisms at visit k additionally see
the visit-k covariates.  Builders support substituting the most recent
treatment pair (scalar or per-subject vector), which re-propagates into the
running averages, so the interventional marginalization can request
counterfactual rows without touching the panel.

Feature families:
  intercept     constant column only
  main          baseline block + most recent covariates/treatments
  interactions  main effects plus all pairwise products
  running_avg   main block plus running averages of treatments/covariates
  saturated     one indicator per discrete history cell (binary panels only)
"""

from __future__ import annotations

import numpy as np

from .panel import TrialPanel

FEATURE_NAMES = ("intercept", "main", "interactions", "running_avg", "saturated")


def _as_vec(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()


def _history_columns(panel, treat_upto, cov_upto, sub_a, sub_z):
    """Ordered history columns with the latest treatment pair substituted.

    Returns (columns, names); column order follows the observed-variable
    ordering: baseline block first, then per-visit covariates and treatments.
    """
    n = panel.n
    a_last = _as_vec(sub_a, n) if sub_a is not None else panel.a_at(treat_upto).astype(float)
    z_last = _as_vec(sub_z, n) if sub_z is not None else panel.z_at(treat_upto).astype(float)

    cols, names = [], []
    for j in range(panel.d_baseline):
        cols.append(panel.L0[:, j])
        names.append(f"L0_{j + 1}")
    cols.append(z_last if treat_upto == 0 else panel.Z0.astype(float))
    names.append("Z0")
    cols.append(a_last if treat_upto == 0 else panel.A0.astype(float))
    names.append("A0")
    for j in range(1, max(treat_upto, cov_upto) + 1):
        if j <= cov_upto:
            lj = panel.l_at(j)
            for c in range(lj.shape[1]):
                cols.append(lj[:, c])
                names.append(f"L{j}_{c + 1}")
        if j <= treat_upto:
            cols.append(a_last if j == treat_upto else panel.a_at(j).astype(float))
            names.append(f"A{j}")
            cols.append(z_last if j == treat_upto else panel.z_at(j).astype(float))
            names.append(f"Z{j}")
    return cols, names


def _running_means(panel, treat_upto, a_last, z_last):
    """Averages of A, Z over visits 0..treat_upto and of L over 0..treat_upto,
    with the visit-``treat_upto`` treatments taken from the supplied vectors."""
    a_sum = panel.A0.astype(float).copy()
    z_sum = panel.Z0.astype(float).copy()
    l_sum = panel.l_at(0).astype(float).copy()
    for j in range(1, treat_upto + 1):
        a_sum += panel.a_at(j) if j < treat_upto else 0.0
        z_sum += panel.z_at(j) if j < treat_upto else 0.0
        l_sum += panel.l_at(j)
    a_sum += a_last if treat_upto >= 1 else 0.0
    z_sum += z_last if treat_upto >= 1 else 0.0
    if treat_upto == 0:
        a_sum, z_sum = a_last.copy(), z_last.copy()
    denom = float(treat_upto + 1)
    return a_sum / denom, z_sum / denom, l_sum / denom


def history_design(
    panel: TrialPanel,
    features: str,
    treat_upto: int,
    cov_upto: int | None = None,
    sub_a=None,
    sub_z=None,
) -> np.ndarray:
    """Design matrix for a regression conditioning on history.

    ``treat_upto`` is the index of the latest visible treatment pair
    (A_j, Z_j); ``cov_upto`` the latest visible covariate block (defaults to
    ``treat_upto``; mechanisms for visit-k treatments pass cov_upto = k).
    ``sub_a``/``sub_z`` replace the visit-``treat_upto`` treatments before
    the matrix is formed.
    """
    if features not in FEATURE_NAMES:
        raise ValueError(f"unknown feature map '{features}'")
    n = panel.n
    if cov_upto is None:
        cov_upto = treat_upto
    if features == "intercept":
        return np.ones((n, 1))

    cols, names = _history_columns(panel, treat_upto, cov_upto, sub_a, sub_z)

    if features == "saturated":
        vals = np.column_stack(cols)
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("saturated features require binary history columns")
        codes = np.zeros(n, dtype=np.int64)
        for j in range(vals.shape[1]):
            codes = codes * 2 + vals[:, j].astype(np.int64)
        design = np.zeros((n, 2 ** vals.shape[1]))
        design[np.arange(n), codes] = 1.0
        return design

    if features == "main":
        return np.column_stack([np.ones(n)] + cols)

    if features == "interactions":
        out = list(cols)
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                out.append(cols[i] * cols[j])
        return np.column_stack([np.ones(n)] + out)

    # running_avg: compact summary sufficient for running-average dynamics --
    # baseline block at the first step, then recent values plus running means.
    a_last = _as_vec(sub_a, n) if sub_a is not None else panel.a_at(treat_upto).astype(float)
    z_last = _as_vec(sub_z, n) if sub_z is not None else panel.z_at(treat_upto).astype(float)
    if treat_upto == 0:
        out = [np.ones(n)] + [panel.L0[:, j] for j in range(panel.d_baseline)]
        out += [z_last, a_last]
        if cov_upto >= 1:
            lc = panel.l_at(cov_upto)
            out += [lc[:, j] for j in range(lc.shape[1])]
        return np.column_stack(out)
    abar, zbar, lbar = _running_means(panel, treat_upto, a_last, z_last)
    out = [np.ones(n), a_last, z_last, abar, zbar]
    lc = panel.l_at(cov_upto)
    out += [lc[:, j] for j in range(lc.shape[1])]
    out += [lbar[:, j] for j in range(lbar.shape[1])]
    if cov_upto > treat_upto:
        # mechanism design: the pre-treatment covariate block is informative
        lt = panel.l_at(treat_upto)
        out += [lt[:, j] for j in range(lt.shape[1])]
    return np.column_stack(out)


def mechanism_design(panel: TrialPanel, features: str, node: str, k: int,
                     ) -> np.ndarray:
    """Design for the visit-k treatment/censoring mechanism.

    Treatment nodes (A_k, Z_k) see covariates through visit k; the censoring
    node precedes the visit-k covariates and sees history through k-1 only.
    """
    if node in ("A", "Z"):
        if k == 0:
            return np.column_stack(
                [np.ones(panel.n)] + [panel.L0[:, j] for j in range(panel.d_baseline)]
            )
        return history_design(panel, features, treat_upto=k - 1, cov_upto=k)
    if node == "C":
        return history_design(panel, features, treat_upto=k - 1)
    raise ValueError(f"unknown mechanism node '{node}'")


def gstar_design(panel: TrialPanel, k: int, z_prev=None) -> np.ndarray:
    """Design for the balancing intervention's conditional law at visit k:
    intercept, previous concomitant status (k >= 1) and baseline covariates."""
    n = panel.n
    if k == 0:
        return np.column_stack([np.ones(n)] + [panel.L0[:, j] for j in range(panel.d_baseline)])
    zp = panel.z_at(k - 1).astype(float) if z_prev is None else _as_vec(z_prev, n)
    return np.column_stack([np.ones(n), zp] + [panel.L0[:, j] for j in range(panel.d_baseline)])
