"""Estimation core: nuisance fits, sequential targeted regression, inference.

For one hypothetical arm the estimator runs backwards over visits.  At step l
the current pseudo-outcome (the marginalized continuation value from step
l+1, or the observed horizon status at the top) is regressed on the history
through visit l-1 among subjects still under observation; the fit is then
fluctuated on the logit scale in a weighted intercept-only update whose
weights are cumulative interventional-to-observed density ratios ("clever
weights"); finally the targeted fit is averaged over the visit-(l-1)
treatment pair under the arm's interventional laws -- an exact 2x2 finite
sum since both nodes are binary.  Event and death indicators splice the
recursion: a prior event pins the value at 1, a prior death at 0, and dead
subjects stay in the denominator (absolute-risk, not cause-specific,
semantics).  The run ends with the plug-in mean over baseline covariates,
per-subject influence-curve values, and the solved-score check.

Censoring is resolved first within a visit, so subjects censored at l carry
zero weight at step l and drop out of that regression; the censoring ratio
product therefore runs through the current visit.  In censoring-free panels
this coincides with the lagged product.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .features import history_design, mechanism_design, gstar_design
from .interventions import ArmPolicy, InterventionSpec
from .learners import (
    FittedModel,
    LearnerSpec,
    clip_probs,
    fit_binary_glm,
    fit_constant,
    fit_discrete_super_learner,
    fit_intercept_fluctuation,
)
from .panel import TrialPanel, at_risk_mask, validate_panel


class EstimationError(RuntimeError):
    """Raised when an estimation run cannot proceed (empty risk sets etc.)."""


# ---------------------------------------------------------------------------
# Observed-data mechanisms


@dataclass
class _Mech:
    """One fitted treatment/censoring mechanism.

    kind: ``randomized`` (known constant 1/2), ``adherence`` (the randomized
    arm is carried forward deterministically), ``const`` (degenerate
    response) or ``glm``.  Only glm predictions are floored.
    """

    kind: str
    prob_const: float = 0.5
    model: FittedModel | None = None
    features: str | None = None

    def prob1(self, panel: TrialPanel, node: str, k: int) -> np.ndarray:
        n = panel.n
        if self.kind == "randomized":
            return np.full(n, 0.5)
        if self.kind == "adherence":
            return panel.A0.astype(float)
        if self.kind == "const":
            return np.full(n, self.prob_const)
        design = mechanism_design(panel, self.features, node, k)
        return self.model.predict(design)


@dataclass
class GFit:
    """Fitted observed-data mechanisms for every visit up to the horizon."""

    a_mechs: list
    z_mechs: list
    c_mechs: list                  # index k-1 holds the visit-k censoring mechanism
    features: str
    g_floor: float
    randomized: bool
    floored_counts: dict = field(default_factory=dict)

    def upto(self) -> int:
        return len(self.a_mechs)

    def _observed_prob(self, panel, node, k, mech, used_mask) -> np.ndarray:
        """Floored probability of the observed node value, full length."""
        p1 = mech.prob1(panel, node, k)
        if mech.kind == "glm":
            lo, hi = self.g_floor, 1.0 - self.g_floor
            clipped = np.clip(p1, lo, hi)
            n_clip = int(np.sum((clipped != p1) & used_mask))
            if n_clip:
                key = f"{node}{k}"
                self.floored_counts[key] = self.floored_counts.get(key, 0) + n_clip
            p1 = clipped
        if node == "C":
            obs = panel.c_at(k).astype(float)
        elif node == "A":
            obs = panel.a_at(k).astype(float)
        else:
            obs = panel.z_at(k).astype(float)
        return np.where(obs == 1.0, p1, 1.0 - p1)

    def prob_observed_a(self, panel, k, used_mask):
        return self._observed_prob(panel, "A", k, self.a_mechs[k], used_mask)

    def prob_observed_z(self, panel, k, used_mask):
        return self._observed_prob(panel, "Z", k, self.z_mechs[k], used_mask)

    def prob_uncensored(self, panel, k, used_mask):
        """Floored P(C_k = 0 | history)."""
        mech = self.c_mechs[k - 1]
        p1 = mech.prob1(panel, "C", k)
        if mech.kind == "glm":
            lo, hi = self.g_floor, 1.0 - self.g_floor
            clipped = np.clip(p1, lo, hi)
            n_clip = int(np.sum((clipped != p1) & used_mask))
            if n_clip:
                self.floored_counts[f"C{k}"] = self.floored_counts.get(f"C{k}", 0) + n_clip
            p1 = clipped
        return 1.0 - p1


def _fit_mech(panel, node, k, mask, learner, seed, n_folds=10) -> _Mech:
    y = {"A": panel.a_at, "Z": panel.z_at, "C": panel.c_at}[node](k)[mask].astype(float)
    if np.all(y == y[0]):
        return _Mech(kind="const", prob_const=float(y[0]))
    specs = learner if isinstance(learner, (list, tuple)) else [learner]
    if len(specs) == 1:
        design = mechanism_design(panel, specs[0].features, node, k)[mask]
        model = fit_binary_glm(design, y, max_iter=specs[0].max_iter,
                               tol=specs[0].tol, ridge=specs[0].ridge)
        return _Mech(kind="glm", model=model, features=specs[0].features)
    candidates = [(s.label, mechanism_design(panel, s.features, node, k)[mask])
                  for s in specs]
    sel = fit_discrete_super_learner(candidates, y, n_folds=n_folds, seed=seed,
                                     max_iter=specs[0].max_iter)
    chosen = next(s for s in specs if s.label == sel.name)
    return _Mech(kind="glm", model=sel.model, features=chosen.features)


def fit_g(panel: TrialPanel, learner: LearnerSpec | list[LearnerSpec] | None = None,
          g_floor: float = 1e-3, randomized: bool = True,
          upto: int | None = None, seed: int = 0, validate: bool = True,
          n_folds: int = 10) -> GFit:
    """Fit the treatment and censoring mechanisms per visit.

    Shortcuts: the baseline randomized assignment is the known constant 1/2
    under ``randomized``; a post-baseline randomized-treatment column equal
    to the arm for every observed subject is treated as deterministic
    adherence; constant responses (e.g. no censoring anywhere) fit to the
    empirical constant.  Everything else is a logistic fit on at-risk rows.
    """
    learner = LearnerSpec() if learner is None else learner
    if validate:
        report = validate_panel(panel)
        if not report.ok:
            v = report.violations[0]
            raise EstimationError(
                f"panel fails validation: {v.message} (subject {v.subject})")
    K = panel.K if upto is None else upto
    base_spec = learner[0] if isinstance(learner, (list, tuple)) else learner

    a_mechs, z_mechs, c_mechs = [], [], []
    for k in range(K):
        if k == 0:
            mask = np.ones(panel.n, dtype=bool)
        else:
            mask = (at_risk_mask(panel, k) & (panel.y_at(k) == 0)
                    & (panel.d_at(k) == 0) & (panel.c_at(k) == 0))
        if not mask.any():
            raise EstimationError(f"no at-risk subjects carry treatment at visit {k}")
        if k == 0 and randomized:
            a_mechs.append(_Mech(kind="randomized"))
        else:
            a_obs = panel.a_at(k)[mask]
            if k >= 1 and np.array_equal(a_obs, panel.A0[mask]):
                a_mechs.append(_Mech(kind="adherence"))
            else:
                a_mechs.append(_fit_mech(panel, "A", k, mask, learner, seed, n_folds))
        z_mechs.append(_fit_mech(panel, "Z", k, mask, learner, seed, n_folds))

    for k in range(1, K + 1):
        mask = at_risk_mask(panel, k)
        if not mask.any():
            raise EstimationError(f"empty at-risk set at visit {k}")
        c_mechs.append(_fit_mech(panel, "C", k, mask, learner, seed, n_folds))

    return GFit(a_mechs=a_mechs, z_mechs=z_mechs, c_mechs=c_mechs,
                features=base_spec.features, g_floor=g_floor, randomized=randomized)


# ---------------------------------------------------------------------------
# Clever weights


def _gstar_numerator_z(panel, spec: InterventionSpec, j: int) -> np.ndarray | None:
    """g*(observed Z_j | history) for an intervened concomitant node, or None
    when the node is observational (ratio cancels exactly)."""
    if not spec.intervenes_at(j):
        return None
    obs = panel.z_at(j).astype(float)
    if spec.form == "static":
        return (obs == spec.value).astype(float)
    if spec.form == "dynamic":
        return (obs == panel.Z0).astype(float)
    if not spec.fitted:
        raise EstimationError("stochastic intervention queried before fitting")
    p1 = clip_probs(spec.models[j].predict(gstar_design(panel, j)))
    return np.where(obs == 1.0, p1, 1.0 - p1)


def _per_visit_factors(panel, gfit: GFit, policy: ArmPolicy, horizon: int):
    """Treatment ratio per node index 0..horizon-1 and censoring factor per
    visit 1..horizon, as full-length vectors (garbage on absorbed rows is
    cut off later by the at-risk indicator)."""
    treat = []
    for j in range(horizon):
        used = at_risk_mask(panel, j + 1) if j >= 1 else np.ones(panel.n, dtype=bool)
        ratio = np.ones(panel.n)
        if policy.a_intervenes():
            num = (panel.a_at(j) == policy.a_value).astype(float)
            ratio = ratio * num / gfit.prob_observed_a(panel, j, used)
        z_num = _gstar_numerator_z(panel, policy.z_spec, j)
        if z_num is not None:
            ratio = ratio * z_num / gfit.prob_observed_z(panel, j, used)
        treat.append(ratio)
    cens = []
    for k in range(1, horizon + 1):
        used = at_risk_mask(panel, k)
        uncens = (panel.c_at(k) == 0).astype(float)
        cens.append(uncens / gfit.prob_uncensored(panel, k, used))
    return treat, cens


def clever_weight_path(panel, gfit, policy, horizon, weight_cap=None):
    """Clever weights H_l for every step l = 1..horizon, shape (horizon, n).

    H_l = 1{no event/death before l} * prod_{j<=l} 1{C_j=0}/g_C_j(0|.)
        * prod_{j<l} g*_{A_j,Z_j}(obs)/g_{A_j,Z_j}(obs).
    """
    treat, cens = _per_visit_factors(panel, gfit, policy, horizon)
    n = panel.n
    H = np.zeros((horizon, n))
    cum_treat = np.ones(n)
    cum_cens = np.ones(n)
    for l in range(1, horizon + 1):
        cum_treat = cum_treat * treat[l - 1]    # treatment nodes through l-1
        cum_cens = cum_cens * cens[l - 1]       # censoring through l
        H[l - 1] = at_risk_mask(panel, l) * cum_treat * cum_cens
    if weight_cap is not None:
        H = np.minimum(H, weight_cap)
    return H


def clever_weights(panel, gfit, policy, k, weight_cap=None):
    """Clever weights for the step-k targeting (nonnegative, zero off-policy)."""
    return clever_weight_path(panel, gfit, policy, k, weight_cap)[k - 1]


def support_diagnostics(panel, gfit, policy, horizon=None, threshold=50.0,
                        weight_cap=None):
    """Per-visit weight-tail summary: max, 99th percentile, share above the
    near-violation threshold among positive weights."""
    horizon = panel.K if horizon is None else horizon
    H = clever_weight_path(panel, gfit, policy, horizon, weight_cap)
    rows = []
    for l in range(1, horizon + 1):
        h = H[l - 1]
        pos = h[h > 0]
        rows.append({
            "visit": l,
            "max_weight": float(pos.max()) if pos.size else 0.0,
            "p99_weight": float(np.percentile(pos, 99)) if pos.size else 0.0,
            "frac_above": float(np.mean(pos > threshold)) if pos.size else 0.0,
            "n_positive": int(pos.size),
        })
    return rows


# ---------------------------------------------------------------------------
# Sequential targeted estimation


@dataclass
class ArmEstimate:
    """One arm's estimate: plug-in mean, influence-curve values, diagnostics."""

    psi: float
    eic: np.ndarray | None
    targeted: bool
    horizon: int
    n: int = 0
    policy_name: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean_eic(self) -> float:
        return float(np.mean(self.eic)) if self.eic is not None else float("nan")


def _margin_options(panel, policy, j):
    """Integration support for the visit-j treatment pair.

    Returns (a_options, z_options): lists of (substitution, weight) where the
    substitution is None (keep observed column), a scalar, or a per-subject
    vector, and the weight is a scalar or vector of interventional
    probabilities.
    """
    if policy.a_intervenes():
        a_opts = [(float(policy.a_value), 1.0)]
    else:
        a_opts = [(None, 1.0)]
    spec = policy.z_spec
    if not spec.intervenes_at(j):
        z_opts = [(None, 1.0)]
    elif spec.form == "static":
        z_opts = [(float(spec.value), 1.0)]
    elif spec.form == "dynamic":
        z_opts = [(panel.Z0.astype(float), 1.0)]
    else:
        if not spec.fitted:
            raise EstimationError("stochastic intervention queried before fitting")
        p1 = clip_probs(spec.models[j].predict(gstar_design(panel, j)))
        z_opts = [(0.0, 1.0 - p1), (1.0, p1)]
    return a_opts, z_opts


def _fit_step(panel, l, pseudo, mask, learner, seed, n_folds=10):
    """Regress the step-l pseudo-outcome on history among observable rows."""
    y = pseudo[mask]
    if np.all(y == y[0]):
        return fit_constant(y), None
    specs = learner if isinstance(learner, (list, tuple)) else [learner]
    if len(specs) == 1:
        design = history_design(panel, specs[0].features, treat_upto=l - 1)[mask]
        model = fit_binary_glm(design, y, max_iter=specs[0].max_iter,
                               tol=specs[0].tol, ridge=specs[0].ridge)
        return model, specs[0].features
    candidates = [(s.label, history_design(panel, s.features, treat_upto=l - 1)[mask])
                  for s in specs]
    sel = fit_discrete_super_learner(candidates, y, n_folds=n_folds, seed=seed + l,
                                     max_iter=specs[0].max_iter)
    chosen = next(s for s in specs if s.label == sel.name)
    return sel.model, chosen.features


def _predict_step(panel, model, features, l, sub_a=None, sub_z=None):
    if model.constant is not None:
        return np.full(panel.n, model.constant)
    design = history_design(panel, features, treat_upto=l - 1,
                            sub_a=sub_a, sub_z=sub_z)
    return model.predict(design)


def tmle_arm(panel: TrialPanel, gfit: GFit, policy: ArmPolicy,
             learner: LearnerSpec | list[LearnerSpec] | None = None,
             horizon: int | None = None, *, targeted: bool = True,
             weight_cap: float | None = None, seed: int = 0,
             n_folds: int = 10) -> ArmEstimate:
    """Targeted (or plain sequential-regression) estimate for one arm.

    With ``targeted`` False the fluctuation steps are skipped, giving the
    non-targeted g-computation estimator; no influence-curve values or
    variance are attached in that case.
    """
    learner = LearnerSpec() if learner is None else learner
    horizon = panel.K if horizon is None else horizon
    if not 1 <= horizon <= panel.K:
        raise ValueError(f"horizon must lie in 1..{panel.K}")
    n = panel.n

    H = clever_weight_path(panel, gfit, policy, horizon, weight_cap) if targeted else None

    pseudo = panel.y_at(horizon).astype(float)
    eic = np.zeros(n) if targeted else None
    epsilons, fluct_ok, step_scores, at_risk_counts = [], [], [], []

    for l in range(horizon, 0, -1):
        risk = at_risk_mask(panel, l)
        obs_mask = risk & (panel.c_at(l) == 0)
        at_risk_counts.append(int(obs_mask.sum()))
        if not obs_mask.any():
            raise EstimationError(f"empty at-risk set at step {l}")

        model, feats = _fit_step(panel, l, pseudo, obs_mask, learner, seed, n_folds)
        preds = _predict_step(panel, model, feats, l)

        if targeted and model.constant is None:
            offset = logit(clip_probs(preds))
            h = H[l - 1]
            eps, ok = fit_intercept_fluctuation(pseudo[obs_mask], offset[obs_mask],
                                                h[obs_mask])
            preds_upd = expit(offset + eps)
            score = float(np.sum(h[obs_mask]
                                 * (pseudo[obs_mask] - preds_upd[obs_mask])) / n)
            eic += np.where(obs_mask, h * (pseudo - preds_upd), 0.0)
        elif targeted:
            # degenerate response: the regression is exact, the weighted
            # score already vanishes, and the update is a no-op
            h = H[l - 1]
            eps, ok = 0.0, True
            preds_upd = preds
            score = float(np.sum(h[obs_mask] * (pseudo[obs_mask] - preds_upd[obs_mask])) / n)
            eic += np.where(obs_mask, h * (pseudo - preds_upd), 0.0)
        else:
            eps, ok, score = 0.0, True, 0.0
            preds_upd = preds
        epsilons.append(eps)
        fluct_ok.append(ok)
        step_scores.append(score)

        # marginalize the visit-(l-1) treatment pair under the arm's laws,
        # splicing prior events (value 1) and prior deaths (value 0)
        a_opts, z_opts = _margin_options(panel, policy, l - 1)
        marg = np.zeros(n)
        for a_sub, a_w in a_opts:
            for z_sub, z_w in z_opts:
                p = _predict_step(panel, model, feats, l, sub_a=a_sub, sub_z=z_sub)
                if targeted and model.constant is None:
                    p = expit(logit(clip_probs(p)) + eps)
                marg = marg + (a_w * z_w) * p

        if l - 1 >= 1:
            y_prev = panel.y_at(l - 1).astype(bool)
            d_prev = panel.d_at(l - 1).astype(bool)
            nxt = np.where(y_prev, 1.0, np.where(d_prev, 0.0, marg))
        else:
            nxt = marg
        pseudo = nxt

    psi = float(np.mean(pseudo))
    if targeted:
        eic += pseudo - psi
    diagnostics = {
        "epsilons": epsilons[::-1],
        "fluct_converged": bool(all(fluct_ok)),
        "step_scores": step_scores[::-1],
        "at_risk_counts": at_risk_counts[::-1],
        "floored_counts": dict(gfit.floored_counts),
        "mean_eic": float(np.mean(eic)) if eic is not None else None,
    }
    if targeted:
        diagnostics["weights"] = support_diagnostics(panel, gfit, policy, horizon,
                                                     weight_cap=weight_cap)
        if abs(diagnostics["mean_eic"]) > 1e-6:
            warnings.warn(f"influence-curve equation poorly solved: "
                          f"mean={diagnostics['mean_eic']:.3e}")
    return ArmEstimate(psi=psi, eic=eic, targeted=targeted, horizon=horizon,
                       n=n, policy_name=policy.name, diagnostics=diagnostics)


def gcomp_arm(panel, gfit, policy, learner=None, horizon=None, seed=0) -> ArmEstimate:
    """Non-targeted sequential g-computation (no fluctuation, no variance)."""
    return tmle_arm(panel, gfit, policy, learner, horizon, targeted=False, seed=seed)


# ---------------------------------------------------------------------------
# Contrasts and reports


@dataclass
class EstimateReport:
    """Risk-difference report for one balancing intervention."""

    policy: str
    horizon: int
    n: int
    risk1: float
    risk0: float
    psi: float
    se: float | None
    ci_low: float | None
    ci_high: float | None
    targeted: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def r6(x):
            return None if x is None else float(f"{x:.6g}")
        return {
            "policy": self.policy,
            "horizon": self.horizon,
            "n": self.n,
            "risk1": r6(self.risk1),
            "risk0": r6(self.risk0),
            "psi": r6(self.psi),
            "se": r6(self.se),
            "ci_low": r6(self.ci_low),
            "ci_high": r6(self.ci_high),
            "targeted": self.targeted,
            "diagnostics": self.diagnostics,
        }


def contrast(active: ArmEstimate, control: ArmEstimate, policy: str = "") -> EstimateReport:
    """Risk difference between the hypothetical active and control arms, with
    influence-curve variance when both arms are targeted."""
    if active.horizon != control.horizon:
        raise ValueError("arms estimated at different horizons")
    psi = active.psi - control.psi
    se = ci_low = ci_high = None
    if active.eic is not None and control.eic is not None:
        if active.eic.shape != control.eic.shape:
            raise ValueError("arms estimated on different subject sets")
        diff = active.eic - control.eic
        se = float(np.std(diff, ddof=1) / np.sqrt(diff.shape[0]))
        ci_low, ci_high = psi - 1.96 * se, psi + 1.96 * se
    n = active.n
    diag = {
        "arm1": {k: v for k, v in active.diagnostics.items() if k != "weights"},
        "arm0": {k: v for k, v in control.diagnostics.items() if k != "weights"},
        "weights1": active.diagnostics.get("weights"),
        "weights0": control.diagnostics.get("weights"),
    }
    return EstimateReport(policy=policy, horizon=active.horizon, n=n,
                          risk1=active.psi, risk0=control.psi, psi=psi, se=se,
                          ci_low=ci_low, ci_high=ci_high,
                          targeted=active.targeted and control.targeted,
                          diagnostics=diag)
