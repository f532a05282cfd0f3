"""Per-cohort difference-in-differences estimates.

:func:`att_plugin` is the estimator used everywhere else. :func:`att_twfe_oracle`
refits the same quantity as a two-way fixed-effects regression and exists
only to cross-check it in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IncompletePanelError, SingularDesignError

__all__ = ["AttEstimate", "att_plugin"]


@dataclass(frozen=True)
class AttEstimate:
    cohort_id: str
    value: float
    n_treated: int
    n_control: int
    timing: tuple  # (policy_occasion, T_pre, T_post)

    def to_dict(self):
        return {"cohort": self.cohort_id, "value": self.value,
                "n_treated": self.n_treated, "n_control": self.n_control,
                "policy_occasion": self.timing[0], "T_pre": self.timing[1],
                "T_post": self.timing[2]}


def _block(panel, people, occasions):
    Y = panel.outcome_matrix(people, occasions)
    miss = np.isnan(Y)
    if miss.any():
        i, t = np.argwhere(miss)[0]
        raise IncompletePanelError(
            f"individual {people[i]!r} has no outcome at occasion {occasions[t]}",
            people[i], occasions[t])
    return Y


def _cohort_blocks(panel, cohort):
    spec = cohort.spec
    occ = list(spec.occasions)
    treated = sorted(cohort.treated_members)
    controls = [(u, sorted(cohort.members[u])) for u in cohort.control_units]
    Yt = _block(panel, treated, occ)
    Yc = [(u, _block(panel, ppl, occ)) for u, ppl in controls if ppl]
    return Yt, Yc


def att_plugin(panel, cohort):
    """Plug-in DiD estimate for one cohort.

    Treated post-mean minus treated pre-mean, minus the same contrast for
    all control person-time pooled together.

    Parameters
    ----------
    panel : PanelDataset
    cohort : Cohort

    Returns
    -------
    AttEstimate

    Raises
    ------
    IncompletePanelError
        A member lacks an outcome at a study occasion.
    """
    spec = cohort.spec
    Yt, Yc = _cohort_blocks(panel, cohort)
    Tp = spec.T_pre
    ctrl = np.vstack([Y for _, Y in Yc])
    value = ((Yt[:, Tp:].mean() - Yt[:, :Tp].mean())
             - (ctrl[:, Tp:].mean() - ctrl[:, :Tp].mean()))
    return AttEstimate(spec.treated_unit, float(value), cohort.n_treated,
                       cohort.n_control, (spec.policy_occasion, spec.T_pre, spec.T_post))


def att_twfe_oracle(panel, cohort):
    """Treatment coefficient from a two-way fixed-effects OLS fit.

    Regresses outcomes on unit intercepts, occasion dummies (first occasion
    dropped) and the treated-and-post indicator. Regressors are constant
    within (unit, occasion) cells, so the normal equations are assembled
    from cell counts and cell sums; this is the same least-squares problem
    as the person-level fit.

    Raises
    ------
    SingularDesignError
        Design is rank deficient beyond the dropped occasion dummy.
    """
    spec = cohort.spec
    Yt, Yc = _cohort_blocks(panel, cohort)
    T, Tp = spec.T_pre + spec.T_post, spec.T_pre
    blocks = [(spec.treated_unit, Yt, True)] + [(u, Y, False) for u, Y in Yc]
    k = len(blocks)
    p = k + (T - 1) + 1
    rows, w, s = [], [], []
    for j, (_, Y, treated) in enumerate(blocks):
        sums = Y.sum(axis=0)
        for t in range(T):
            x = np.zeros(p)
            x[j] = 1.0
            if t > 0:
                x[k + t - 1] = 1.0
            if treated and t >= Tp:
                x[-1] = 1.0
            rows.append(x)
            w.append(Y.shape[0])
            s.append(sums[t])
    X = np.array(rows)
    w = np.array(w, dtype=float)
    XtX = X.T @ (w[:, None] * X)
    Xty = X.T @ np.array(s)
    if np.linalg.matrix_rank(XtX) < p:
        raise SingularDesignError("two-way design is rank deficient")
    beta = scipy.linalg.solve(XtX, Xty, assume_a="pos")
    return float(beta[-1])
