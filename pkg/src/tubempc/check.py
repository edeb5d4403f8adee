"""Independent feasibility verification of a solved trajectory.

This module deliberately re-implements the tube recursion and the backoff
quadratic form with its own arithmetic instead of calling the solver-side
functions, so a bookkeeping bug in the solver cannot hide itself: the checker
re-linearizes the dynamics at the stored trajectory, re-propagates the
uncertainty from scratch and re-evaluates every constraint row with its
backoff.
"""

from dataclasses import dataclass

import numpy as np

from .integrators import discrete_step
from .ocp import eval_constraints


@dataclass
class Violation:
    node: int
    kind: str           # "constraint" or "dynamics"
    row: int = -1
    label: str = ""
    value: float = 0.0

    def describe(self):
        if self.kind == "dynamics":
            return f"node {self.node}: dynamics defect {self.value:.3e}"
        return f"node {self.node} row {self.row} ({self.label}): h + beta = {self.value:.3e}"


def check_solution(spec, cfg, xs, us, tol=1e-6):
    """Verify tightened feasibility of (xs, us); returns a list of Violations.

    Checks every constraint row h + beta <= tol (beta nonzero only on the
    tightening sets) and the multiple-shooting dynamics defects.  The tube is
    rebuilt from cfg.P0_bar along freshly computed linearizations.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    n_x = spec.model.n_x
    K = np.asarray(cfg.K, dtype=float)
    P = 0.5 * (np.asarray(cfg.P0_bar, dtype=float)
               + np.asarray(cfg.P0_bar, dtype=float).T)
    GWG = cfg.G @ cfg.W @ cfg.G.T

    violations = []
    for k in range(spec.N + 1):
        u_k = us[k] if k < spec.N else None
        vals, grads = eval_constraints(spec, k, xs[k], u_k)
        tight = set(cfg.tighten_idx_at(spec, k))
        labels = [r.label for r in spec.constraints_at(k).rows()]
        for i in range(vals.size):
            beta = 0.0
            if i in tight:
                # explicit quadratic form, written out independently
                v = grads[i][:n_x] + K.T.dot(grads[i][n_x:])
                quad = float(np.dot(v, P.dot(v)))
                beta = cfg.gamma * np.sqrt(max(quad, 0.0))
            if vals[i] + beta > tol:
                violations.append(Violation(node=k, kind="constraint", row=i,
                                            label=labels[i], value=float(vals[i] + beta)))
        if k < spec.N:
            res = discrete_step(spec.model, xs[k], us[k], spec.integrator)
            defect = float(np.max(np.abs(res.x_next - xs[k + 1])))
            if defect > tol:
                violations.append(Violation(node=k, kind="dynamics", value=defect))
            Acl = res.A + res.B.dot(K)
            P = Acl.dot(P).dot(Acl.T) + GWG
            P = 0.5 * (P + P.T)
    return violations
