"""Finite-difference verification of every analytic gradient, plus loss identities.

Central differences with eps = 1e-5 in float64; the reported error for a
gradient block is max|analytic - numeric| / max(1e-8, max|analytic|,
max|numeric|).  Loss-level checks must stay below 1e-5, the composed
encoder-stack check below 1e-4 (depth loosens it).
"""

from __future__ import annotations

import numpy as np

from . import losses, model

EPS = 1e-5
LOSS_TOL = 1e-5
MODEL_TOL = 1e-4


def finite_difference(fn, X: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central-difference gradient of scalar fn w.r.t. every entry of X."""
    grad = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = X[idx]
        X[idx] = orig + eps
        f_plus = fn()
        X[idx] = orig - eps
        f_minus = fn()
        X[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(1e-8, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / denom


def _unit_rows(rng, n, d):
    M = rng.standard_normal((n, d))
    return M / np.linalg.norm(M, axis=1, keepdims=True)


def _check_inputs(fn, inputs: dict) -> float:
    """Max relative error over every differentiable input of one loss call."""
    out = fn()
    worst = 0.0
    for key, X in inputs.items():
        num = finite_difference(lambda: fn().value, X)
        worst = max(worst, rel_error(out.grads[key], num))
    return worst


def check_loss_gradients(n_instances: int = 100, seed: int = 0) -> dict:
    """Per-loss max relative FD error over random instances."""
    rng = np.random.default_rng(seed)
    report = {name: 0.0 for name in (
        "info_nce_direction",
        "info_nce_symmetric",
        "dcl_direction",
        "alignment_loss_unweighted",
        "weighted_alignment_loss",
        "multimodal_loss",
        "cross_entropy",
        "triplet_loss",
    )}
    for _ in range(n_instances):
        n = int(rng.integers(3, 7))
        d = int(rng.integers(4, 9))
        tau = float(rng.uniform(0.07, 1.0))
        sigma = float(rng.uniform(0.5, 2.0))
        Z1 = _unit_rows(rng, n, d)
        Z2 = _unit_rows(rng, n, d)
        D1 = _unit_rows(rng, n, d)
        D2 = _unit_rows(rng, n, d)

        report["info_nce_direction"] = max(
            report["info_nce_direction"],
            _check_inputs(lambda: losses.info_nce_direction(Z1, Z2, tau), {"z1": Z1, "z2": Z2}),
        )
        report["info_nce_symmetric"] = max(
            report["info_nce_symmetric"],
            _check_inputs(lambda: losses.info_nce_symmetric(Z1, Z2, tau), {"zf": Z1, "zt": Z2}),
        )
        report["dcl_direction"] = max(
            report["dcl_direction"],
            _check_inputs(lambda: losses.dcl_direction(Z1, Z2, tau), {"z1": Z1, "z2": Z2}),
        )
        report["alignment_loss_unweighted"] = max(
            report["alignment_loss_unweighted"],
            _check_inputs(
                lambda: losses.alignment_loss_unweighted(Z1, Z2, tau), {"zf": Z1, "zt": Z2}
            ),
        )
        # weights depend on D1/D2 only, which stay fixed while Z is perturbed
        report["weighted_alignment_loss"] = max(
            report["weighted_alignment_loss"],
            _check_inputs(
                lambda: losses.weighted_alignment_loss(Z1, Z2, D1, D2, tau, sigma),
                {"zf": Z1, "zt": Z2},
            ),
        )
        report["multimodal_loss"] = max(
            report["multimodal_loss"],
            _check_inputs(
                lambda: losses.multimodal_loss(Z1, D1, Z2, D2, tau), {"zf": Z1, "zt": Z2}
            ),
        )
        logits = rng.standard_normal((n, d))
        labels = rng.integers(0, d, size=n)
        report["cross_entropy"] = max(
            report["cross_entropy"],
            _check_inputs(lambda: losses.cross_entropy(logits, labels), {"logits": logits}),
        )
        report["triplet_loss"] = max(
            report["triplet_loss"],
            _triplet_instance_error(rng, n, d),
        )
    return report


def _triplet_instance_error(rng, n, d, margin=0.2) -> float:
    """FD check away from hinge kinks (slack and negative-choice margins > 1e-3)."""
    for _ in range(50):
        Zf = _unit_rows(rng, n, d)
        Zt = _unit_rows(rng, n, d)
        D2 = (
            np.sum(Zf * Zf, axis=1)[:, None]
            + np.sum(Zt * Zt, axis=1)[None, :]
            - 2.0 * Zf @ Zt.T
        )
        pos = np.diagonal(D2)
        off = D2.copy()
        np.fill_diagonal(off, np.inf)
        sorted_neg = np.sort(off, axis=1)
        slack = pos - sorted_neg[:, 0] + margin
        hinge_ok = np.all(np.abs(slack) > 1e-3)
        tie_ok = np.all(sorted_neg[:, 1] - sorted_neg[:, 0] > 1e-3)
        if hinge_ok and tie_ok:
            return _check_inputs(
                lambda: losses.triplet_loss(Zf, Zt, margin), {"zf": Zf, "zt": Zt}
            )
    return 0.0  # no smooth instance found; vanishingly unlikely for random draws


def check_model_gradients(n_instances: int = 20, seed: int = 1) -> float:
    """FD check of every parameter of a small two-stack composed objective."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_instances):
        n, t, feat, hidden, proj, n_cls = 3, 2, 3, 4, 3, 3
        stack_f = model.init_stack(feat, n_cls, proj, seed=1000 + k, hidden_dim=hidden, view="fpv")
        stack_t = model.init_stack(feat, n_cls, proj, seed=2000 + k, hidden_dim=hidden, view="tpv")
        Xf = rng.standard_normal((n, t, feat))
        Xt = rng.standard_normal((n, t, feat))
        y = rng.integers(0, n_cls, size=n)
        tau = 0.5

        def objective():
            Zf, _, cf = model.encode_batch(stack_f, Xf)
            Zt, _, ct = model.encode_batch(stack_t, Xt)
            ce = losses.cross_entropy(cf.logits, y)
            al = losses.dcl_direction(Zf, Zt, tau)
            return ce.value + al.value

        # analytic pass
        Zf, _, cf = model.encode_batch(stack_f, Xf)
        Zt, _, ct = model.encode_batch(stack_t, Xt)
        ce = losses.cross_entropy(cf.logits, y)
        al = losses.dcl_direction(Zf, Zt, tau)
        grads_f, _ = model.backward(stack_f, cf, al.grads["z1"], ce.grads["logits"])
        grads_t, _ = model.backward(stack_t, ct, al.grads["z2"], None)

        for stack, grads in ((stack_f, grads_f), (stack_t, grads_t)):
            analytic = []
            for mlp in (grads.f, grads.h, grads.g):
                analytic.extend(mlp.weights)
                analytic.extend(mlp.biases)
            for param, g in zip(stack.param_tensors(), analytic):
                num = finite_difference(objective, param)
                worst = max(worst, rel_error(g, num))
    return worst


def check_normalization_projector(n_instances: int = 50, seed: int = 2) -> float:
    """The pulled-back gradient through l2-normalization must be orthogonal to z."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_instances):
        stack = model.init_stack(4, 3, 3, seed=3000 + k, hidden_dim=4)
        X = rng.standard_normal((2, 2, 4))
        z, _, cache = model.encode_batch(stack, X)
        grad_z = rng.standard_normal(z.shape)
        inner = np.sum(grad_z * cache.z, axis=1, keepdims=True)
        d_zraw = (grad_z - inner * cache.z) / cache.norms[:, None]
        worst = max(worst, float(np.max(np.abs(np.sum(d_zraw * cache.z, axis=1)))))
    return worst


def run_all(n_loss_instances: int = 100, n_model_instances: int = 20, seed: int = 0):
    """Full gradient suite; returns (ok, report dict)."""
    loss_report = check_loss_gradients(n_loss_instances, seed)
    model_err = check_model_gradients(n_model_instances, seed + 1)
    proj_err = check_normalization_projector(seed=seed + 2)
    ok = all(err <= LOSS_TOL for err in loss_report.values())
    ok = ok and model_err <= MODEL_TOL and proj_err <= 1e-10
    report = {
        "losses": loss_report,
        "composed_model": model_err,
        "normalization_projector": proj_err,
        "loss_tolerance": LOSS_TOL,
        "model_tolerance": MODEL_TOL,
    }
    return ok, report
