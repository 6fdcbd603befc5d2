"""Convex learners: ridge readout, hinge classifiers, association metric.

Everything a memory machine learns is convex and deterministic:

* :func:`fit_ridge` -- closed-form regularized least squares for the
  output readout, intercept unregularized via column centering.
* :func:`fit_classifier` -- one-vs-rest linear SVM (hinge loss, L2
  regularizer) for address and write decisions.
* :func:`derive_write_labels` -- binary write labels from teacher
  addresses (write exactly on first occurrence).
* :func:`fit_association_metric` -- the sparse linear program that
  weights delay-pair distances so reads trigger on matching memory
  content.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .errors import InvalidArgumentError, SingularSystemError, SolverFailureError
from .reservoir import DelayOperatorBank


@dataclass(frozen=True)
class RidgeReadout:
    """Affine readout ``y = V h + intercept`` fit by ridge regression."""

    weights: np.ndarray
    """Readout matrix ``V`` of shape ``(K, n)``."""

    intercept: np.ndarray
    """Unregularized offset, shape ``(K,)``."""

    ridge_lambda: float
    """Regularization strength the readout was fit with."""

    gradient_norm: float
    """Optimality certificate: norm of the objective gradient at the
    solution, relative to ``1 + ||targets||_F``."""

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Evaluate the readout on states of shape ``(..., n)``."""
        return np.asarray(states) @ self.weights.T + self.intercept


def fit_ridge(states: np.ndarray, targets: np.ndarray, ridge_lambda: float) -> RidgeReadout:
    """Solve ``min_V sum_t ||V h_t + c - y_t||^2 + lambda ||V||_F^2``.

    Solved in closed form on the column-centered problem (which leaves
    the intercept unregularized), via Cholesky factorization of the
    regularized Gram matrix with a small jitter retry on failure.
    """
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if states.ndim != 2 or targets.ndim != 2 or states.shape[0] != targets.shape[0]:
        raise InvalidArgumentError("states and targets must be (T, n) and (T, K)")
    if states.shape[0] < 1:
        raise InvalidArgumentError("at least one sample required")
    if not np.isfinite(ridge_lambda) or ridge_lambda < 0:
        raise InvalidArgumentError("lambda must be finite and non-negative")
    if not (np.isfinite(states).all() and np.isfinite(targets).all()):
        raise InvalidArgumentError("states and targets must be finite")

    state_mean = states.mean(axis=0)
    target_mean = targets.mean(axis=0)
    centered_states = states - state_mean
    centered_targets = targets - target_mean
    gram = centered_states.T @ centered_states
    gram[np.diag_indices_from(gram)] += ridge_lambda
    rhs = centered_states.T @ centered_targets

    trace = float(np.trace(gram))
    if trace == 0.0 and ridge_lambda == 0.0:
        raise SingularSystemError("all-zero states with zero regularization")
    try:
        solution = cho_solve(cho_factor(gram), rhs)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * trace
        gram[np.diag_indices_from(gram)] += jitter
        try:
            solution = cho_solve(cho_factor(gram), rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"Gram matrix not factorizable even with jitter {jitter:g}"
            ) from exc
    weights = solution.T
    intercept = target_mean - weights @ state_mean

    residual = states @ solution + intercept - targets
    grad_weights = 2.0 * (residual.T @ states) + 2.0 * ridge_lambda * weights
    grad_intercept = 2.0 * residual.sum(axis=0)
    scale = 1.0 + float(np.linalg.norm(targets))
    gradient_norm = float(
        np.sqrt(np.sum(grad_weights**2) + np.sum(grad_intercept**2)) / scale
    )
    return RidgeReadout(
        weights=weights,
        intercept=intercept,
        ridge_lambda=float(ridge_lambda),
        gradient_norm=gradient_norm,
    )


@dataclass(frozen=True)
class LinearClassifier:
    """Per-class linear scorer with deterministic lowest-label ties."""

    classes: np.ndarray
    """Sorted distinct training labels."""

    weights: np.ndarray
    """One score row per class, shape ``(n_classes, n)``."""

    biases: np.ndarray
    """Per-class score offsets."""

    hinge_c: float
    """Hinge-loss weight ``C`` used for training."""

    train_accuracy: float
    """Fraction of training points the fitted classifier labels correctly."""

    def scores(self, states: np.ndarray) -> np.ndarray:
        """Per-class decision scores for states of shape ``(..., n)``."""
        return np.asarray(states) @ self.weights.T + self.biases

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Predicted labels; argmax breaks ties towards the lowest label."""
        scores = self.scores(states)
        return self.classes[np.argmax(scores, axis=-1)]


def fit_classifier(states: np.ndarray, labels: np.ndarray, hinge_c: float) -> LinearClassifier:
    """Train a linear hinge-loss classifier.

    Two classes use the standard binary hinge SVM; three or more use the
    joint multiclass hinge (Crammer-Singer). The joint loss matters: it
    reaches zero training error whenever *any* linear scorer separates
    the data by argmax, whereas independent one-vs-rest problems can be
    unseparable even then. Both paths use deterministic dual coordinate
    descent (tolerance 1e-5, at most 10000 epochs, zero initialization).
    A single-label input yields a constant classifier rather than an
    error.
    """
    states = np.asarray(states, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if states.ndim != 2 or labels.shape != (states.shape[0],):
        raise InvalidArgumentError("states must be (T, n) with one label per row")
    if not np.isfinite(hinge_c) or hinge_c <= 0:
        raise InvalidArgumentError("C must be finite and positive")
    classes = np.unique(labels)
    if classes.size == 1:
        return LinearClassifier(
            classes=classes,
            weights=np.zeros((1, states.shape[1])),
            biases=np.zeros(1),
            hinge_c=float(hinge_c),
            train_accuracy=1.0,
        )
    if classes.size == 2:
        svc = LinearSVC(
            loss="hinge",
            C=hinge_c,
            tol=1e-5,
            max_iter=10000,
            random_state=0,
        )
    else:
        svc = LinearSVC(
            multi_class="crammer_singer",
            C=hinge_c,
            tol=1e-5,
            max_iter=10000,
            random_state=0,
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        svc.fit(states, labels)
    if classes.size == 2:
        # The solver fits one hyperplane; expand to per-class score rows
        # so prediction is a uniform argmax.
        weights = np.vstack([-svc.coef_[0], svc.coef_[0]])
        biases = np.array([-svc.intercept_[0], svc.intercept_[0]])
    else:
        weights = svc.coef_.copy()
        biases = svc.intercept_.copy()
    clf = LinearClassifier(
        classes=classes,
        weights=weights,
        biases=biases,
        hinge_c=float(hinge_c),
        train_accuracy=0.0,
    )
    accuracy = float(np.mean(clf.predict(states) == labels))
    return LinearClassifier(
        classes=classes,
        weights=weights,
        biases=biases,
        hinge_c=float(hinge_c),
        train_accuracy=accuracy,
    )


def derive_write_labels(addresses: np.ndarray) -> np.ndarray:
    """Binary write indicators: 1 exactly at first occurrences of a > 0."""
    addresses = np.asarray(addresses, dtype=int)
    if addresses.size and addresses.min() < 0:
        raise InvalidArgumentError("addresses must be non-negative")
    seen: set[int] = set()
    labels = np.zeros(addresses.size, dtype=int)
    for t, a in enumerate(addresses.tolist()):
        if a > 0 and a not in seen:
            labels[t] = 1
            seen.add(a)
    return labels


@dataclass(frozen=True)
class AssociationMetric:
    """Learned squared distance between a state and a memory slot.

    ``d^2(h, m) = sum_{t,t'} alpha[t, t'] * ||Phi_t h - Phi_{t'} m||^2``
    with a read triggered whenever ``d^2 <= theta``.
    """

    alpha: np.ndarray
    """Nonnegative delay-pair weights, shape ``(tau, tau)``."""

    theta: float
    """Nonnegative read threshold."""

    bank: DelayOperatorBank
    """Delay operators the distances are computed through."""

    l1_weight: float
    """L1 sparsity weight the metric was fit with."""

    objective: float
    """Optimal LP objective value."""

    duality_gap: float
    """|primal - dual| objective gap reported at the LP optimum."""

    def pair_costs(self, state: np.ndarray, slot: np.ndarray) -> np.ndarray:
        """Cost matrix ``c[t, t'] = ||Phi_t h - Phi_{t'} m||^2``."""
        phi_h = self.bank.reconstruct(np.asarray(state, float))
        phi_m = self.bank.reconstruct(np.asarray(slot, float))
        diff = phi_h[:, None, :] - phi_m[None, :, :]
        return np.sum(diff**2, axis=-1)

    def distances(self, state: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Squared distances from one state to each slot row."""
        slots = np.atleast_2d(np.asarray(slots, dtype=float))
        phi_h = self.bank.reconstruct(np.asarray(state, dtype=float))
        phi_m = self.bank.reconstruct(slots)  # (tau, L, m)
        # Expand the squared norm so the pairwise (t, t') sum is three
        # small contractions instead of a (tau, tau, L, m) intermediate.
        h_sq = np.sum(phi_h**2, axis=-1)  # (tau,)
        m_sq = np.sum(phi_m**2, axis=-1)  # (tau, L)
        cross = np.einsum("tm,slm->tsl", phi_h, phi_m)  # (tau, tau, L)
        row_weight = self.alpha.sum(axis=1)  # (tau,)
        col_weight = self.alpha.sum(axis=0)  # (tau,)
        return (
            row_weight @ h_sq
            + col_weight @ m_sq
            - 2.0 * np.einsum("ts,tsl->l", self.alpha, cross)
        )


def association_costs(
    states: np.ndarray, slots: np.ndarray, bank: DelayOperatorBank
) -> np.ndarray:
    """Delay-pair costs for aligned (state, slot) rows.

    Returns ``(N, tau, tau)`` with ``c[i, t, t'] =
    ||Phi_t h_i - Phi_{t'} m_i||^2``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    slots = np.atleast_2d(np.asarray(slots, dtype=float))
    phi_h = np.transpose(bank.reconstruct(states), (1, 0, 2))  # (N, tau, m)
    phi_m = np.transpose(bank.reconstruct(slots), (1, 0, 2))
    h_sq = np.sum(phi_h**2, axis=-1)  # (N, tau)
    m_sq = np.sum(phi_m**2, axis=-1)
    cross = np.einsum("ntm,nsm->nts", phi_h, phi_m)
    return h_sq[:, :, None] + m_sq[:, None, :] - 2.0 * cross


def fit_association_metric(
    triples: "list[tuple[np.ndarray, np.ndarray, int]]",
    bank: DelayOperatorBank,
    l1_weight: float = 1e-3,
) -> AssociationMetric:
    """Fit the read metric by linear programming.

    Each triple ``(h, m, z)`` demands ``d^2(h, m) <= theta - 1`` when
    ``z = +1`` and ``d^2 >= theta + 1`` when ``z = -1``, softened by a
    hinge slack. Variables are ``[vec(alpha), theta, slacks]``, all
    nonnegative; the objective is the total slack plus ``l1_weight``
    times the alpha mass. The slacks make the program always feasible.
    """
    if not triples:
        raise InvalidArgumentError("at least one association triple required")
    if not np.isfinite(l1_weight) or l1_weight < 0:
        raise InvalidArgumentError("l1 weight must be finite and non-negative")
    tau = len(bank.delays)
    z = np.array([int(t[2]) for t in triples])
    if not np.all(np.abs(z) == 1):
        raise InvalidArgumentError("triple signs must be +1 or -1")
    states = np.stack([np.asarray(t[0], dtype=float) for t in triples])
    slots = np.stack([np.asarray(t[1], dtype=float) for t in triples])
    costs = association_costs(states, slots, bank).reshape(len(triples), tau * tau)

    n_triples = len(triples)
    objective = np.concatenate(
        [np.full(tau * tau, l1_weight), [0.0], np.ones(n_triples)]
    )
    # Row i: z_i * (costs_i . alpha) - z_i * theta - s_i <= -1
    a_ub = sp.hstack(
        [
            sp.csr_matrix(z[:, None] * costs),
            sp.csr_matrix(-z[:, None].astype(float)),
            -sp.identity(n_triples, format="csr"),
        ],
        format="csr",
    )
    b_ub = np.full(n_triples, -1.0)
    result = linprog(objective, A_ub=a_ub, b_ub=b_ub, method="highs")
    if result.status != 0:
        raise SolverFailureError(
            f"association LP failed with status {result.status} "
            f"({result.message}; {result.nit} iterations)"
        )
    dual = result.ineqlin.marginals
    gap = float(abs(objective @ result.x - b_ub @ dual))
    alpha = np.maximum(result.x[: tau * tau], 0.0).reshape(tau, tau)
    theta = float(max(result.x[tau * tau], 0.0))
    return AssociationMetric(
        alpha=alpha,
        theta=theta,
        bank=bank,
        l1_weight=float(l1_weight),
        objective=float(result.fun),
        duality_gap=gap,
    )
