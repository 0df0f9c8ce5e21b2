"""Shared fixtures: paper-figure graphs, oracle models, reduced bundles."""

import numpy as np
import pytest

from bugsmc.graph import Graph, Node, STOCHASTIC
from bugsmc.smc import Genealogy


@pytest.fixture(scope="session")
def fig_graph():
    """Seven-node fixture: one source state feeding two measurement layers.

    Declaration order X1, Y1, Y3, X3, X2, Y4, Y2 with edges
    X1->{Y1, Y3, X3}, {Y1, X3}->X2, X2->{Y4, Y2}.
    """
    nodes = []

    def add(name, observed, parents):
        nodes.append(Node(len(nodes), STOCHASTIC, name, (), parents=parents,
                          observed=observed, dist="dnorm",
                          value=np.float64(0.0) if observed else None))

    add("X1", False, [])
    add("Y1", True, [0])
    add("Y3", True, [0])
    add("X3", False, [0])
    add("X2", False, [1, 3])
    add("Y4", True, [4])
    add("Y2", True, [4])
    return Graph(nodes, {}, None)


@pytest.fixture(scope="session")
def tree_genealogy():
    """Six-particle, four-step genealogy with known ancestor partitions.

    0-based transition vectors; the step-1 ancestors of the final cloud all
    collapse onto particle index 2, the step-2 ancestors onto {2, 3}, and the
    step-3 ancestors partition the final indices as {0,1 | 2 | 3,4,5}.
    """
    transitions = [
        np.array([0, 1, 2, 2, 3, 4]),
        np.array([0, 0, 2, 3, 3, 4]),
        np.array([2, 2, 3, 4, 4, 4]),
    ]
    return Genealogy(transitions, n_particles=6)


def kalman_filter(y, rho, q=1.0, r=1.0):
    """Exact filter for x1 ~ N(0, q), x_t = rho x_{t-1} + N(0, q),
    y_t = x_t + N(0, r). Returns (loglik, filtering means, variances)."""
    loglik = 0.0
    means, variances = [], []
    m, p = 0.0, 0.0
    for t, yt in enumerate(y):
        m_pred = rho * m if t > 0 else 0.0
        p_pred = (rho * rho * p + q) if t > 0 else q
        s = p_pred + r
        loglik += -0.5 * (np.log(2.0 * np.pi * s) + (yt - m_pred) ** 2 / s)
        gain = p_pred / s
        m = m_pred + gain * (yt - m_pred)
        p = (1.0 - gain) * p_pred
        means.append(m)
        variances.append(p)
    return float(loglik), np.array(means), np.array(variances)


def hmm_forward(y, p0, trans, emit):
    """Exact forward pass; returns (loglik, filtering probabilities per t)."""
    p0 = np.asarray(p0, dtype=float)
    trans = np.asarray(trans, dtype=float)
    emit = np.asarray(emit, dtype=float)
    loglik = 0.0
    filt = []
    alpha = p0 * emit[:, int(y[0]) - 1]
    c = alpha.sum()
    loglik += np.log(c)
    alpha = alpha / c
    filt.append(alpha.copy())
    for t in range(1, len(y)):
        alpha = (alpha @ trans) * emit[:, int(y[t]) - 1]
        c = alpha.sum()
        loglik += np.log(c)
        alpha = alpha / c
        filt.append(alpha.copy())
    return float(loglik), np.array(filt)
