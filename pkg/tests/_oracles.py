"""Independent reference implementations used by the tests."""
import numpy as np
from scipy.optimize import minimize

from rangecp.kinematics import AgentState
from rangecp.scenario import NoiseModel, Trajectory, synth_pairwise_ranges


def stress_cost_grad(x, delta, r, shape):
    """Dense numpy cost and gradient of the FACT objective (all ordered pairs)."""
    X = x.reshape(shape)
    D = X[:, :, None, :] - X[:, None, :, :]
    dist = np.sqrt(np.sum(D * D, axis=-1))
    n = shape[1]
    off = ~np.eye(n, dtype=bool)[None]
    e = np.where(off, delta - dist, 0.0)
    cost = float(np.sum(e * e))
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(off & (dist > 0), -2 * e / dist, 0.0)
    # each unordered pair appears twice, so gradient doubles
    g = 2 * np.einsum("tij,tijk->tik", coef, D)
    A = X[:-2] + X[2:] - 2 * X[1:-1]
    cost += r * float(np.sum(A * A))
    gs = np.zeros_like(X)
    gs[:-2] += 2 * r * A
    gs[2:] += 2 * r * A
    gs[1:-1] -= 4 * r * A
    return cost, (g + gs).ravel()


def gradient_oracle(X0, delta, r):
    res = minimize(stress_cost_grad, np.asarray(X0, float).ravel(), args=(delta, r, X0.shape),
                   jac=True, method="L-BFGS-B",
                   options={"maxiter": 100_000, "maxfun": 200_000, "ftol": 1e-15, "gtol": 1e-11})
    return res.fun, res.x.reshape(X0.shape)


def random_instance(seed, n, T, sigma, rate=18.0):
    """Ranges of ``n`` constant-velocity agents over ``T`` epochs and a perturbed start."""
    rng = np.random.default_rng(seed)
    agents = [AgentState(rng.uniform(-5, 5, 2), rng.uniform(-1, 1, 2)) for _ in range(n)]
    traj = Trajectory.constant_velocity(agents, (T - 1) / rate)
    t = np.arange(T) / rate
    s = synth_pairwise_ranges(traj, NoiseModel(sigma), rng=rng, t=t)
    truth = traj.positions(t)
    X0 = truth + rng.normal(0, 0.3, truth.shape)
    return s.delta, X0, truth
