"""Brute-force oracles and estimators for the distance bound and the weighted
flow-matching equivalence, plus the named verification suites behind the
``verify`` CLI subcommand.

Every check reports ``{check, pass, lhs, rhs, tolerance}`` so suites can be
consumed by scripts and CI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import linear_sum_assignment

from . import nn
from .nn import AdamConfig, MlpSpec


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 1:
            raise ValueError("sample set must be nonempty")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (pts.shape[0],) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise ValueError("weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", w)


def empirical_w2_sq(a: SampleSet, b: SampleSet) -> float:
    """Exact optimal-assignment mean squared transport cost between two
    equal-size uniform sample sets."""
    if a.weights is not None or b.weights is not None:
        raise ValueError("only uniform-weight sample sets are supported")
    pa, pb = a.points, b.points
    if pa.shape != pb.shape:
        raise ValueError(f"sample sets must match in size and dim: {pa.shape} vs {pb.shape}")
    cost = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def gaussian_w2_sq(mu1, cov1, mu2, cov2) -> float:
    """Closed-form squared W2 between Gaussians:
    ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2})."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    s1 = np.asarray(cov1, dtype=np.float64)
    s2 = np.asarray(cov2, dtype=np.float64)
    for s in (s1, s2):
        if not np.allclose(s, s.T):
            raise ValueError("covariances must be symmetric")
        if np.min(np.linalg.eigvalsh(s)) < -1e-10:
            raise ValueError("covariances must be positive semidefinite")
    root2 = np.real(sqrtm(s2))
    cross = np.real(sqrtm(root2 @ s1 @ root2))
    val = np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2.0 * cross)
    return float(max(val, 0.0))


def estimate_lipschitz(v_fn, points: np.ndarray, times: np.ndarray,
                       rng: np.random.Generator, n_pairs: int = 10_000,
                       inflation: float = 1.1) -> float:
    """Max finite-difference ratio ||v(t,a1)-v(t,a2)|| / ||a1-a2|| over random
    pairs drawn near the provided points, inflated by a safety factor."""
    pts = np.atleast_2d(points)
    idx = rng.integers(0, pts.shape[0], size=n_pairs)
    a1 = pts[idx] + 0.5 * rng.standard_normal((n_pairs, pts.shape[1]))
    a2 = a1 + 10.0 ** rng.uniform(-3, 0, size=(n_pairs, 1)) * rng.standard_normal((n_pairs, pts.shape[1]))
    t = rng.choice(times, size=n_pairs)
    dv = np.linalg.norm(v_fn(t, a1) - v_fn(t, a2), axis=1)
    da = np.linalg.norm(a1 - a2, axis=1)
    return float(inflation * np.max(dv / np.maximum(da, 1e-12)))


def w2_bound_rhs(v_fn, ref_actions: np.ndarray, noise: np.ndarray, lipschitz: float,
                 n_time: int = 20) -> float:
    """Monte-Carlo estimate of e^{2L} * integral over t of the expected squared
    velocity mismatch along the linear interpolation path.

    ``ref_actions`` are draws from the reference policy, paired with the
    standard-normal ``noise``; the reference velocity is a - a0.
    """
    a = np.atleast_2d(ref_actions)
    a0 = np.atleast_2d(noise)
    if a.shape != a0.shape:
        raise ValueError("ref_actions and noise must match in shape")
    target = a - a0
    # midpoint rule on the unit time interval
    ts = (np.arange(n_time) + 0.5) / n_time
    total = 0.0
    for t in ts:
        at = t * a + (1.0 - t) * a0
        diff = v_fn(np.full(a.shape[0], t), at) - target
        total += float(np.mean(np.sum(diff * diff, axis=1)))
    return float(np.exp(2.0 * lipschitz) * total / n_time)


@dataclass(frozen=True)
class GridSpec:
    low: float
    high: float
    bins: int

    def __post_init__(self):
        if self.high <= self.low or self.bins < 2:
            raise ValueError("need high > low and bins >= 2")

    def centers(self) -> np.ndarray:
        """Cell centers of the bins x bins square grid, row-major."""
        edges = np.linspace(self.low, self.high, self.bins + 1)
        c = 0.5 * (edges[:-1] + edges[1:])
        gx, gy = np.meshgrid(c, c, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def histogram(self, samples: np.ndarray) -> np.ndarray:
        h, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=self.bins,
                                 range=[[self.low, self.high], [self.low, self.high]])
        return h.ravel() / samples.shape[0]


def reweight_oracle(base_density_fn, weight_fn, grid: GridSpec) -> np.ndarray:
    """Discrete distribution proportional to base density times weight over the
    grid cells (the reweighted-policy prediction, normalization included)."""
    pts = grid.centers()
    mass = np.asarray(base_density_fn(pts), dtype=np.float64) \
        * np.asarray(weight_fn(pts), dtype=np.float64)
    if np.any(mass < 0):
        raise ValueError("weight function must be non-negative")
    z = mass.sum()
    if z <= 0:
        raise ValueError("degenerate input: no positive mass on the grid")
    return mass / z


def distribution_match_score(samples: np.ndarray, oracle: np.ndarray,
                             grid: GridSpec) -> float:
    """Total-variation distance between the sample histogram and the oracle."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    hist = grid.histogram(samples)
    return float(0.5 * np.sum(np.abs(hist - oracle)))


# ---------------------------------------------------------------------------
# verification suites


def _check(name: str, lhs: float, rhs: float, tolerance: float,
           mode: str = "abs") -> dict:
    if mode == "abs":
        ok = abs(lhs - rhs) <= tolerance
    elif mode == "le":
        ok = lhs <= rhs + tolerance
    elif mode == "rel":
        ok = abs(lhs - rhs) <= tolerance * max(abs(rhs), 1e-300)
    else:
        raise ValueError(mode)
    return {"check": name, "pass": bool(ok), "lhs": float(lhs), "rhs": float(rhs),
            "tolerance": float(tolerance)}


def fd_gradient_max_rel_error(spec: MlpSpec, seed: int, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference
    parameter gradients for one random network/input pair."""
    rng = np.random.default_rng(seed)
    params = nn.init_params(spec, seed)
    x = rng.standard_normal(spec.input_dim)
    cot = rng.standard_normal(spec.output_dim)
    nn.backward(params, spec, x, cot)
    analytic = params.gradients.copy()
    params.zero_grad()
    fd = np.zeros_like(analytic)
    base = params.values
    for i in range(base.shape[0]):
        orig = base[i]
        base[i] = orig + eps
        hi = float(nn.forward(params, spec, x) @ cot)
        base[i] = orig - eps
        lo = float(nn.forward(params, spec, x) @ cot)
        base[i] = orig
        fd[i] = (hi - lo) / (2.0 * eps)
    scale = np.maximum(np.abs(fd), 1.0)
    return float(np.max(np.abs(analytic - fd) / scale))


def suite_gradients(n_configs: int = 20, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_configs):
        spec = MlpSpec(input_dim=int(rng.integers(1, 6)),
                       hidden_dim=int(rng.integers(2, 9)),
                       hidden_layers=int(rng.integers(1, 4)),
                       output_dim=int(rng.integers(1, 4)),
                       activation=["mish", "elu"][i % 2])
        worst = max(worst, fd_gradient_max_rel_error(spec, seed=1000 + i))
    return [_check("gradient_fd_max_rel_error", worst, 0.0, 1e-4)]


def suite_flow(seed: int = 0) -> list[dict]:
    from .flow import FlowConfig, VelocityField, sample_action

    rng = np.random.default_rng(seed)
    checks = []
    big = 1e6
    cfg_for = lambda n: FlowConfig(flow_steps=n, action_low=np.array([-big, -big]),
                                   action_high=np.array([big, big]))

    # constant-field transport: a1 = a0 + c for any N
    c = np.array([0.7, -1.3])

    class ConstField:
        state_dim, action_dim = 1, 2
        def evaluate(self, t, states, actions):
            return np.broadcast_to(c, np.atleast_2d(actions).shape)

    worst = 0.0
    for n_steps in (1, 2, 5, 10):
        a0 = rng.standard_normal((16, 2))
        s = np.zeros((16, 1))
        out = sample_action(ConstField(), s, a0, cfg_for(n_steps)).action
        worst = max(worst, float(np.max(np.abs(out - (a0 + c)))))
    checks.append(_check("constant_field_transport", worst, 0.0, 1e-12))

    # linear decay v = -a: midpoint recurrence a <- a (1 - h + h^2/2)
    class DecayField:
        state_dim, action_dim = 1, 2
        def evaluate(self, t, states, actions):
            return -np.atleast_2d(actions)

    n_steps = 10
    h = 1.0 / n_steps
    factor = (1.0 - h + 0.5 * h * h) ** n_steps
    a0 = rng.standard_normal((16, 2))
    out = sample_action(DecayField(), np.zeros((16, 1)), a0, cfg_for(n_steps)).action
    checks.append(_check("linear_decay_recurrence",
                         float(np.max(np.abs(out - a0 * factor))), 0.0, 1e-12))

    # determinism of a real network field
    vf = VelocityField.create(1, 2, hidden_dim=16, hidden_layers=2, seed=3)
    s = rng.standard_normal((8, 1))
    a0 = rng.standard_normal((8, 2))
    cfg = FlowConfig(flow_steps=5, action_low=np.array([-5.0, -5.0]),
                     action_high=np.array([5.0, 5.0]))
    d = np.max(np.abs(sample_action(vf, s, a0, cfg).action -
                      sample_action(vf, s, a0, cfg).action))
    checks.append(_check("sampler_determinism", float(d), 0.0, 0.0))
    return checks


def suite_w2(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []
    pts = rng.standard_normal((8, 3))
    checks.append(_check("w2_identity", empirical_w2_sq(SampleSet(pts), SampleSet(pts.copy())), 0.0, 1e-12))
    checks.append(_check("w2_single_pair",
                         empirical_w2_sq(SampleSet(np.array([[0.0, 0.0]])),
                                         SampleSet(np.array([[3.0, 4.0]]))), 25.0, 1e-12))
    checks.append(_check("w2_two_point_assignment",
                         empirical_w2_sq(SampleSet(np.array([[0.0, 0.0], [2.0, 0.0]])),
                                         SampleSet(np.array([[1.0, 0.0], [3.0, 0.0]]))),
                         1.0, 1e-12))
    checks.append(_check("gaussian_w2_identical",
                         gaussian_w2_sq([0, 0], np.eye(2), [0, 0], np.eye(2)), 0.0, 1e-9))
    checks.append(_check("gaussian_w2_mean_shift",
                         gaussian_w2_sq([0, 0], np.eye(2), [3, 4], np.eye(2)), 25.0, 1e-9))
    checks.append(_check("gaussian_w2_cov_scale",
                         gaussian_w2_sq([1, 1], 4 * np.eye(2), [1, 1], np.eye(2)), 2.0, 1e-9))

    # estimator consistency on random Gaussian pairs
    worst_rel = 0.0
    for i in range(5):
        dim = 2
        mu1 = rng.uniform(-2, 2, dim)
        mu2 = rng.uniform(-2, 2, dim)
        a1 = rng.uniform(0.5, 1.5, (dim, dim))
        a2 = rng.uniform(0.5, 1.5, (dim, dim))
        c1 = a1 @ a1.T + 0.5 * np.eye(dim)
        c2 = a2 @ a2.T + 0.5 * np.eye(dim)
        exact = gaussian_w2_sq(mu1, c1, mu2, c2)
        n = 2000
        sa = rng.multivariate_normal(mu1, c1, size=n)
        sb = rng.multivariate_normal(mu2, c2, size=n)
        est = empirical_w2_sq(SampleSet(sa), SampleSet(sb))
        worst_rel = max(worst_rel, abs(est - exact) / exact)
    checks.append(_check("w2_estimator_consistency_rel_error", worst_rel, 0.0, 0.10))
    return checks


def suite_expectile(seed: int = 0) -> list[dict]:
    from .values import CriticSet, ExpectileConfig, update_behavior_critics

    critics = CriticSet.create(state_dim=1, action_dim=1, hidden_dim=32,
                               hidden_layers=2, seed=seed)
    adam = AdamConfig(learning_rate=1e-3)
    # one state, two logged actions with returns {0, 10}; gamma=0 makes
    # Q_beta* regress to the rewards and V to the tau-expectile of {0, 10}
    s = np.zeros((2, 1))
    a = np.array([[-1.0], [1.0]])
    r = np.array([0.0, 10.0])
    s2 = np.zeros((2, 1))
    term = np.ones(2)
    for _ in range(4000):
        update_behavior_critics(critics, s, a, r, s2, term, gamma=0.0,
                                expectile_cfg=ExpectileConfig(tau=0.9), adam_cfg=adam)
    v = float(critics.v_value(np.zeros((1, 1)))[0])
    return [_check("expectile_two_value_fixture", v, 9.0, 0.05)]


def suite_bound(seed: int = 0) -> list[dict]:
    checks = []
    rng = np.random.default_rng(seed)
    # (a) analytic constant-field pair, L = 0: bound is tight
    c1 = np.array([1.0, -0.5])
    c2 = np.array([-0.3, 0.8])
    a0 = rng.standard_normal((256, 2))
    lhs = empirical_w2_sq(SampleSet(a0 + c1), SampleSet(a0 + c2))
    rhs = w2_bound_rhs(lambda t, a: np.broadcast_to(c1, a.shape),
                       ref_actions=a0 + c2, noise=a0, lipschitz=0.0)
    checks.append(_check("constant_field_bound_tight", lhs, rhs, 1e-9))
    checks.append(_check("constant_field_bound_value", rhs,
                         float(np.sum((c1 - c2) ** 2)), 1e-9))

    # (b) small trained field vs its reference distribution
    from .toy import train_cfm_sampler

    gmm_small = _SmallMixture()
    vf, _ = train_cfm_sampler(gmm_small.sample, state_dim=0, action_dim=2,
                              hidden_dim=32, hidden_layers=2, seed=seed,
                              iters=1500, batch=256, lr=1e-3, weight_fn=None,
                              rng=np.random.default_rng(seed + 1))
    a = gmm_small.sample(1000, rng)
    a0 = rng.standard_normal(a.shape)
    v_fn = lambda t, x: vf.evaluate(t, None, x)
    lip = estimate_lipschitz(v_fn, a, times=np.linspace(0, 1, 11),
                             rng=rng, n_pairs=10_000)
    rhs = w2_bound_rhs(v_fn, a, a0, lipschitz=lip)
    from .flow import FlowConfig, sample_action
    cfg = FlowConfig(flow_steps=20, action_low=np.array([-50.0, -50.0]),
                     action_high=np.array([50.0, 50.0]))
    gen = sample_action(vf, np.zeros((1000, 0)), a0, cfg).action
    lhs = empirical_w2_sq(SampleSet(gen), SampleSet(a))
    checks.append(_check("trained_field_bound_inequality", lhs, rhs, 0.0, mode="le"))
    return checks


class _SmallMixture:
    """Two-mode 2D Gaussian mixture used by the bound and CFM smoke suites."""

    means = np.array([[-2.0, 0.0], [2.0, 0.0]])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(0, 2, size=n)
        return self.means[comp] + 0.5 * rng.standard_normal((n, 2))


SUITES = {
    "gradients": suite_gradients,
    "flow": suite_flow,
    "w2": suite_w2,
    "expectile": suite_expectile,
    "bound": suite_bound,
}


def run_suite(name: str) -> list[dict]:
    if name == "all":
        out = []
        for key in SUITES:
            out.extend(run_suite(key))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; known: {sorted(SUITES)} or 'all'")
    return SUITES[name]()
