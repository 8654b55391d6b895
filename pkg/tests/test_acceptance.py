"""Acceptance suite: one test, and one PASS/FAIL summary line, per criterion.

Tolerances are pinned here; Monte Carlo sizes match the stated budgets.
"""
import itertools
import math

import numpy as np

from ldp_perm import cli, continuous as cont, harness, mechanisms as mech, stats
from ldp_perm.harness import ExperimentConfig
from ldp_perm.mechanisms import PrivacyBudget
from ldp_perm.rng import RngStream, random_permutations
from ldp_perm.stats import PooledSample

from test_stats import quadruple_sum_u

ALPHA = 0.05
REPS = 2000

# mpmath, 30 digits: (2 e^{1/2}/(e^{1/2}+1) - 1)^2 * ||p_X - p_Y||_2^2 at d = 4, kind 1, gamma = 0.5
EXPECTED_U_MEAN = 0.00374907194960137773267432624475


def pooled_se(*rates, reps=REPS):
    return math.sqrt(sum(r * (1 - r) / reps for r in rates))


def power(method, family, seed, **kw):
    return harness.estimate_power(ExperimentConfig(method, family, **kw), REPS, seed).rate


# 1 ------------------------------------------------------------------------

def test_criterion_01_type_one_error(acceptance):
    bound = 0.0625  # alpha + 2.5 binomial SE, rounded as stated
    cells = {
        "discrete_ni": ExperimentConfig("discrete_ni", "discrete_L1", d=4, eps=1.0, n1=100, n2=100),
        "discrete_i": ExperimentConfig("discrete_i", "discrete_L1", d=8, eps=1.0, n1=100, n2=100),
        "cont_ni": ExperimentConfig("cont_ni", "cosine", eps=1.0, n1=200, n2=200),
        "cont_i": ExperimentConfig("cont_i", "cosine", eps=1.0, n1=600, n2=600),
    }
    rates = {m: harness.estimate_power(cfg, REPS, RngStream(101).derive(i)).rate
             for i, (m, cfg) in enumerate(cells.items())}
    ok = all(r <= bound + 1e-12 for r in rates.values())
    detail = ", ".join(f"{m}={r:.4f}" for m, r in rates.items()) + f" (bound {bound:.4f})"
    assert acceptance(1, "type-I error at gamma=0", ok, detail)


# 2 ------------------------------------------------------------------------

def test_criterion_02_u_statistic_mean(acceptance):
    reps, n, d = 100_000, 20, 4
    b = PrivacyBudget(1.0)
    py = harness.make_discrete_alternative(d, 0.5, 1)
    root = RngStream(102)
    x = harness.sample_discrete(np.full(d, 1 / d), reps * n, root.derive(0))
    y = harness.sample_discrete(py, reps * n, root.derive(1))
    z = mech.unary_encode(x, d, b, root.derive(2)).reshape(reps, n, d)
    w = mech.unary_encode(y, d, b, root.derive(3)).reshape(reps, n, d)
    u = np.array([stats.u_statistic(z[r], w[r]) for r in range(reps)])
    se = u.std(ddof=1) / math.sqrt(reps)
    zscore = (u.mean() - EXPECTED_U_MEAN) / se
    assert acceptance(2, "U-statistic mean identity", abs(zscore) < 3,
                      f"mean={u.mean():.6f} target={EXPECTED_U_MEAN:.6f} z={zscore:+.2f} (tol 3 SE)")


# 3 ------------------------------------------------------------------------

def _atom_distribution(values):
    keys = np.round(np.asarray(values) / 1e-9).astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    return dict(zip(uniq.tolist(), (counts / counts.sum()).tolist()))


def test_criterion_03_oracle_equivalence(acceptance):
    g = np.random.default_rng(103)
    worst_u = 0.0
    for _ in range(100):
        n1, n2, d = g.integers(2, 6), g.integers(2, 6), g.integers(1, 4)
        z, w = g.normal(size=(n1, d)), g.normal(size=(n2, d))
        worst_u = max(worst_u, abs(stats.u_statistic(z, w) - quadruple_sum_u(z, w)))

    worst_tv = worst_p = 0.0
    for trial in range(5):
        pool = PooledSample(g.normal(size=(6, 2)), 3, 3)
        exact = harness.exhaustive_permutation_oracle(pool, "u_stat")
        sampled = stats.batch_statistics(pool, "u_stat", random_permutations(RngStream(103, (trial,)), 6, 10_000))
        pe, ps = _atom_distribution(exact.statistics), _atom_distribution(sampled)
        tv = 0.5 * sum(abs(pe.get(k, 0.0) - ps.get(k, 0.0)) for k in set(pe) | set(ps))
        worst_tv = max(worst_tv, tv)
        p_sampled = stats.permutation_pvalue(exact.observed, sampled)
        worst_p = max(worst_p, abs(p_sampled - exact.p_value))
    ok = worst_u < 1e-10 and worst_tv < 0.02
    assert acceptance(3, "closed form and sampled permutations vs brute force", ok,
                      f"max |U - quadruple sum|={worst_u:.1e} (tol 1e-10), max TV={worst_tv:.4f} (tol 0.02), "
                      f"max |p_sampled - p_exact|={worst_p:.4f}")


# 4 ------------------------------------------------------------------------

def _max_ratio(prob_table):
    # rows: inputs, columns: outputs
    p = np.asarray(prob_table)
    return max(float(p[:, j].max() / p[:, j].min()) for j in range(p.shape[1]))


def test_criterion_04_ldp_likelihood_ratios(acceptance):
    errors = {}
    for eps in (0.5, 1.0, 2.0):
        b = PrivacyBudget(eps)
        target = math.exp(eps)
        for d in (2, 3, 4):
            outputs = list(itertools.product((0, 1), repeat=d))
            table = [[mech.unary_encode_prob(np.array(z), x, b) for z in outputs] for x in range(1, d + 1)]
            errors[f"unary d={d} eps={eps}"] = abs(_max_ratio(table) - target)
        t = 0.7
        inputs = np.linspace(-2 * t, 2 * t, 41)
        table = [[mech.rr_truncated_prob(s, x, t, b) for s in (1, -1)] for x in inputs]
        errors[f"rr_truncated eps={eps}"] = abs(_max_ratio(table) - target)
        # rounding then vertex sampling; the mixture over rounded signs is worst at the corners
        for V in (1, 2, 3, 4):
            corners = list(itertools.product((-1, 1), repeat=V))
            grid = corners + [tuple(0.5 * c for c in corners[0]), tuple(0.0 for _ in range(V))]
            table = []
            for x in grid:
                p_round = [np.prod([(1 + xi * si) / 2 for xi, si in zip(x, sigma)]) for sigma in corners]
                table.append([sum(pr * mech.vertex_sample_prob(out, sigma, b) for pr, sigma in zip(p_round, corners))
                              for out in corners])
            errors[f"round+vertex V={V} eps={eps}"] = abs(_max_ratio(table) - target)
    worst = max(errors, key=errors.get)
    assert acceptance(4, "LDP likelihood ratios equal e^eps", errors[worst] < 1e-10,
                      f"{len(errors)} mechanism settings, worst |max ratio - e^eps|={errors[worst]:.1e} "
                      f"at {worst} (tol 1e-10)")


# 5 ------------------------------------------------------------------------

def _zmax(samples, target):
    samples = np.asarray(samples, float)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return float(np.max(np.abs(samples.mean(axis=0) - target) / se))


def test_criterion_05_mechanism_unbiasedness(acceptance):
    b = PrivacyBudget(1.0)
    root = RngStream(105)
    z = {}
    for i, x in enumerate((-0.9, 0.0, 0.3, 1.5)):
        z[f"rr_truncated x={x}"] = _zmax(mech.rr_truncated(np.full(1_000_000, x), 1.0, b, root.derive(0, i)),
                                          float(np.clip(x, -1, 1)))
    p = np.array([0.1, 0.2, 0.3, 0.4])
    enc = mech.unary_encode(harness.sample_discrete(p, 1_000_000, root.derive(1)), 4, b, root.derive(2))
    z["pmf estimator"] = _zmax(b.c_half * (enc - (1 - b.omega_half)), p)
    g = np.random.default_rng(105)
    for V in (3, 4):
        v = g.uniform(-1, 1, V)
        out = mech.privatize_bounded_vectors(np.tile(v, (200_000, 1)), 1.0, b, root.derive(3, V))
        z[f"vertex V={V}"] = _zmax(out, v)
        corner = np.where(g.random(V) < 0.5, -1.0, 1.0)
        z[f"vertex corner V={V}"] = _zmax(mech.vertex_sample(np.tile(corner, (200_000, 1)), 1.0, b,
                                                             root.derive(4, V)), corner)
    worst = max(z, key=z.get)
    assert acceptance(5, "mechanism unbiasedness", z[worst] < 3,
                      f"{len(z)} checks, worst |z|={z[worst]:.2f} at {worst} (tol 3 SE)")


# 6 ------------------------------------------------------------------------

def test_criterion_06_dimension_dependence(acceptance):
    rate = {}
    for d in (8, 32):
        seed = RngStream(11).derive(d)
        for m in ("discrete_ni", "discrete_i"):
            rate[m, d] = power(m, "discrete_L2", seed, d=d, eps=2.0, gamma=0.3, n1=250, n2=250)
    i_gap = abs(rate["discrete_i", 8] - rate["discrete_i", 32])
    i_tol = 0.05 + 2 * pooled_se(rate["discrete_i", 8], rate["discrete_i", 32])
    ni_drop = rate["discrete_ni", 8] - rate["discrete_ni", 32]
    ni_tol = 2 * pooled_se(rate["discrete_ni", 8], rate["discrete_ni", 32])
    ok = i_gap < i_tol and ni_drop > ni_tol
    assert acceptance(6, "interactive power flat in d, non-interactive drops", ok,
                      f"I d8={rate['discrete_i', 8]:.4f} d32={rate['discrete_i', 32]:.4f} gap={i_gap:.4f} "
                      f"(< {i_tol:.4f}); NI d8={rate['discrete_ni', 8]:.4f} d32={rate['discrete_ni', 32]:.4f} "
                      f"drop={ni_drop:.4f} (> {ni_tol:.4f})")


# 7 ------------------------------------------------------------------------

def test_criterion_07_truncation_robustness(acceptance):
    se_null = math.sqrt(ALPHA * (1 - ALPHA) / REPS)
    rate = {}
    for R in (1, 2, 3, 4):
        seed = RngStream(7).derive(R)
        for m in ("cont_ni", "cont_i"):
            rate[m, R] = power(m, "cosine", seed, k=2, eps=2.0, gamma=1.0, n1=500, n2=500, manual_R=R)
    low_ok = all(abs(rate[m, R] - ALPHA) <= 2 * se_null for m in ("cont_ni", "cont_i") for R in (1, 2, 3))
    se4 = math.sqrt(rate["cont_i", 4] * (1 - rate["cont_i", 4]) / REPS)
    high_ok = rate["cont_i", 4] - ALPHA > 3 * se4
    detail = "; ".join(f"R={R}: NI={rate['cont_ni', R]:.4f} I={rate['cont_i', R]:.4f}" for R in (1, 2, 3, 4))
    detail += f" (V<4 band {ALPHA:.2f}+-{2 * se_null:.4f}; V=4 needs I > {ALPHA + 3 * se4:.4f})"
    assert acceptance(7, "basis too small gives level alpha, V>=4 gives interactive power", low_ok and high_ok,
                      detail)


# 8 ------------------------------------------------------------------------

def test_criterion_08_binary_search(acceptance):
    delta, r = 0.02, 10_000
    res = harness.binary_search_separation(delta, r, harness.config_rejection_rate(ExperimentConfig("stub_coin")),
                                           RngStream(108))
    tol = delta + 3 * math.sqrt(0.25 / r)
    ok = abs(res.gamma_star - 0.5) <= tol
    assert acceptance(8, "binary search on the coin stub", ok,
                      f"gamma*={res.gamma_star:.5f} after {res.iterations} probes (0.5 +- {tol:.3f})")


# 9 ------------------------------------------------------------------------

def test_criterion_09_basis_and_enumeration(acceptance):
    worst_gram = 0.0
    for d, R, m in ((1, 8, 4096), (2, 4, 256), (3, 2, 32)):
        idx = cont.multi_index_set(d, R).indices
        idx = np.vstack([np.zeros((1, d), dtype=idx.dtype), idx])
        axis = (np.arange(m) + 0.5) / m
        pts = np.array(list(itertools.product(axis, repeat=d)))
        B = cont.basis_matrix(idx, pts)
        worst_gram = max(worst_gram, float(np.abs(B.T @ B / len(pts) - np.eye(len(idx))).max()))
    mismatches = 0
    for d in (1, 2, 3):
        for R in np.arange(0.5, 8.01, 0.25):
            top = int(math.floor(R))
            brute = [p for p in itertools.product(range(top + 1), repeat=d) if 0 < sum(c * c for c in p) <= R * R]
            mismatches += [tuple(r) for r in cont.multi_index_set(d, R).indices] != brute
    ok = worst_gram < 1e-6 and mismatches == 0
    assert acceptance(9, "basis orthonormality and index enumeration", ok,
                      f"max |Gram - I|={worst_gram:.1e} (tol 1e-6), enumeration mismatches={mismatches}/93")


# 10 -----------------------------------------------------------------------

def test_criterion_10_cli_determinism(acceptance, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text('{"method": ["discrete_ni", "discrete_i"], "family": "discrete_L1", "d": 8, "eps": 2,'
                    ' "gamma": [0.0, 0.5], "n1": 100, "n2": 100, "reps": 40, "B": 99, "seed": 2024}')
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    codes = (cli.main(["power", str(grid), "-o", str(serial)]),
             cli.main(["power", str(grid), "-o", str(parallel), "--workers", "2"]))
    a, b = serial.read_bytes(), parallel.read_bytes()
    rows = a.decode().strip().split("\n")
    ok = codes == (0, 0) and a == b and len(rows) == 5
    assert acceptance(10, "serial and parallel power runs are byte-identical", ok,
                      f"exit codes {codes}, {len(rows) - 1} rows, identical={a == b}")
