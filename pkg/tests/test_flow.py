import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgflow import dataio, flow, geom
from dgflow import numerics as nx
from dgflow.tsdvnet import NetConfig, TSDVNet

from _helpers import dist, model_gradient_error, random_coords


class OracleField:
    """Velocity model that returns the exact constant displacement D1 - D0."""

    def __init__(self, D1):
        self.D1 = np.asarray(D1)

    def __call__(self, Z, D_R, D_P, D_t, t, grad=False):
        return self.D1 - flow.initial_guess(D_R, D_P)


class LinearInTime:
    """v = 2 t (D1 - D0): integrates to D1 exactly, Euler lags by dt * (D1 - D0)."""

    def __init__(self, D1):
        self.D1 = np.asarray(D1)

    def __call__(self, Z, D_R, D_P, D_t, t, grad=False):
        return 2.0 * t * (self.D1 - flow.initial_guess(D_R, D_P))


def reaction(seed, n=5):
    gen = np.random.default_rng(seed)
    return [dist(random_coords(gen, n)) for _ in range(3)]


# initial guess and path sampling ----------------------------------------------

def test_initial_guess_basic():
    DR, DP, _ = reaction(0)
    np.testing.assert_array_equal(flow.initial_guess(DR, DR), DR)
    assert flow.initial_guess(np.array([[0, 1.0], [1.0, 0]]), np.array([[0, 3.0], [3.0, 0]]))[0, 1] == 2.0
    G = flow.initial_guess(DR, DP)
    np.testing.assert_array_equal(G, G.T)
    np.testing.assert_array_equal(np.diag(G), 0.0)


def test_initial_guess_size_mismatch():
    with pytest.raises(ValueError):
        flow.initial_guess(np.zeros((3, 3)), np.zeros((4, 4)))


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_noise_free_path_is_linear(t, seed):
    D0, D1, _ = reaction(seed % 50)
    Dt = flow.sample_path_point(D0, D1, t, 0.0, nx.rng(seed))
    np.testing.assert_allclose(Dt, (1 - t) * D0 + t * D1, rtol=0, atol=1e-12)


def test_path_endpoints():
    D0, D1, _ = reaction(1)
    np.testing.assert_array_equal(flow.sample_path_point(D0, D1, 0.0, 0.0, nx.rng(0)), D0)
    np.testing.assert_allclose(flow.sample_path_point(D0, D1, 1.0, 0.0, nx.rng(0)), D1, atol=1e-15)


def test_noisy_path_mean_and_shape():
    D0, D1, _ = reaction(2)
    D0, D1 = D0 + 3.0, D1 + 3.0  # keep far from the clamp so the mean is unbiased
    np.fill_diagonal(D0, 0.0)
    np.fill_diagonal(D1, 0.0)
    N, sigma, t = 10_000, 0.1, 0.3
    gen = nx.rng(3)
    S = flow.sample_path_point(np.broadcast_to(D0, (N, 5, 5)), np.broadcast_to(D1, (N, 5, 5)),
                               np.full(N, t), sigma, gen)
    mean = (1 - t) * D0 + t * D1
    assert np.max(np.abs(S.mean(0) - mean)) < 4 * sigma / np.sqrt(N)
    np.testing.assert_array_equal(S, np.swapaxes(S, 1, 2))
    assert np.all(S[:, np.arange(5), np.arange(5)] == 0)
    iu = np.triu_indices(5, 1)
    assert S[:, iu[0], iu[1]].std(0) == pytest.approx(np.full(10, sigma), rel=0.05)


def test_clamping_keeps_distances_nonnegative():
    D = np.full((4, 4), 0.01)
    np.fill_diagonal(D, 0)
    S = flow.sample_path_point(D, D, 0.5, 1.0, nx.rng(0))
    assert np.all(S >= 0)


# loss -------------------------------------------------------------------------

def make_batch(seeds, n=4):
    rs = [reaction(s, n) for s in seeds]
    Z = np.tile(np.array([1, 6, 7, 8, 6, 1, 8][:n]), (len(seeds), 1))
    return flow.Batch(Z, *(np.stack([r[k] for r in rs]) for k in range(3)))


def test_oracle_loss_is_zero():
    b = make_batch([0, 1, 2])
    oracle = lambda Z, DR, DP, Dt, t, grad=False: b.target
    assert flow.cfm_loss(oracle, b, np.full(3, 0.4), 0.0, nx.rng(0), grad=False) == 0.0


def test_zero_model_loss_formula():
    b = make_batch([3, 4])
    iu = np.triu_indices(4, 1)
    manual = np.mean([(b.D_TS[k] - b.D0[k])[iu] ** 2 for k in range(2)])
    assert flow.zero_model_loss(b) == pytest.approx(manual, rel=1e-14)
    got = flow.cfm_loss(flow.ZeroVelocity(), b, np.full(2, 0.7), 0.1, nx.rng(0), grad=False)
    assert got == pytest.approx(manual, rel=1e-14)


def test_loss_gradient_finite_differences():
    model = TSDVNet(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8), seed=5)
    assert model_gradient_error(model, np.random.default_rng(5)) < 1e-4


def test_oracle_loss_permutation_invariant():
    b = make_batch([5, 6], n=5)
    model = TSDVNet(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8), seed=1)
    perm = np.random.default_rng(0).permutation(5)
    bp = flow.Batch(b.Z[:, perm], *(M[:, perm][:, :, perm] for M in (b.D_R, b.D_P, b.D_TS)))
    t = np.array([0.2, 0.9])
    a = flow.cfm_loss(model, b, t, 0.0, nx.rng(0), grad=False)
    c = flow.cfm_loss(model, bp, t, 0.0, nx.rng(0), grad=False)
    assert a == pytest.approx(c, rel=1e-10)


# integration ------------------------------------------------------------------

@pytest.mark.parametrize("dt", [1.0, 0.5, 0.25, 0.1, 0.3])
def test_euler_exact_on_constant_field(dt):
    DR, DP, D1 = reaction(7)
    D = flow.integrate(OracleField(D1), None, DR, DP, dt)
    np.testing.assert_allclose(D, D1, rtol=0, atol=1e-12)


def test_euler_first_order_convergence():
    DR, DP, D1 = reaction(8)
    errs = [np.max(np.abs(flow.integrate(LinearInTime(D1), None, DR, DP, dt) - D1))
            for dt in (0.2, 0.1, 0.05)]
    gap = np.max(np.abs(D1 - flow.initial_guess(DR, DP)))
    assert errs[0] == pytest.approx(0.2 * gap, rel=1e-9)
    for a, b in zip(errs, errs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.2)


def test_trajectory_states_are_distance_matrices():
    DR, DP, D1 = reaction(9)
    rough = lambda Z, a, b, D, t, grad=False: np.random.default_rng(int(t * 100)).normal(size=D.shape) * 3
    _, states = flow.integrate(rough, None, DR, DP, 0.1, trajectory=True)
    assert len(states) == 11
    for S in states:
        geom.check_distance_matrix(S)


def test_integrate_rejects_bad_step_and_nan():
    DR, DP, D1 = reaction(10)
    with pytest.raises(ValueError):
        flow.integrate(OracleField(D1), None, DR, DP, 0.0)
    with pytest.raises(FloatingPointError):
        flow.integrate(lambda *a, **k: np.full_like(DR, np.nan), None, DR, DP, 0.5)


# end-to-end -------------------------------------------------------------------

def synthetic(size=6):
    return dataio.synth_reactions(dataio.SyntheticSpec(size=size), seed=11)


def test_predict_with_oracle_field_recovers_ts():
    for rec in synthetic(4):
        Dts = geom.pairwise_distances(rec.ts)
        pred = flow.predict_ts(OracleField(Dts), rec)
        assert geom.rmsd(pred.ts.R, rec.ts.R) < 1e-3 or geom.rmsd(-pred.ts.R, rec.ts.R) < 1e-3
        assert pred.steps == 10


def test_predict_degenerate_reaction_returns_reactant():
    R = random_coords(np.random.default_rng(1), 5)
    c = geom.Conformer([1, 6, 6, 8, 1], R)
    rec = dataio.ReactionRecord("x", c, c, c)
    pred = flow.predict_ts(flow.ZeroVelocity(), rec)
    assert min(geom.rmsd(pred.ts.R, R), geom.rmsd(-pred.ts.R, R)) < 1e-6


def test_predict_is_deterministic():
    rec = synthetic(1)[0]
    model = TSDVNet(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8), seed=2)
    a, b = flow.predict_ts(model, rec), flow.predict_ts(model, rec)
    np.testing.assert_array_equal(a.ts.R, b.ts.R)


def test_train_memorises_single_reaction(tmp_path):
    rec = synthetic(1)
    model = TSDVNet(NetConfig(n_blocks=1, atom_dim=16, pair_dim=16, n_rbf=16), seed=0)
    cfg = flow.TrainConfig(epochs=400, lr=3e-3, sigma=0.0, batch_size=1)
    res = flow.train(model, rec, rec, cfg, log_path=tmp_path / "log.csv")
    zero = flow.zero_model_loss(flow.make_batch(rec))
    assert res.best_val < 0.01 * zero
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "lr"]
    assert len(rows) == 401


def test_train_is_reproducible(tmp_path):
    recs = synthetic(6)
    logs = []
    for k in range(2):
        model = TSDVNet(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8), seed=0)
        flow.train(model, recs[:4], recs[4:], flow.TrainConfig(epochs=3, batch_size=2),
                   log_path=tmp_path / f"{k}.csv")
        logs.append((tmp_path / f"{k}.csv").read_bytes())
    assert logs[0] == logs[1]


def test_train_plateau_decay():
    recs = synthetic(4)
    model = TSDVNet(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8), seed=0)
    cfg = flow.TrainConfig(epochs=12, lr=1.0, patience=1, decay_factor=0.5, batch_size=4)
    try:
        res = flow.train(model, recs[:2], recs[2:], cfg)
    except flow.TrainingDiverged:
        pytest.skip("huge learning rate diverged before the schedule kicked in")
    lrs = [row["lr"] for row in res.log]
    assert lrs[-1] < lrs[0]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_writes_checkpoint(tmp_path):
    recs = synthetic(2)

    class Exploding(TSDVNet):
        def forward(self, *a, **k):
            return super().forward(*a, **k) * np.inf

    model = Exploding(NetConfig(n_blocks=1, atom_dim=8, pair_dim=8, n_rbf=8))
    with pytest.raises(flow.TrainingDiverged) as info:
        flow.train(model, recs[:1], recs[1:], flow.TrainConfig(epochs=1), checkpoint_dir=tmp_path)
    assert info.value.checkpoint and (tmp_path / "diverged.ckpt").exists()


def test_train_requires_data():
    with pytest.raises(ValueError):
        flow.train(None, [], synthetic(1), flow.TrainConfig())


@pytest.mark.parametrize("kw", [dict(sigma=-1.0), dict(decay_factor=1.0), dict(batch_size=0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        flow.TrainConfig(**kw)
