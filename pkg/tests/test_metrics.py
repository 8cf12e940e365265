import numpy as np
import pytest
import torch
from scipy import linalg as sla

from videdit import metrics, scenes
from videdit.metrics import (
    AttributeImageEmbedder,
    CodeFactorTable,
    RandomClassifier,
    RandomConvImageEmbedder,
    RandomVideoEmbedder,
    aam,
    frechet_distance,
    frechet_from_moments,
    inception_score,
    linear_fit_r2,
    mig,
    mp_score,
    mutual_information,
)
from videdit.textenc import TemplateTextEncoder

# -- mutual information -------------------------------------------------------


def test_mi_of_exact_copy_equals_factor_entropy():
    rng = np.random.default_rng(0)
    v = rng.integers(0, 3, size=3000)
    h = metrics.factor_entropy(v)
    assert abs(mutual_information(v.astype(float), v, bins=20) - h) < 1e-6


def test_mi_independent_columns_near_zero():
    rng = np.random.default_rng(1)
    z = rng.uniform(size=100_000)
    v = rng.integers(0, 10, size=100_000)
    assert mutual_information(z, v, bins=20) <= 0.02


def test_mi_constant_column_is_zero():
    v = np.tile(np.arange(4), 25)
    assert mutual_information(np.zeros(100), v) == 0.0


def test_mi_symmetric_for_discrete_pairs():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 4, size=5000)
    b = (a + rng.integers(0, 2, size=5000)) % 4
    ab = mutual_information(a.astype(float), b, bins=20)
    ba = mutual_information(b.astype(float), a, bins=20)
    assert abs(ab - ba) < 1e-9


def test_mi_validation():
    with pytest.raises(ValueError):
        mutual_information(np.arange(10.0), np.zeros(10))  # constant factor
    with pytest.raises(ValueError):
        mutual_information(np.arange(10.0), np.arange(8))
    with pytest.raises(ValueError):
        mutual_information(np.arange(10.0), np.arange(10), bins=1)


# -- MIG / AAM ------------------------------------------------------------------


def perfect_table(n=20_000, n_factors=3, noise_dims=3, seed=3):
    rng = np.random.default_rng(seed)
    factors = rng.integers(0, 4, size=(n, n_factors))
    codes = np.concatenate(
        [factors.astype(float) + 0.01 * rng.standard_normal((n, n_factors)),
         rng.standard_normal((n, noise_dims))], axis=1)
    return CodeFactorTable(codes=codes, factors=factors)


def test_mig_perfect_copy_high():
    assert mig(perfect_table()) >= 0.95


def test_mig_duplicated_dims_vanishes():
    rng = np.random.default_rng(4)
    factors = rng.integers(0, 4, size=(20_000, 2))
    codes = np.concatenate([factors, factors], axis=1).astype(float)
    assert mig(CodeFactorTable(codes=codes, factors=factors)) <= 0.01


def test_mig_noise_codes_low():
    rng = np.random.default_rng(5)
    factors = rng.integers(0, 4, size=(100_000, 3))
    codes = rng.standard_normal((100_000, 4))
    assert mig(CodeFactorTable(codes=codes, factors=factors)) <= 0.05


def test_aam_perfect_copy_high():
    assert aam(perfect_table()) >= 0.95


def test_aam_smeared_factor_zero():
    rng = np.random.default_rng(6)
    v = rng.integers(0, 4, size=30_000)
    codes = np.stack([v % 2, v // 2], axis=1).astype(float)
    table = CodeFactorTable(codes=codes, factors=v.reshape(-1, 1))
    assert aam(table) <= 0.02


def test_aam_single_dim_perfect_is_one():
    rng = np.random.default_rng(7)
    v = rng.integers(0, 5, size=5000)
    table = CodeFactorTable(codes=v.reshape(-1, 1).astype(float),
                            factors=v.reshape(-1, 1))
    assert aam(table) == pytest.approx(1.0)


def test_aam_second_only_mode():
    table = perfect_table()
    assert aam(table, mode="second_only") >= 0.95
    with pytest.raises(ValueError):
        aam(table, mode="third")


def test_table_alignment_checked():
    with pytest.raises(ValueError):
        CodeFactorTable(codes=np.zeros((3, 2)), factors=np.zeros((4, 1)))


def test_table_csv_roundtrip(tmp_path):
    t = perfect_table(n=50)
    t.dump(tmp_path / "codes.csv", tmp_path / "factors.csv")
    back = CodeFactorTable.load(tmp_path / "codes.csv", tmp_path / "factors.csv")
    assert np.allclose(back.codes, t.codes)
    assert np.array_equal(back.factors, t.factors)


# -- Frechet ---------------------------------------------------------------------


def test_frechet_same_samples_zero():
    rng = np.random.default_rng(8)
    feats = rng.standard_normal((500, 6))
    assert abs(frechet_distance(feats, feats.copy())) < 1e-6


def test_frechet_mean_shift_closed_form():
    d = 2.5
    mu_a, mu_b = np.zeros(4), np.array([d, 0.0, 0.0, 0.0])
    eye = np.eye(4)
    assert frechet_from_moments(mu_a, eye, mu_b, eye) == pytest.approx(d * d, abs=1e-10)


def test_frechet_symmetric():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((400, 5))
    b = rng.standard_normal((400, 5)) @ np.diag([1.0, 2.0, 0.5, 1.5, 1.0]) + 0.3
    ab = frechet_distance(a, b)
    ba = frechet_distance(b, a)
    assert ab == pytest.approx(ba, abs=1e-6)
    assert ab >= 0.0


def test_frechet_matches_scipy_sqrtm_oracle():
    # independent route: product form with a Schur-method matrix sqrt
    rng = np.random.default_rng(10)
    for _ in range(5):
        x = rng.standard_normal((6, 3))
        y = rng.standard_normal((7, 3))
        cov_a = x.T @ x / 5 + 0.1 * np.eye(3)
        cov_b = y.T @ y / 6 + 0.1 * np.eye(3)
        mu_a, mu_b = rng.standard_normal(3), rng.standard_normal(3)
        got = frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
        covmean = sla.sqrtm(cov_a @ cov_b)
        if np.iscomplexobj(covmean):
            covmean = covmean.real
        ref = float(((mu_a - mu_b) ** 2).sum()
                    + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(covmean))
        assert got == pytest.approx(ref, abs=1e-6)


def test_frechet_non_psd_raises():
    bad = np.array([[1.0, 0.0], [0.0, -0.5]])
    with pytest.raises(ValueError):
        frechet_from_moments(np.zeros(2), bad, np.zeros(2), np.eye(2))


def test_frechet_few_samples_regularized_with_warning():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((3, 8))   # fewer rows than dim+1
    b = rng.standard_normal((3, 8))
    with pytest.warns(UserWarning):
        val = frechet_distance(a, b)
    assert np.isfinite(val) and val >= 0.0


# -- inception score --------------------------------------------------------------


def test_is_uniform_rows_is_one():
    p = np.full((40, 7), 1.0 / 7)
    assert inception_score(p) == pytest.approx(1.0)


def test_is_distinct_onehots_equals_class_count():
    c = 6
    rows = np.eye(c)[np.tile(np.arange(c), 10)]
    assert inception_score(rows) == pytest.approx(float(c))


def test_is_matches_scalar_oracle():
    p = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    m = p.mean(axis=0)
    kl = [(row * (np.log(row) - np.log(m))).sum() for row in p]
    assert inception_score(p) == pytest.approx(float(np.exp(np.mean(kl))))


def test_is_bounds_and_validation():
    rng = np.random.default_rng(12)
    raw = rng.uniform(size=(30, 5))
    p = raw / raw.sum(axis=1, keepdims=True)
    val = inception_score(p)
    assert 1.0 <= val <= 5.0
    with pytest.raises(ValueError):
        inception_score(np.array([[0.5, 0.4]]))
    with pytest.raises(ValueError):
        inception_score(np.array([[1.2, -0.2]]))


# -- manipulation precision ---------------------------------------------------------


class StubText:
    def __init__(self, vec):
        self.vec = np.asarray(vec, dtype=float)

    def encode(self, text):
        return self.vec


class StubImage:
    def __init__(self, vec):
        self.vec = np.asarray(vec, dtype=float)

    def embed(self, img):
        return self.vec


def test_mp_identity_with_perfect_similarity():
    x = np.random.default_rng(0).uniform(size=(2, 3, 8, 8))
    s = mp_score(x, x.copy(), "t", StubText([1.0, 0.0]), StubImage([1.0, 0.0]))
    assert s == pytest.approx(1.0)


def test_mp_inverted_binary_is_zero():
    x = (np.random.default_rng(1).uniform(size=(1, 3, 8, 8)) > 0.5).astype(float)
    y = 1.0 - x
    s = mp_score(y, x, "t", StubText([1.0]), StubImage([1.0]))
    assert s == pytest.approx(0.0)


def test_mp_arithmetic_example():
    # mean |y - x| = 0.1 and similarity 0.9 -> 0.81
    x = np.zeros((1, 3, 10, 10))
    y = np.full((1, 3, 10, 10), 0.1)
    text_vec = np.array([0.9, np.sqrt(1 - 0.81)])
    s = mp_score(y, x, "t", StubText(text_vec), StubImage([1.0, 0.0]))
    assert s == pytest.approx(0.81)


def test_mp_monotone_in_pixel_change():
    x = np.zeros((1, 3, 8, 8))
    prev = 2.0
    for delta in (0.1, 0.2, 0.4, 0.8):
        y = np.full_like(x, delta)
        s = mp_score(y, x, "t", StubText([1.0]), StubImage([1.0]))
        assert s < prev
        prev = s


def test_mp_validates_range():
    x = np.zeros((1, 3, 4, 4))
    with pytest.raises(ValueError):
        mp_score(x + 2.0, x, "t", StubText([1.0]), StubImage([1.0]))


# -- embedders ------------------------------------------------------------------------


def test_random_image_embedder_deterministic():
    imgs = np.random.default_rng(2).uniform(size=(3, 3, 32, 32)).astype(np.float32)
    a = RandomConvImageEmbedder(seed=1).embed(imgs)
    b = RandomConvImageEmbedder(seed=1).embed(imgs)
    assert np.array_equal(a, b)
    assert a.shape == (3, 56)


def test_random_video_embedder_shape():
    clips = np.random.default_rng(3).uniform(size=(2, 5, 3, 32, 32)).astype(np.float32)
    out = RandomVideoEmbedder(seed=1).embed(clips)
    assert out.shape == (2, 24)
    assert np.array_equal(out, RandomVideoEmbedder(seed=1).embed(clips))


def test_random_classifier_rows_are_distributions():
    imgs = np.random.default_rng(4).uniform(size=(5, 3, 32, 32)).astype(np.float32)
    p = RandomClassifier(n_classes=7, seed=2).classify(imgs)
    assert p.shape == (5, 7)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all(p >= 0)


@pytest.mark.parametrize("resolution", [32, 64])
def test_attribute_embedder_reads_clean_renders(resolution):
    emb = AttributeImageEmbedder(resolution)
    rng = np.random.default_rng(5)
    for _ in range(40):
        f = scenes.FactorSpec(
            floor_color=int(rng.integers(10)), wall_color=int(rng.integers(10)),
            object_color=int(rng.integers(10)), scale=int(rng.integers(6)),
            shape=int(rng.integers(4)),
        )
        frame_idx = int(rng.integers(15))
        img = scenes.render_frame(f, frame_idx, resolution)
        attrs = emb.read_attributes(img)
        assert attrs == (f.object_color, f.scale // 2, f.shape)


def test_attribute_embedder_aligns_with_text_space():
    enc = TemplateTextEncoder()
    emb = AttributeImageEmbedder(32, enc)
    f = scenes.FactorSpec(2, 4, 7, 5, 3)
    img = scenes.render_frame(f, 7, 32)
    own = scenes.describe(f)[0]
    sim_own = metrics.cosine_similarity(emb.embed(img), enc.encode(own))
    assert sim_own == pytest.approx(1.0, abs=1e-9)
    other = "There is a big red capsule."
    sim_other = metrics.cosine_similarity(emb.embed(img), enc.encode(other))
    assert sim_other < sim_own


def test_attribute_embedder_fallback_on_blank_image():
    emb = AttributeImageEmbedder(32)
    blank = np.zeros((3, 32, 32))
    vec = emb.embed(blank)
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-9


# -- diagnostics ------------------------------------------------------------------------


def test_linear_fit_r2():
    t = np.linspace(0, 1, 20)
    assert linear_fit_r2(t, 3 * t + 1) == pytest.approx(1.0)
    rng = np.random.default_rng(6)
    assert linear_fit_r2(t, rng.standard_normal(20)) < 0.5
    with pytest.raises(ValueError):
        linear_fit_r2(t[:2], t[:2])


@pytest.fixture(scope="module")
def toy_setup():
    torch.manual_seed(0)
    from videdit.repnet import RepresentationNetwork

    net = RepresentationNetwork(
        dim_tr=3, dim_ti=2, dim_dyn=1, feature_dim=32, hidden_split=16, gru_hidden=16,
        ode_hidden=8, encoder_channels=(8, 8, 16, 16, 16), resolution=32,
    )
    clip = scenes.make_clip(scenes.FactorSpec(1, 2, 3, 4, 1), "t0", 32)
    return net, clip


def test_traversal_grid_shape_and_png(toy_setup, tmp_path):
    net, clip = toy_setup
    out = tmp_path / "grid.png"
    grid = metrics.traversal_grid(net, clip, dims=[0, 2], values=[-1.0, 0.0, 1.0],
                                  out_path=out)
    assert grid.shape == (3, 2 * 32, 3 * 32)
    assert out.exists()
    with pytest.raises(ValueError):
        metrics.traversal_grid(net, clip, dims=[99], values=[0.0])


def test_trajectory_report_csv_and_plot(toy_setup, tmp_path):
    net, clip = toy_setup
    csv_path, png_path = tmp_path / "traj.csv", tmp_path / "traj.png"
    report = metrics.dyn_trajectory_report(net, clip, np.linspace(0, 1, 15),
                                           out_csv=csv_path, out_png=png_path)
    assert report["normalized"].shape == (15, 1)
    assert report["normalized"].min() >= -1.0 - 1e-9
    assert report["normalized"].max() <= 1.0 + 1e-9
    # ground-truth orientation column is a perfect line
    assert linear_fit_r2(report["times"], report["orientation"]) == pytest.approx(1.0)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "t,z_0,orientation"
    assert len(lines) == 16
    assert png_path.exists()


def test_collect_codes_and_factors(toy_setup, tmp_path):
    net, _ = toy_setup
    scenes.generate_dataset(seed=3, n_train=2, n_test=2, resolution=32, out_dir=tmp_path)
    records = [r for r in scenes.load_manifest(tmp_path) if r["split"] == "test"]
    table = metrics.collect_codes_and_factors(net, tmp_path, records, k_random=3,
                                              rng=np.random.default_rng(0))
    assert table.codes.shape == (2 * 4, 6)
    assert table.factors.shape == (2 * 4, 6)
    assert set(np.unique(table.factors[:, 5])) <= set(range(15))
