#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "profusion/errors.hpp"
#include "profusion/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

using namespace profusion;

TEST_CASE("first nonzero digit matches hand-worked values") {
    CHECK(first_nonzero_digit(0.537) == 5);
    CHECK(first_nonzero_digit(-0.0049) == 4);
    CHECK(first_nonzero_digit(23.7) == 2);
    CHECK(first_nonzero_digit(1.0) == 1);
    CHECK(first_nonzero_digit(-9.99) == 9);
    CHECK(first_nonzero_digit(0.1) == 1);
    CHECK(first_nonzero_digit(1e-7) == 1);
    CHECK(first_nonzero_digit(3.0e8) == 3);
    CHECK_THROWS_AS(first_nonzero_digit(0.0), InputError);
}

TEST_CASE("config validation rejects bad fields") {
    LatticeTaskConfig lc;
    lc.D = 1;
    Rng r(0);
    CHECK_THROWS_AS(gen_lattice(lc, r, 10), ConfigError);
    lc.D = 4;
    lc.p = 3;
    CHECK_THROWS_AS(gen_lattice(lc, r, 10), ConfigError);
    lc.p = 16;
    lc.f_max = 0.0;
    CHECK_THROWS_AS(gen_lattice(lc, r, 10), ConfigError);

    GenerativeTaskConfig gc;
    gc.sigma2 = -0.1;
    CHECK_THROWS_AS(gen_generative(gc, r, 10), ConfigError);
    gc.sigma2 = 0.0;
    gc.D1 = 8;
    gc.D2 = 16;
    gc.eta = 1.0;
    CHECK_THROWS_AS(gen_generative(gc, r, 10), ConfigError);
    gc.eta = 0.0;
    CHECK_NOTHROW(gen_generative(gc, r, 3));
}

TEST_CASE("lattice samples are internally consistent") {
    LatticeTaskConfig cfg;
    cfg.D = 16;
    Rng rng(42);
    auto ds = gen_lattice(cfg, rng, 500);
    REQUIRE(ds.X1.rows == 500);
    REQUIRE(ds.X1.cols == 16);
    REQUIRE(ds.X2.cols == 16);
    REQUIRE(ds.kind == TaskKind::Classification);
    REQUIRE(ds.num_classes == 9);

    // the embedding identifies l; the label must be the digit of X1 there
    for (int s = 0; s < ds.size(); ++s) {
        int l = -1;
        for (int cand = 0; cand < cfg.D; ++cand) {
            auto emb = position_embedding(static_cast<double>(cand) / cfg.D, cfg.p, cfg.D);
            double diff = 0.0;
            for (int j = 0; j < cfg.p; ++j)
                diff = std::max(diff, std::fabs(emb[static_cast<size_t>(j)] - ds.X2(s, j)));
            if (diff < 1e-12) {
                l = cand;
                break;
            }
        }
        REQUIRE(l >= 0);
        double v = ds.X1(s, l);
        CHECK(std::fabs(v) >= 1e-9);
        CHECK(ds.labels[static_cast<size_t>(s)] == first_nonzero_digit(v) - 1);
    }

    // sine mixture with M unit-bounded amplitudes stays within [-M, M]
    for (double v : ds.X1.a) CHECK(std::fabs(v) <= cfg.M + 1e-12);
}

TEST_CASE("position embeddings of distinct lattice points are distinct") {
    for (int D : {2, 4, 16, 64}) {
        std::vector<std::vector<double>> embs;
        for (int l = 0; l < D; ++l)
            embs.push_back(position_embedding(static_cast<double>(l) / D, 16, D));
        for (size_t i = 0; i < embs.size(); ++i)
            for (size_t j = i + 1; j < embs.size(); ++j) {
                double diff = 0.0;
                for (size_t k = 0; k < embs[i].size(); ++k)
                    diff = std::max(diff, std::fabs(embs[i][k] - embs[j][k]));
                CHECK(diff > 1e-3);
            }
    }
}

TEST_CASE("lattice label distribution is non-degenerate over 1e5 samples") {
    LatticeTaskConfig cfg;
    Rng rng(7);
    auto ds = gen_lattice(cfg, rng, 100000);
    std::vector<int> counts(9, 0);
    for (int lb : ds.labels) {
        REQUIRE(lb >= 0);
        REQUIRE(lb < 9);
        ++counts[static_cast<size_t>(lb)];
    }
    for (int c = 0; c < 9; ++c) {
        double freq = counts[static_cast<size_t>(c)] / 1e5;
        INFO("class ", c, " freq ", freq);
        CHECK(freq >= 0.02);
        CHECK(freq <= 0.40);
    }
}

TEST_CASE("generators are bit-deterministic in config and seed") {
    LatticeTaskConfig lc;
    lc.seed = 99;
    lc.n_train = 64;
    lc.n_val = 16;
    lc.n_test = 16;
    auto a = gen_lattice_splits(lc);
    auto b = gen_lattice_splits(lc);
    CHECK(a.train.X1.a == b.train.X1.a);
    CHECK(a.train.X2.a == b.train.X2.a);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.X1.a == b.test.X1.a);

    GenerativeTaskConfig gc;
    gc.seed = 99;
    gc.n_train = 64;
    gc.n_val = 16;
    gc.n_test = 16;
    gc.eta = 0.7;
    gc.sigma2 = 0.3;
    auto c = gen_generative_splits(gc);
    auto d = gen_generative_splits(gc);
    CHECK(c.train.X1.a == d.train.X1.a);
    CHECK(c.train.X2.a == d.train.X2.a);
    CHECK(c.train.Y.a == d.train.Y.a);

    lc.seed = 100;
    auto e = gen_lattice_splits(lc);
    CHECK(e.train.X1.a != a.train.X1.a);
}

TEST_CASE("splits use independent streams") {
    LatticeTaskConfig lc;
    lc.n_train = 32;
    lc.n_val = 32;
    lc.n_test = 32;
    auto sp = gen_lattice_splits(lc);
    CHECK(sp.train.X1.a != sp.val.X1.a);
    CHECK(sp.val.X1.a != sp.test.X1.a);
}

TEST_CASE("corruption term equals -2|eta| sin(W2 Z) exactly") {
    GenerativeTaskConfig base;
    base.eta = 0.0;
    base.sigma2 = 0.0;
    Rng r0(5), r1(5);
    auto ds0 = gen_generative(base, r0, 200);
    GenerativeTaskConfig cc = base;
    cc.eta = 1.0;
    auto ds1 = gen_generative(cc, r1, 200);
    // same stream, eta consumes no draws, sigma2=0 makes X2 = sin(W2 Z)
    CHECK(ds0.X2.a == ds1.X2.a);
    for (int s = 0; s < 200; ++s)
        for (int i = 0; i < base.D1; ++i) {
            double want = -2.0 * ds0.X2(s, i);
            double got = ds1.X1(s, i) - ds0.X1(s, i);
            CHECK(got == doctest::Approx(want).epsilon(1e-9));
        }
}

TEST_CASE("noiseless modality 2 lies in the range of sine") {
    GenerativeTaskConfig gc;
    gc.sigma2 = 0.0;
    Rng r(3);
    auto ds = gen_generative(gc, r, 1000);
    for (double v : ds.X2.a) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
}

TEST_CASE("sigma2 scales modality-2 noise") {
    GenerativeTaskConfig a;
    a.sigma2 = 0.0;
    GenerativeTaskConfig b = a;
    b.sigma2 = 2.0;
    Rng ra(11), rb(11);
    auto da = gen_generative(a, ra, 4000);
    auto db = gen_generative(b, rb, 4000);
    double sum = 0.0, sum2 = 0.0;
    size_t n = da.X2.a.size();
    for (size_t i = 0; i < n; ++i) {
        double d = db.X2.a[i] - da.X2.a[i];
        sum += d;
        sum2 += d * d;
    }
    double mean = sum / static_cast<double>(n);
    double sd = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    CHECK(sd == doctest::Approx(2.0).epsilon(0.03));
    CHECK(std::fabs(mean) < 0.05);
}

TEST_CASE("corrupt: zero sigma is the identity") {
    LatticeTaskConfig lc;
    lc.D = 4;
    Rng g(1), c(2);
    auto ds = gen_lattice(lc, g, 50);
    auto out = corrupt(ds, 0.0, {1, 2}, c);
    CHECK(out.X1.a == ds.X1.a);
    CHECK(out.X2.a == ds.X2.a);
    CHECK(out.labels == ds.labels);
}

TEST_CASE("corrupt: untouched modality stays bit-identical") {
    LatticeTaskConfig lc;
    lc.D = 4;
    Rng g(1), c(2);
    auto ds = gen_lattice(lc, g, 50);
    auto out = corrupt(ds, 0.5, {1}, c);
    CHECK(out.X1.a != ds.X1.a);
    CHECK(out.X2.a == ds.X2.a);
    CHECK(out.labels == ds.labels);
    CHECK_THROWS_AS(corrupt(ds, -0.1, {1}, c), InputError);
    CHECK_THROWS_AS(corrupt(ds, 0.1, {3}, c), InputError);
}

TEST_CASE("corrupt: empirical noise std tracks sigma within 2 percent") {
    LatticeTaskConfig lc;
    lc.D = 16;
    Rng g(8), c(9);
    auto ds = gen_lattice(lc, g, 6250); // 6250 * 16 = 1e5 entries
    double sigma = 0.7;
    auto out = corrupt(ds, sigma, {1}, c);
    double sum2 = 0.0;
    size_t n = ds.X1.a.size();
    for (size_t i = 0; i < n; ++i) {
        double d = out.X1.a[i] - ds.X1.a[i];
        sum2 += d * d;
    }
    double sd = std::sqrt(sum2 / static_cast<double>(n));
    CHECK(sd == doctest::Approx(sigma).epsilon(0.02));
}

namespace {

// plain least squares via normal equations, Gauss-Jordan solve
std::vector<double> solve_ls(const Mat& X, const std::vector<double>& y) {
    int d = X.cols;
    std::vector<std::vector<double>> A(static_cast<size_t>(d),
                                       std::vector<double>(static_cast<size_t>(d + 1), 0.0));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int r = 0; r < X.rows; ++r) s += X(r, i) * X(r, j);
            A[static_cast<size_t>(i)][static_cast<size_t>(j)] = s + (i == j ? 1e-8 : 0.0);
        }
        double s = 0.0;
        for (int r = 0; r < X.rows; ++r) s += X(r, i) * y[static_cast<size_t>(r)];
        A[static_cast<size_t>(i)][static_cast<size_t>(d)] = s;
    }
    for (int col = 0; col < d; ++col) {
        int piv = col;
        for (int r = col + 1; r < d; ++r)
            if (std::fabs(A[static_cast<size_t>(r)][static_cast<size_t>(col)]) >
                std::fabs(A[static_cast<size_t>(piv)][static_cast<size_t>(col)]))
                piv = r;
        std::swap(A[static_cast<size_t>(col)], A[static_cast<size_t>(piv)]);
        double pv = A[static_cast<size_t>(col)][static_cast<size_t>(col)];
        for (int j = col; j <= d; ++j) A[static_cast<size_t>(col)][static_cast<size_t>(j)] /= pv;
        for (int r = 0; r < d; ++r) {
            if (r == col) continue;
            double f = A[static_cast<size_t>(r)][static_cast<size_t>(col)];
            if (f == 0.0) continue;
            for (int j = col; j <= d; ++j)
                A[static_cast<size_t>(r)][static_cast<size_t>(j)] -=
                    f * A[static_cast<size_t>(col)][static_cast<size_t>(j)];
        }
    }
    std::vector<double> beta(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) beta[static_cast<size_t>(i)] = A[static_cast<size_t>(i)][static_cast<size_t>(d)];
    return beta;
}

} // namespace

TEST_CASE("clean generative task is linearly decodable with R2 above 0.5") {
    GenerativeTaskConfig gc;
    gc.eta = 0.0;
    gc.sigma2 = 0.0;
    gc.n_train = 4000;
    gc.n_val = 1;
    gc.n_test = 2000;
    gc.seed = 21;
    auto sp = gen_generative_splits(gc);

    int d = gc.D1 + gc.D2 + 1;
    Mat Xtr(sp.train.size(), d), Xte(sp.test.size(), d);
    auto fill = [&](Mat& X, const SyntheticDataset& ds) {
        for (int r = 0; r < ds.size(); ++r) {
            for (int c = 0; c < gc.D1; ++c) X(r, c) = ds.X1(r, c);
            for (int c = 0; c < gc.D2; ++c) X(r, gc.D1 + c) = ds.X2(r, c);
            X(r, d - 1) = 1.0;
        }
    };
    fill(Xtr, sp.train);
    fill(Xte, sp.test);

    double r2_sum = 0.0;
    for (int t = 0; t < gc.K_y; ++t) {
        std::vector<double> y(static_cast<size_t>(sp.train.size()));
        for (int r = 0; r < sp.train.size(); ++r) y[static_cast<size_t>(r)] = sp.train.Y(r, t);
        auto beta = solve_ls(Xtr, y);
        double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
        for (int r = 0; r < sp.test.size(); ++r) mean += sp.test.Y(r, t);
        mean /= sp.test.size();
        for (int r = 0; r < sp.test.size(); ++r) {
            double pred = 0.0;
            for (int c = 0; c < d; ++c) pred += Xte(r, c) * beta[static_cast<size_t>(c)];
            double yv = sp.test.Y(r, t);
            ss_res += (yv - pred) * (yv - pred);
            ss_tot += (yv - mean) * (yv - mean);
        }
        r2_sum += 1.0 - ss_res / ss_tot;
    }
    double r2 = r2_sum / gc.K_y;
    INFO("mean held-out R2 ", r2);
    CHECK(r2 > 0.5);
}

TEST_CASE("csv round trip preserves values to 15 significant digits") {
    LatticeTaskConfig lc;
    lc.D = 5;
    lc.p = 4;
    Rng g(13);
    auto ds = gen_lattice(lc, g, 40);
    const char* path = "synthetic_roundtrip_cls.csv";
    save_dataset_csv(ds, path);
    auto back = load_dataset_csv(path);
    REQUIRE(back.size() == ds.size());
    REQUIRE(back.kind == TaskKind::Classification);
    CHECK(back.labels == ds.labels);
    for (size_t i = 0; i < ds.X1.a.size(); ++i)
        CHECK(back.X1.a[i] == doctest::Approx(ds.X1.a[i]).epsilon(1e-14));
    for (size_t i = 0; i < ds.X2.a.size(); ++i)
        CHECK(back.X2.a[i] == doctest::Approx(ds.X2.a[i]).epsilon(1e-14));
    std::remove(path);

    GenerativeTaskConfig gc;
    gc.eta = 0.4;
    gc.sigma2 = 0.2;
    Rng g2(14);
    auto rds = gen_generative(gc, g2, 30);
    const char* rpath = "synthetic_roundtrip_reg.csv";
    save_dataset_csv(rds, rpath);
    auto rback = load_dataset_csv(rpath);
    REQUIRE(rback.kind == TaskKind::Regression);
    REQUIRE(rback.Y.cols == gc.K_y);
    for (size_t i = 0; i < rds.Y.a.size(); ++i)
        CHECK(rback.Y.a[i] == doctest::Approx(rds.Y.a[i]).epsilon(1e-14));
    std::remove(rpath);
}

TEST_CASE("load rejects malformed csv") {
    const char* path = "synthetic_bad.csv";
    {
        std::FILE* f = std::fopen(path, "w");
        std::fputs("kind,x1_0,what\ncls,1.0,2.0\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_dataset_csv(path), InputError);
    std::remove(path);
    CHECK_THROWS_AS(load_dataset_csv("no_such_file_anywhere.csv"), InputError);
}
