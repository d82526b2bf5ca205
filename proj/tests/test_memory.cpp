#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpga/losses.hpp"
#include "support.hpp"

using namespace cpga;

TEST_CASE("nonparametric_predict: equal similarities give uniform rows") {
    Mat u = Mat::Zero(2, 3);
    u(0, 0) = 1.0;
    u(1, 0) = 1.0;
    Mat v = Mat::Zero(4, 3);
    v(0, 1) = 1.0;
    v(1, 2) = 1.0;
    v(2, 1) = -1.0;
    v(3, 2) = -1.0;
    const Mat o = nonparametric_predict(u, v, Temperature(0.07));
    CHECK((o.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("nonparametric_predict: u equal to v_2 with orthogonal others") {
    const Mat v = Mat::Identity(3, 3);
    const Mat u = v.row(2);
    const Mat o = nonparametric_predict(u, v, Temperature(0.07));
    const double expected = 1.0 / (1.0 + 2.0 * std::exp(-1.0 / 0.07));
    CHECK(o(0, 2) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(o(0, 2) == doctest::Approx(0.9999988).epsilon(1e-7));
}

TEST_CASE("nonparametric_predict matches the oracle, rows sum to one, rejects non-unit rows") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const Mat u = test::random_unit_rows(5, 4, rng);
        const Mat v = test::random_unit_rows(3, 4, rng);
        const Mat o = nonparametric_predict(u, v, Temperature(0.5));
        CHECK((o - test::oracle_nonparametric(u, v, 0.5)).cwiseAbs().maxCoeff() < 1e-12);
        for (Eigen::Index i = 0; i < o.rows(); ++i) CHECK(std::abs(o.row(i).sum() - 1.0) < 1e-9);
    }
    CHECK_THROWS_AS(nonparametric_predict(Mat::Constant(1, 2, 1.0), Mat::Identity(2, 2), Temperature(1.0)),
                    ContractError);
}

TEST_CASE("nonparametric_predict backward matches central differences through normalization") {
    std::mt19937_64 rng(4);
    const Mat a = test::random_mat(3, 4, rng);
    const Mat b = test::random_mat(2, 4, rng);
    const Mat w = test::random_mat(3, 2, rng);
    const Temperature tau(0.3);
    auto f = [&](const Vec& x) {
        const Mat ua = test::as_mat(x.head(12), 3, 4);
        const Mat vb = test::as_mat(x.tail(8), 2, 4);
        return (nonparametric_predict(normalize_rows(ua).unit, normalize_rows(vb).unit, tau).array() * w.array()).sum();
    };
    const NormalizedRows nu = normalize_rows(a);
    const NormalizedRows nv = normalize_rows(b);
    const Mat o = nonparametric_predict(nu.unit, nv.unit, tau);
    Mat gu, gv;
    nonparametric_predict_backward(nu.unit, nv.unit, o, w, tau, gu, gv);
    Vec analytic(20);
    analytic << test::as_vec(normalize_rows_backward(nu, gu)), test::as_vec(normalize_rows_backward(nv, gv));
    Vec x(20);
    x << test::as_vec(a), test::as_vec(b);
    CHECK(test::relative_error(analytic, test::numeric_gradient(f, x)) < 1e-7);
}

TEST_CASE("prediction bank update examples") {
    Mat o(1, 2);
    o << 0.0, 1.0;
    const std::vector<int> idx{0};

    PredictionBank keep = PredictionBank::from_values(Mat::Constant(2, 2, 0.5), 1.0);
    keep.update(idx, o);
    CHECK(keep.values() == Mat::Constant(2, 2, 0.5));

    PredictionBank copy = PredictionBank::from_values(Mat::Constant(2, 2, 0.5), 0.0);
    copy.update(idx, o);
    CHECK(copy.values().row(0) == o.row(0));
    CHECK(copy.values().row(1) == Mat::Constant(1, 2, 0.5).row(0));

    Mat h(1, 2);
    h << 1.0, 0.0;
    PredictionBank mix = PredictionBank::from_values(h, 0.9);
    mix.update(idx, o);
    CHECK(mix.values()(0, 0) == doctest::Approx(0.9));
    CHECK(mix.values()(0, 1) == doctest::Approx(0.1));
}

TEST_CASE("prediction bank initial values and errors") {
    PredictionBank zero(4, 3, 0.9);
    CHECK(zero.values().isZero(0.0));
    PredictionBank uniform(4, 3, 0.9, BankInit::Uniform);
    CHECK((uniform.values().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
    const std::vector<int> dup{1, 1};
    CHECK_THROWS_AS(zero.update(dup, Mat::Zero(2, 3)), ContractError);
    const std::vector<int> out{4};
    CHECK_THROWS_AS(zero.update(out, Mat::Zero(1, 3)), ContractError);
    CHECK_THROWS_AS(PredictionBank(4, 3, 1.5), ConfigError);
}

TEST_CASE("prediction bank matches the closed form and stays in [0,1] with row sums <= 1") {
    std::mt19937_64 rng(5);
    for (BankInit init : {BankInit::Zero, BankInit::Uniform}) {
        PredictionBank bank(6, 4, 0.9, init);
        const Mat h0 = bank.values();
        std::vector<std::vector<RowVec>> history(6);
        std::uniform_int_distribution<int> pick(0, 5);
        for (int step = 0; step < 40; ++step) {
            std::vector<int> idx;
            for (int i = 0; i < 6; ++i) {
                if (pick(rng) < 3) idx.push_back(i);
            }
            if (idx.empty()) continue;
            const Mat o = test::random_simplex_rows(static_cast<Eigen::Index>(idx.size()), 4, rng);
            bank.update(idx, o);
            for (std::size_t r = 0; r < idx.size(); ++r) history[static_cast<std::size_t>(idx[r])].push_back(o.row(static_cast<Eigen::Index>(r)));
            CHECK(bank.values().minCoeff() >= 0.0);
            CHECK(bank.values().maxCoeff() <= 1.0);
            CHECK(bank.values().rowwise().sum().maxCoeff() <= 1.0 + 1e-9);
        }
        for (Eigen::Index i = 0; i < 6; ++i) {
            const RowVec expected = test::oracle_bank_row(h0.row(i), history[static_cast<std::size_t>(i)], 0.9);
            CHECK((bank.values().row(i) - expected).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("feature bank writes rows verbatim, last write wins, others untouched") {
    std::mt19937_64 rng(6);
    const Mat init = test::random_mat(5, 3, rng);
    FeatureBank bank(init);
    const Mat q1 = test::random_mat(2, 3, rng);
    const Mat q2 = test::random_mat(1, 3, rng);
    const std::vector<int> a{1, 3}, b{3};
    bank.update(a, q1);
    bank.update(b, q2);
    CHECK(bank.values().row(1) == q1.row(0));
    CHECK(bank.values().row(3) == q2.row(0));
    for (int i : {0, 2, 4}) CHECK(bank.values().row(i) == init.row(i));
    const std::vector<int> bad{5};
    CHECK_THROWS_AS(bank.update(bad, q2), ContractError);
    const std::vector<int> dup{0, 0};
    CHECK_THROWS_AS(bank.update(dup, q1), ContractError);
}

TEST_CASE("neighbor similarities: identical rows give uniform weights") {
    const FeatureBank bank(Mat::Constant(5, 3, 2.0));
    const Vec s = neighbor_similarities(bank, 2, Temperature(0.07));
    CHECK(s.size() == 4);
    CHECK((s.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("neighbor similarities concentrate on the duplicate at small temperature") {
    std::mt19937_64 rng(7);
    Mat q = test::random_unit_rows(6, 8, rng);
    q.row(4) = q.row(1);
    const Vec s = neighbor_similarities(FeatureBank(q), 1, Temperature(0.01));
    // Index 4 sits at position 3 once the anchor (1) is removed.
    CHECK(s(3) > 0.99);
}

TEST_CASE("neighbor similarities match the brute-force oracle and exclude self") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        const Mat q = test::random_mat(7, 4, rng);
        const FeatureBank bank(q);
        for (int i = 0; i < 7; ++i) {
            const Vec s = neighbor_similarities(bank, i, Temperature(0.2));
            const auto oracle = test::oracle_neighbors(q, i, 0.2);
            CHECK(std::abs(s.sum() - 1.0) < 1e-9);
            for (std::size_t j = 0; j < oracle.size(); ++j) CHECK(std::abs(s(static_cast<Eigen::Index>(j)) - oracle[j]) < 1e-6);
        }
        const std::vector<int> idx{0, 3, 6};
        const Mat batched = neighbor_similarities(bank, idx, gather_rows(q, idx), Temperature(0.2));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            CHECK(batched(row, idx[r]) == 0.0);
            const Vec single = neighbor_similarities(bank, idx[r], Temperature(0.2));
            Eigen::Index t2 = 0;
            for (Eigen::Index j = 0; j < 7; ++j) {
                if (j == idx[r]) continue;
                CHECK(std::abs(batched(row, j) - single(t2++)) < 1e-12);
            }
        }
    }
    CHECK_THROWS_AS(neighbor_similarities(FeatureBank(Mat::Ones(1, 3)), 0, Temperature(1.0)), ContractError);
}

TEST_CASE("batched neighbor similarities backward matches central differences") {
    std::mt19937_64 rng(9);
    const Mat bank_rows = test::random_mat(6, 3, rng);
    const FeatureBank bank(bank_rows);
    const std::vector<int> idx{2, 5};
    const Mat anchors = test::random_mat(2, 3, rng);
    const Mat w = test::random_mat(2, 6, rng);
    const Temperature tau(0.4);
    NeighborCache cache;
    neighbor_similarities(bank, idx, anchors, tau, &cache);
    Mat wz = w;
    const Mat g = neighbor_similarities_backward(cache, wz);
    auto f = [&](const Vec& x) {
        return (neighbor_similarities(bank, idx, test::as_mat(x, 2, 3), tau).array() * w.array()).sum();
    };
    CHECK(test::relative_error(test::as_vec(g), test::numeric_gradient(f, test::as_vec(anchors))) < 1e-7);
}
