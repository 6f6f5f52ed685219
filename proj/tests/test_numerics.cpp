#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nbsa/gradcheck.hpp"
#include "nbsa/numerics.hpp"
#include "nbsa/registry.hpp"
#include "oracles.hpp"

using namespace nbsa;

TEST_CASE("matmul") {
    SUBCASE("identity") {
        std::mt19937_64 rng(1);
        const Matrix m = oracle::random(3, 4, rng);
        CHECK(matmul(Matrix::Identity(3, 3), m) == m);
    }
    SUBCASE("hand sum") {
        Matrix a(2, 2), b(2, 1);
        a << 1, 2, 3, 4;
        b << 1, 1;
        const Matrix c = matmul(a, b);
        CHECK(c(0, 0) == 3.0);
        CHECK(c(1, 0) == 7.0);
    }
    SUBCASE("matches loop oracle up to 16x16") {
        std::mt19937_64 rng(2);
        std::uniform_int_distribution<int> dim(1, 16);
        for (int trial = 0; trial < 200; ++trial) {
            const int r = dim(rng), k = dim(rng), c = dim(rng);
            const Matrix a = oracle::random(r, k, rng), b = oracle::random(k, c, rng);
            CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
        }
        const Matrix a = oracle::random(5, 7, rng), b = oracle::random(7, 3, rng);
        CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
    }
    SUBCASE("dimension mismatch names both shapes") {
        try {
            matmul(Matrix(2, 3), Matrix(4, 5));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2x3") != std::string::npos);
            CHECK(msg.find("4x5") != std::string::npos);
        }
    }
}

TEST_CASE("softmax_rows") {
    SUBCASE("uniform row") {
        const Matrix s = softmax_rows(Matrix::Zero(1, 3));
        for (int j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("single column") {
        std::mt19937_64 rng(3);
        CHECK(softmax_rows(oracle::random(5, 1, rng)) == Matrix::Ones(5, 1));
    }
    SUBCASE("two entries") {
        Matrix m(1, 2);
        m << 1, 2;
        const Matrix s = softmax_rows(m);
        CHECK(std::abs(s(0, 0) - 0.268941) <= 1e-6);
        CHECK(std::abs(s(0, 1) - 0.731059) <= 1e-6);
    }
    SUBCASE("rows sum to one for entries in [-700, 700]") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(-700.0, 700.0);
        for (int trial = 0; trial < 100; ++trial) {
            Matrix m(6, 9);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
            const Matrix s = softmax_rows(m);
            CHECK(s.allFinite());
            CHECK((s.array() >= 0.0).all());
            CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("elementwise and reductions") {
    CHECK(sigmoid(Matrix::Zero(2, 3)) == Matrix::Constant(2, 3, 0.5));
    std::mt19937_64 rng(5);
    const Matrix m = oracle::random(3, 5, rng);
    CHECK(transpose(transpose(m)) == m);
    Matrix a(2, 2);
    a << 1, 3, 2, 4;
    const Matrix mean = mean_cols(a);
    CHECK(mean(0, 0) == 2.0);
    CHECK(mean(1, 0) == 3.0);
    CHECK_THROWS_AS(hadamard(Matrix(2, 2), Matrix(2, 3)), ShapeError);
    CHECK_THROWS_AS(mean_cols(Matrix(2, 0)), ArgumentError);
}

TEST_CASE("softplus round trip") {
    for (double y : {1e-3, 0.5, 1.0, 3.0, 40.0}) {
        CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-13));
    }
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(std::isfinite(softplus(800.0)));
}

TEST_CASE("grad_check") {
    std::mt19937_64 rng(6);
    const auto ops = registered_ops();
    auto find = [&](std::string_view name) -> const RegisteredOp& {
        for (const auto& op : ops)
            if (op.name == name) return op;
        throw std::runtime_error("no op");
    };

    SUBCASE("linear op is exact up to roundoff") {
        const auto& mm = find("matmul");
        const auto report = grad_check(mm.op, mm.sample(rng), 1e-5);
        CHECK(report.finite);
        CHECK(report.max_rel_err <= 1e-9);
        CHECK(report.per_input.size() == 2);
    }
    SUBCASE("softmax at a random 4x6 point") {
        const auto& sm = find("softmax_rows");
        CHECK(grad_check(sm.op, {oracle::random(4, 6, rng)}, 1e-5).max_rel_err <= 1e-4);
    }
    SUBCASE("every registered op at 10 random points") {
        for (const auto& entry : ops) {
            double worst = 0.0;
            for (int trial = 0; trial < 10; ++trial) {
                const auto report = grad_check(entry.op, entry.sample(rng), 1e-5, 100 + trial);
                REQUIRE_MESSAGE(report.finite, entry.name << ": " << report.diagnostic);
                worst = std::max(worst, report.max_rel_err);
            }
            CHECK_MESSAGE(worst <= 1e-4, entry.name << " max_rel_err " << worst);
        }
    }
    SUBCASE("broken vjp is caught") {
        DiffOp<double> broken = find("sigmoid").op;
        broken.vjp = [](std::span<const Matrix>, const Matrix& out, const Matrix& g) {
            return std::vector<Matrix>{Matrix(sigmoid_vjp(out, g) * 1.01)};
        };
        CHECK(grad_check(broken, {oracle::random(3, 3, rng)}, 1e-5).max_rel_err > 1e-3);
    }
    SUBCASE("non-finite values fail the check") {
        DiffOp<double> bad{[](std::span<const Matrix> in) { return Matrix(in[0].array().log()); },
                           [](std::span<const Matrix> in, const Matrix&, const Matrix& g) {
                               return std::vector<Matrix>{Matrix(g.array() / in[0].array())};
                           }};
        Matrix p(1, 2);
        p << -1.0, 2.0;
        const auto report = grad_check(bad, {p}, 1e-5);
        CHECK_FALSE(report.finite);
        CHECK_FALSE(report.passed(1e-4));
    }
    SUBCASE("eps must be positive") {
        CHECK_THROWS_AS(grad_check(find("sigmoid").op, {Matrix::Zero(1, 1)}, 0.0), ArgumentError);
    }
}
