#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "nbsa/gradcheck.hpp"
#include "nbsa/model.hpp"
#include "oracles.hpp"

using namespace nbsa;

namespace {

const std::vector<std::string> kAttentions{"none", "2da-input", "2da-codeword", "2da-temporal", "ctsa", "csa", "tsa"};

ModelConfig small_config(std::string_view attention, int heads = 2) {
    ModelConfig c;
    c.features = 4;
    c.length = 8;
    c.codewords = 6;
    c.latent_dim = 5;
    c.heads = heads;
    c.classes = 3;
    c.seed = 17;
    c.set_attention(attention);
    return c;
}

std::vector<Matrix> random_samples(int count, int D, int N, std::mt19937_64& rng) {
    std::vector<Matrix> s;
    for (int i = 0; i < count; ++i) s.push_back(oracle::random(D, N, rng));
    return s;
}

/// Randomizes every parameter so no gradient is trivially zero (e.g. alpha at a saturated value).
Model random_model(const ModelConfig& c, std::mt19937_64& rng) {
    auto samples = random_samples(4, c.features, c.length, rng);
    Model m = init_model(c, samples);
    for (auto& [name, view] : param_views(m.params)) {
        if (name != "codebook.v") view = oracle::random(view.rows(), view.cols(), rng, 0.5);
    }
    m.restore_constraints();
    return m;
}

/// The loss of one item as a DiffOp over all model parameters, evaluated in `Scalar`.
template <typename Scalar = double>
DiffOp<Scalar> loss_op(const Model& base64, const Matrix& x64, int label) {
    using M = MatX<Scalar>;
    const BasicModel<Scalar> base = base64.cast<Scalar>();
    const M x = x64.cast<Scalar>();
    auto assemble = [base](std::span<const M> in) {
        BasicModel<Scalar> m = base;
        auto views = param_views(m.params);
        for (std::size_t i = 0; i < views.size(); ++i) views[i].view = in[i];
        m.restore_constraints();
        return m;
    };
    return {[=](std::span<const M> in) {
                return M(M::Constant(1, 1, cross_entropy<Scalar>(logits(assemble(in), x), label)));
            },
            [=](std::span<const M> in, const M&, const M& g) {
                auto lg = loss_and_grad(assemble(in), x, label);
                std::vector<M> out;
                for (auto& nv : param_views(lg.grads)) out.push_back(nv.view * g(0, 0));
                return out;
            }};
}

template <typename Scalar = double>
std::vector<MatX<Scalar>> param_point(const Model& m) {
    auto params = cast_params<Scalar>(m.params);
    std::vector<MatX<Scalar>> point;
    for (auto& nv : param_views(params)) point.push_back(nv.view);
    return point;
}

}  // namespace

TEST_CASE("frontend_conv") {
    std::mt19937_64 rng(1);
    SUBCASE("identity kernel on non-negative input") {
        const Matrix x = oracle::random(3, 7, rng).cwiseAbs();
        Matrix kernel = Matrix::Zero(3, 9);
        for (int i = 0; i < 3; ++i) kernel(i, i * 3 + 1) = 1.0;
        CHECK(frontend_conv(x, kernel, Matrix::Zero(3, 1), 3) == x);
    }
    SUBCASE("zero input gives zero output") {
        const Matrix kernel = oracle::random(4, 15, rng);
        CHECK(frontend_conv(Matrix::Zero(3, 6), kernel, Matrix::Zero(4, 1), 5) == Matrix::Zero(4, 6));
    }
    SUBCASE("matches loop oracle") {
        for (int width : {1, 3, 5}) {
            for (int trial = 0; trial < 20; ++trial) {
                const Matrix x = oracle::random(3, 9, rng);
                const Matrix kernel = oracle::random(4, 3 * width, rng), bias = oracle::random(4, 1, rng);
                CHECK(oracle::max_abs_diff(frontend_conv(x, kernel, bias, width),
                                           oracle::conv(x, kernel, bias, width)) <= 1e-12);
            }
        }
    }
    SUBCASE("even width is rejected") {
        CHECK_THROWS_AS(frontend_conv(Matrix::Zero(2, 4), Matrix::Zero(2, 4), Matrix::Zero(2, 1), 2), ArgumentError);
    }
}

TEST_CASE("cross_entropy") {
    CHECK(cross_entropy(Matrix::Zero(4, 1), 2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(std::abs(cross_entropy(Matrix::Zero(4, 1), 0) - 1.386294) <= 1e-6);
    Matrix margin = Matrix::Zero(3, 1);
    margin(1, 0) = 30.0;
    CHECK(cross_entropy(margin, 1) < 1e-12);
    CHECK(cross_entropy(margin, 1) >= 0.0);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix l = oracle::random(5, 1, rng, 3.0);
        CHECK(std::abs(cross_entropy(l, trial % 5) - oracle::cross_entropy(l, trial % 5)) <= 1e-12);
    }
    Matrix huge = Matrix::Zero(2, 1);
    huge(0, 0) = 1000.0;
    CHECK(cross_entropy(huge, 1) == doctest::Approx(1000.0));
    CHECK_THROWS_AS(cross_entropy(Matrix::Zero(3, 1), 3), ArgumentError);
    CHECK_THROWS_AS(cross_entropy(Matrix::Zero(3, 1), -1), ArgumentError);
}

TEST_CASE("model config") {
    auto c = small_config("csa");
    CHECK(c.histogram_width() == 12);
    CHECK(c.attention_name() == "csa");
    c.set_attention("2da-codeword");
    CHECK(c.histogram_width() == 6);
    CHECK(c.attention_name() == "2da-codeword");
    CHECK_THROWS_AS(c.set_attention("bogus"), ArgumentError);
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = small_config("ctsa");
    c.length = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c.set_attention("tsa");
    CHECK_NOTHROW(c.validate());
    c.classes = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("forward") {
    std::mt19937_64 rng(3);
    SUBCASE("constant columns: logits do not depend on N") {
        const Model m = random_model(small_config("none"), rng);
        const Matrix col = oracle::random(4, 1, rng);
        const Matrix base = logits(m, col.replicate(1, 3));
        for (int N : {1, 5, 40}) CHECK(oracle::max_abs_diff(logits(m, col.replicate(1, N)), base) <= 1e-12);
    }
    SUBCASE("timestamp permutation invariance for none and tsa") {
        for (std::string_view att : {"none", "tsa"}) {
            CAPTURE(att);
            for (int trial = 0; trial < 10; ++trial) {
                const Model m = random_model(small_config(att), rng);
                const Matrix x = oracle::random(4, 8, rng);
                const auto perm = oracle::random_permutation(8, rng);
                const double tol = att == "none" ? 1e-12 : 1e-9;
                CHECK(oracle::max_abs_diff(logits(m, oracle::permute_cols(x, perm)), logits(m, x)) <= tol);
            }
        }
    }
    SUBCASE("2da-temporal logits depend on timestamp order") {
        const Model m = random_model(small_config("2da-temporal"), rng);
        const Matrix x = oracle::random(4, 8, rng);
        const std::vector<int> reversed{7, 6, 5, 4, 3, 2, 1, 0};
        CHECK(oracle::max_abs_diff(logits(m, oracle::permute_cols(x, reversed)), logits(m, x)) > 1e-6);
    }
    SUBCASE("eval mode is deterministic") {
        for (const auto& att : kAttentions) {
            auto c = small_config(att);
            c.dropout = 0.3;
            const Model m = random_model(c, rng);
            const Matrix x = oracle::random(4, 8, rng);
            CHECK(logits(m, x) == logits(m, x));
            CHECK(forward(m, x, true, 5).logits == forward(m, x, true, 5).logits);
        }
    }
    SUBCASE("logits are the affine map of the histogram") {
        const Model m = random_model(small_config("ctsa"), rng);
        const auto t = forward(m, oracle::random(4, 8, rng));
        CHECK(t.histogram.rows() == 12);
        const Matrix expected =
            oracle::matmul(m.params.classifier_weight, t.histogram) + m.params.classifier_bias;
        CHECK(oracle::max_abs_diff(t.logits, expected) <= 1e-12);
    }
    SUBCASE("shape errors name the stage") {
        const Model m = random_model(small_config("csa"), rng);
        try {
            logits(m, oracle::random(5, 8, rng));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("stage '") != std::string::npos);
        }
        try {
            logits(m, oracle::random(4, 9, rng));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("stage 'input'") != std::string::npos);
        }
    }
}

TEST_CASE("end-to-end gradient") {
    // Central differences run in long double; in double their roundoff swamps
    // entries below ~1e-7 under the 1e-8 floor.
    using Ext = long double;
    std::mt19937_64 rng(4);
    for (const auto& att : kAttentions) {
        for (int heads : {1, 2}) {
            CAPTURE(att);
            CAPTURE(heads);
            Model m = random_model(small_config(att, heads), rng);
            const Matrix x = oracle::random(4, 8, rng);
            const auto report = grad_check(loss_op<Ext>(m, x, 1), param_point<Ext>(m), Ext(1e-5));
            CHECK_MESSAGE(report.max_rel_err <= 1e-4, report.diagnostic);
        }
    }
    SUBCASE("with a convolutional frontend") {
        for (std::string_view att : {"none", "2da-input", "tsa"}) {
            CAPTURE(att);
            auto c = small_config(att);
            c.frontend = FrontendKind::conv;
            c.conv_channels = 3;
            Model m = random_model(c, rng);
            const Matrix x = oracle::random(4, 8, rng);
            const auto report = grad_check(loss_op<Ext>(m, x, 2), param_point<Ext>(m), Ext(1e-5));
            CHECK_MESSAGE(report.max_rel_err <= 1e-4, report.diagnostic);
        }
    }
}

TEST_CASE("long double instantiation matches double") {
    std::mt19937_64 rng(6);
    for (const auto& att : kAttentions) {
        CAPTURE(att);
        auto c = small_config(att, 2);
        c.frontend = FrontendKind::conv;
        const Model m = random_model(c, rng);
        const auto ext = m.cast<long double>();
        const Matrix x = oracle::random(4, 8, rng);
        const Matrix a = logits(m, x);
        const Matrix b = logits(ext, MatX<long double>(x.cast<long double>())).cast<double>();
        CHECK(oracle::max_abs_diff(a, b) <= 1e-12);
        const auto ga = loss_and_grad(m, x, 1).grads;
        auto gb = cast_params<double>(loss_and_grad(ext, MatX<long double>(x.cast<long double>()), 1).grads);
        auto gav = ga;
        const auto va = param_views(gav), vb = param_views(gb);
        REQUIRE(va.size() == vb.size());
        for (std::size_t i = 0; i < va.size(); ++i) {
            CAPTURE(va[i].name);
            CHECK(vb[i].name == va[i].name);
            CHECK(oracle::max_abs_diff(Matrix(va[i].view), Matrix(vb[i].view)) <= 1e-10);
        }
    }
}

TEST_CASE("parameter registry") {
    std::mt19937_64 rng(5);
    auto c = small_config("tsa");
    c.frontend = FrontendKind::conv;
    Model m = random_model(c, rng);
    std::vector<std::string> names;
    for (auto& nv : param_views(m.params)) names.push_back(nv.name);
    const std::vector<std::string> expected{"frontend.kernel", "frontend.bias",    "codebook.v",
                                            "codebook.w",      "att.head0.Wq",     "att.head0.Wk",
                                            "att.head0.alpha", "att.head1.Wq",     "att.head1.Wk",
                                            "att.head1.alpha", "classifier.weight", "classifier.bias"};
    CHECK(names == expected);
    CHECK(param_group("att.head1.Wk") == "attention");
    CHECK(param_group("codebook.w") == "codebook");
}

TEST_CASE("checkpoint") {
    std::mt19937_64 rng(6);
    const auto dir = std::filesystem::temp_directory_path() / "nbsa_test_model";
    std::filesystem::create_directories(dir);

    SUBCASE("round trip is bitwise for every attention") {
        for (const auto& att : kAttentions) {
            CAPTURE(att);
            auto c = small_config(att);
            c.frontend = FrontendKind::conv;
            const Model m = random_model(c, rng);
            const auto path = dir / "m.nbaf";
            save_checkpoint(m, path);
            const Model back = load_checkpoint(path);
            CHECK(back.config.attention_name() == att);
            const Matrix x = oracle::random(4, 8, rng);
            const Matrix a = logits(m, x), b = logits(back, x);
            CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
            CHECK(checkpoint_bytes(back) == checkpoint_bytes(m));
        }
    }
    const Model m = random_model(small_config("ctsa"), rng);
    const std::string bytes = checkpoint_bytes(m);
    SUBCASE("layout") {
        CHECK(bytes.substr(0, 4) == "NBAF");
        CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
    }
    SUBCASE("corrupted payload byte") {
        std::string bad = bytes;
        bad[bad.size() - 12] ^= 0x01;
        CHECK_THROWS_AS(checkpoint_from_bytes(bad), ChecksumError);
    }
    SUBCASE("future version") {
        std::string bad = bytes;
        bad[4] = static_cast<char>(kCheckpointVersion + 1);
        CHECK_THROWS_AS(checkpoint_from_bytes(bad), VersionError);
    }
    SUBCASE("truncated file") {
        for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
            CHECK_THROWS_AS(checkpoint_from_bytes(std::string_view(bytes).substr(0, keep)), FormatError);
        }
    }
    SUBCASE("wrong magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(checkpoint_from_bytes(bad), FormatError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "absent.nbaf"), FormatError); }
    std::filesystem::remove_all(dir);
}
