#include <cmath>

#include "deepkexp/errors.hpp"
#include "deepkexp/evaluate.hpp"
#include "deepkexp/synthetic.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace deepkexp;

namespace {

constexpr double kPi = 3.14159265358979323846;

Vector col_means(const Matrix& m) {
    Vector mu(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t d = 0; d < m.cols(); ++d) mu[d] += m(i, d);
    }
    for (double& v : mu) v /= static_cast<double>(m.rows());
    return mu;
}

}  // namespace

TEST_SUITE("synthetic") {

TEST_CASE("name table round trips and rejects strangers") {
    const auto& names = synth_names();
    REQUIRE(names.size() == 7);
    for (const std::string& n : names) {
        SynthSpec spec = synth_by_name(n);
        CHECK(synth_name(spec.name) == n);
        CHECK(spec.dim == 2);
    }
    CHECK_THROWS_AS(synth_by_name("blob"), UnknownName);
}

TEST_CASE("sampling is deterministic per seed and two-dimensional") {
    for (const std::string& n : synth_names()) {
        SynthSpec spec = synth_by_name(n);
        Matrix a = synth_sample(spec, 200, 5);
        Matrix b = synth_sample(spec, 200, 5);
        Matrix c = synth_sample(spec, 200, 6);
        REQUIRE(a.rows() == 200);
        REQUIRE(a.cols() == 2);
        bool same = true;
        bool differs = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            same = same && a.data()[i] == b.data()[i];
            differs = differs || a.data()[i] != c.data()[i];
        }
        CHECK(same);
        CHECK(differs);
    }
    CHECK_THROWS_AS(synth_sample(synth_by_name("ring"), 0, 1), UsageError);
    SynthSpec bad = synth_by_name("ring");
    bad.dim = 3;
    CHECK_THROWS_AS(synth_sample(bad, 10, 1), UsageError);
}

TEST_CASE("every distribution is centered at the origin") {
    // All seven constructions are symmetric about zero in each coordinate
    // (the cosine wave integrates to zero over a full period).
    const std::size_t n = 40000;
    const double bound = 4.0;  // multiples of the standard error
    for (const std::string& name : synth_names()) {
        SynthSpec spec = synth_by_name(name);
        Matrix s = synth_sample(spec, n, 77);
        Vector mu = col_means(s);
        for (std::size_t d = 0; d < 2; ++d) {
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (s(i, d) - mu[d]) * (s(i, d) - mu[d]);
            var /= static_cast<double>(n - 1);
            const double se = std::sqrt(var / static_cast<double>(n));
            INFO(name << " coordinate " << d);
            CHECK(std::fabs(mu[d]) <= bound * se);
        }
    }
}

TEST_CASE("pinned second moments") {
    const std::size_t n = 40000;
    SUBCASE("ring radius concentrates at three") {
        Matrix s = synth_sample(synth_by_name("ring"), n, 31);
        double mean_r = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_r += std::sqrt(s(i, 0) * s(i, 0) + s(i, 1) * s(i, 1));
        }
        mean_r /= static_cast<double>(n);
        CHECK(std::fabs(mean_r - 3.0) <= 4.0 * 0.2 / std::sqrt(static_cast<double>(n)));
    }
    SUBCASE("square axis variance is uniform plus smoothing") {
        Matrix s = synth_sample(synth_by_name("square"), n, 32);
        for (std::size_t d = 0; d < 2; ++d) {
            double m2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) m2 += s(i, d) * s(i, d);
            m2 /= static_cast<double>(n);
            // Var = h^2/3 + s^2; fourth-moment-based standard error.
            const double truth = 4.0 / 3.0 + 0.05 * 0.05;
            CHECK(std::fabs(m2 - truth) <= 0.03);
        }
    }
    SUBCASE("funnel second coordinate has variance e^(1/2)") {
        Matrix s = synth_sample(synth_by_name("funnel"), n, 33);
        double m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) m2 += s(i, 1) * s(i, 1);
        m2 /= static_cast<double>(n);
        CHECK(std::fabs(m2 - std::exp(0.5)) <= 0.1);
    }
}

TEST_CASE("scores match finite differences of the log density") {
    for (const std::string& name : synth_names()) {
        SynthSpec spec = synth_by_name(name);
        if (spec.name == SynthName::Square) spec.square_quadrature = true;
        REQUIRE(synth_score_available(spec));
        Matrix pts = synth_sample(spec, 40, 91);
        auto f = [&](const Vector& x) { return synth_log_density(spec, x); };
        std::size_t checked = 0;
        for (std::size_t i = 0; i < pts.rows(); ++i) {
            Vector x{pts(i, 0), pts(i, 1)};
            // The cosine support ends at |x1| = pi; keep probes interior.
            if (spec.name == SynthName::Cosine && std::fabs(x[0]) > kPi - 1e-3) continue;
            std::optional<Vector> g = synth_score(spec, x);
            REQUIRE(g.has_value());
            Vector fd = oracle::fd_grad(f, x, 1e-5);
            for (std::size_t d = 0; d < 2; ++d) {
                INFO(name << " point " << i << " coordinate " << d);
                CHECK(oracle::close((*g)[d], fd[d], 1e-4));
            }
            ++checked;
        }
        CHECK(checked >= 30);
    }
}

TEST_CASE("the smoothed square withholds its score unless asked") {
    SynthSpec plain = synth_by_name("square");
    CHECK_FALSE(synth_score_available(plain));
    CHECK_FALSE(synth_score(plain, Vector{0.1, 0.2}).has_value());
    CHECK_THROWS_AS(fisher_divergence([](const Vector& x) { return x; }, plain, 10, 1),
                    ScoreUnavailable);

    SynthSpec quad = plain;
    quad.square_quadrature = true;
    CHECK(synth_score_available(quad));
    CHECK(synth_score(quad, Vector{0.1, 0.2}).has_value());
    // Interior of the plateau: density is flat, score vanishes by symmetry.
    Vector mid = *synth_score(quad, Vector{0.0, 0.0});
    CHECK(mid[0] == 0.0);
    CHECK(mid[1] == 0.0);
}

TEST_CASE("square log density matches the quadrature oracle") {
    // Axis density is U(-2,2) convolved with N(0, 0.05^2); its integral is 1
    // and the interior value is the uniform height 1/4.
    auto axis = [](double x) {
        SynthSpec quad = synth_by_name("square");
        quad.square_quadrature = true;
        return std::exp(synth_log_density(quad, Vector{x, 0.0}) -
                        synth_log_density(quad, Vector{0.0, 0.0})) *
               0.25;  // relative to the interior value
    };
    const double total = oracle::adaptive_simpson(axis, -2.6, 2.6, 1e-10);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    SynthSpec quad = synth_by_name("square");
    quad.square_quadrature = true;
    const double interior = synth_log_density(quad, Vector{0.0, 0.0});
    CHECK(interior == doctest::Approx(-std::log(16.0)).epsilon(1e-9));
}

TEST_CASE("two-scale mixture density equals the direct two-component sum") {
    SynthSpec spec = synth_by_name("mog");
    Rng rng(101);
    for (int i = 0; i < 40; ++i) {
        Vector x{rng.normal(), rng.normal()};
        const double s2 = 0.05 * 0.05;
        const double n1 = std::exp(-0.5 * ((x[0] + 1.0) * (x[0] + 1.0) + x[1] * x[1])) /
                          (2.0 * kPi);
        const double n2 = std::exp(-((x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1]) / (2.0 * s2)) /
                          (2.0 * kPi * s2);
        CHECK(synth_log_density(spec, x) == doctest::Approx(std::log(n1 + n2)).epsilon(1e-12));
    }
}

TEST_CASE("cosine support is a finite strip") {
    SynthSpec spec = synth_by_name("cosine");
    CHECK(synth_log_density(spec, Vector{kPi + 0.1, 0.0}) ==
          -std::numeric_limits<double>::infinity());
    CHECK(std::isfinite(synth_log_density(spec, Vector{0.0, 2.0})));
    Matrix s = synth_sample(spec, 5000, 3);
    for (std::size_t i = 0; i < s.rows(); ++i) {
        CHECK(std::fabs(s(i, 0)) < kPi);
    }
}

TEST_CASE("fisher divergence vanishes exactly on the true score") {
    for (const std::string& name : {std::string("ring"), std::string("banana")}) {
        SynthSpec spec = synth_by_name(name);
        auto truth = [&](const Vector& x) { return *synth_score(spec, x); };
        CHECK(fisher_divergence(truth, spec, 500, 13) == 0.0);
    }
}

TEST_CASE("fisher divergence of a shifted score is half the squared shift") {
    SynthSpec spec = synth_by_name("ring");
    auto shifted = [&](const Vector& x) {
        Vector g = *synth_score(spec, x);
        g[0] += 0.3;
        g[1] += 0.4;
        return g;
    };
    CHECK(fisher_divergence(shifted, spec, 400, 17) ==
          doctest::Approx(0.5 * 0.25).epsilon(1e-12));
    CHECK_THROWS_AS(fisher_divergence(shifted, spec, 0, 1), UsageError);
}

TEST_CASE("model overload scores through the raw-space gradient") {
    Rng rng(19);
    FittedModel m;
    m.kernel = oracle::random_kernel(2, 1, 3, 1, rng, true);
    m.base = base_gaussian(Vector(2, 0.0), Vector(2, 2.0));
    m.inducing = oracle::random_matrix(4, 2, rng);
    m.alpha = oracle::random_vector(4, rng, 0.3);
    m.whitening = whitening_identity(2);

    SynthSpec spec = synth_by_name("banana");
    const double via_model = fisher_divergence(m, spec, 300, 23);
    const double via_fn = fisher_divergence(
        [&m](const Vector& x) { return grad_log_p_tilde_raw(m, x); }, spec, 300, 23);
    CHECK(via_model == via_fn);
    CHECK(via_model > 0.0);
}

TEST_CASE("point dimension is validated") {
    SynthSpec spec = synth_by_name("funnel");
    CHECK_THROWS_AS(synth_log_density(spec, Vector{1.0}), DimensionMismatch);
    CHECK_THROWS_AS(synth_score(spec, Vector{1.0, 2.0, 3.0}), DimensionMismatch);
}

}  // TEST_SUITE
