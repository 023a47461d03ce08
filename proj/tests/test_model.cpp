#include <cmath>
#include <limits>

#include "deepkexp/eigensym.hpp"
#include "deepkexp/errors.hpp"
#include "deepkexp/model.hpp"
#include "deepkexp/synthetic.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace deepkexp;

namespace {

FittedModel random_model(Rng& rng, std::size_t dim = 2, std::size_t m_count = 5,
                         bool identity = false) {
    FittedModel m;
    m.kernel = oracle::random_kernel(dim, 2, 4, 2, rng, identity);
    m.base = oracle::random_base(dim, rng);
    m.inducing = oracle::random_matrix(m_count, dim, rng);
    m.alpha = oracle::random_vector(m_count, rng, 0.5);
    m.whitening = whitening_identity(dim);
    return m;
}

KernelParams plain_gaussian(std::size_t dim, double sigma) {
    KernelParams kp;
    kp.input_dim = dim;
    kp.rho_free = {0.0};
    kp.log_sigma = {std::log(sigma)};
    kp.nets.resize(1);
    return kp;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero coefficients reduce to the base log density") {
    Rng rng(3);
    FittedModel m = random_model(rng);
    m.alpha.assign(m.alpha.size(), 0.0);
    Vector x = oracle::random_vector(2, rng);
    CHECK(log_p_tilde(m, x) == base_log_density(m.base, x.data()));
}

TEST_CASE("single inducing point self-value contributes exactly one") {
    Rng rng(5);
    FittedModel m = random_model(rng, 2, 1);
    m.alpha = {1.0};
    Vector z(m.inducing.row(0), m.inducing.row(0) + 2);
    const double f = log_p_tilde(m, z) - base_log_density(m.base, z.data());
    CHECK(f == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("derivatives match finite differences") {
    Rng rng(7);
    for (int rep = 0; rep < 3; ++rep) {
        FittedModel m = random_model(rng);
        Vector x = oracle::random_vector(2, rng);
        auto f = [&](const Vector& q) { return log_p_tilde(m, q); };
        Vector g = grad_log_p_tilde(m, x);
        Vector h = hess_diag_log_p_tilde(m, x);
        Vector gf = oracle::fd_grad(f, x, 1e-5);
        Vector hf = oracle::fd_hess_diag(f, x, 1e-4);
        for (std::size_t d = 0; d < 2; ++d) {
            CHECK(oracle::close(g[d], gf[d], 1e-5));
            CHECK(oracle::close(h[d], hf[d], 1e-4));
        }
    }
}

TEST_CASE("assemble with constant features gives zero derivatives and all-ones gram") {
    KernelParams kp;
    kp.input_dim = 2;
    kp.rho_free = {0.0};
    kp.log_sigma = {0.0};
    NetParams p;
    p.spec = NetSpec{2, 2, 3, true};
    p.weights = {Matrix(3, 2), Matrix(3, 3)};
    p.biases = {Vector(3, 0.0), Vector(3, 0.0)};
    p.skip_weight = Matrix(3, 2);
    kp.nets = {p};

    Rng rng(9);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(3, 2, rng);
    Matrix batch = oracle::random_matrix(6, 2, rng);
    ScoreMatrices sm = assemble(kp, bp, z, batch);
    for (std::size_t i = 0; i < sm.grad_prod.size(); ++i) {
        CHECK(sm.grad_prod.data()[i] == 0.0);
        CHECK(sm.curv_prod.data()[i] == 0.0);
        CHECK(sm.gram.data()[i] == 1.0);
    }
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(sm.rhs[i] == 0.0);
        CHECK(sm.rhs_curv[i] == 0.0);
    }
}

TEST_CASE("assemble matches hand-computed closed forms on one point") {
    const double sigma = 1.3;
    KernelParams kp = plain_gaussian(2, sigma);
    BaseDensityParams bp = base_gaussian({0.1, -0.2}, {1.1, 0.9});
    Matrix z(1, 2);
    z(0, 0) = 0.4;
    z(0, 1) = -0.6;
    Matrix batch(1, 2);
    batch(0, 0) = -0.3;
    batch(0, 1) = 0.8;

    ScoreMatrices sm = assemble(kp, bp, z, batch);

    const double inv_s2 = 1.0 / (sigma * sigma);
    double d2 = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
        const double diff = batch(0, d) - z(0, d);
        d2 += diff * diff;
    }
    const double k = std::exp(-0.5 * d2 * inv_s2);
    double g_want = 0.0, u_want = 0.0, b_want = 0.0, bc_want = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
        const double diff = batch(0, d) - z(0, d);
        const double dk = -diff * inv_s2 * k;
        const double d2k = (-inv_s2 + diff * diff * inv_s2 * inv_s2) * k;
        const double sig = bp.sigma(d);
        const double gq = -(batch(0, d) - bp.mu[d]) / (sig * sig);
        const double hq = -1.0 / (sig * sig);
        g_want += dk * dk;
        u_want += d2k * d2k;
        b_want += d2k + gq * dk;
        bc_want += hq * d2k;
    }
    CHECK(oracle::close(sm.grad_prod(0, 0), g_want, 1e-13));
    CHECK(oracle::close(sm.curv_prod(0, 0), u_want, 1e-13));
    CHECK(oracle::close(sm.rhs[0], b_want, 1e-13));
    CHECK(oracle::close(sm.rhs_curv[0], bc_want, 1e-13));
    CHECK(sm.gram(0, 0) == 1.0);
}

TEST_CASE("assembled quadratic matrices are positive semidefinite") {
    Rng rng(11);
    KernelParams kp = oracle::random_kernel(2, 2, 4, 2, rng);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(6, 2, rng);
    Matrix batch = oracle::random_matrix(12, 2, rng);
    ScoreMatrices sm = assemble(kp, bp, z, batch);

    for (const Matrix* mat : {&sm.grad_prod, &sm.curv_prod}) {
        double trace = 0.0;
        for (std::size_t i = 0; i < 6; ++i) trace += (*mat)(i, i);
        SymEigen e = sym_eigen(*mat);
        CHECK(e.values[0] >= -1e-8 * trace);
    }
}

TEST_CASE("parallel assemble agrees with serial") {
    Rng rng(13);
    KernelParams kp = oracle::random_kernel(2, 2, 4, 2, rng);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(5, 2, rng);
    Matrix batch = oracle::random_matrix(23, 2, rng);
    ScoreMatrices serial = assemble(kp, bp, z, batch, 1);
    ScoreMatrices par = assemble(kp, bp, z, batch, 4);
    for (std::size_t i = 0; i < serial.grad_prod.size(); ++i) {
        CHECK(oracle::close(par.grad_prod.data()[i], serial.grad_prod.data()[i], 1e-12));
        CHECK(oracle::close(par.curv_prod.data()[i], serial.curv_prod.data()[i], 1e-12));
    }
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(oracle::close(par.rhs[i], serial.rhs[i], 1e-12));
        CHECK(oracle::close(par.rhs_curv[i], serial.rhs_curv[i], 1e-12));
    }
}

TEST_CASE("assemble rejects an empty batch") {
    Rng rng(15);
    KernelParams kp = plain_gaussian(2, 1.0);
    BaseDensityParams bp = base_default(2);
    Matrix z = oracle::random_matrix(2, 2, rng);
    Matrix batch(0, 2);
    CHECK_THROWS_AS(assemble(kp, bp, z, batch), EmptyBatch);
}

TEST_CASE("pure ridge solve returns minus the right-hand side") {
    ScoreMatrices sm;
    sm.grad_prod = Matrix(3, 3);
    sm.curv_prod = Matrix(3, 3);
    sm.gram = Matrix(3, 3);
    sm.rhs = {1.0, -2.0, 0.5};
    sm.rhs_curv = Vector(3, 0.0);
    Vector alpha = solve_alpha(sm, RegWeights::from_values(1.0, 1e-3, 0.0));
    CHECK(alpha[0] == -1.0);
    CHECK(alpha[1] == 2.0);
    CHECK(alpha[2] == -0.5);
}

TEST_CASE("large ridge shrinks alpha towards -b/lambda") {
    Rng rng(17);
    KernelParams kp = oracle::random_kernel(2, 1, 3, 2, rng);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(4, 2, rng);
    Matrix batch = oracle::random_matrix(10, 2, rng);
    ScoreMatrices sm = assemble(kp, bp, z, batch);
    const double la = 1e6;
    Vector alpha = solve_alpha(sm, RegWeights::from_values(la, 1e-3, 0.0));
    for (std::size_t i = 0; i < 4; ++i) {
        const double want = -(sm.rhs[i] + 1e-3 * sm.rhs_curv[i]) / la;
        CHECK(oracle::close(alpha[i], want, 1e-3));
    }
}

TEST_CASE("solve_alpha requires a positive ridge") {
    ScoreMatrices sm;
    sm.grad_prod = Matrix(2, 2);
    sm.curv_prod = Matrix(2, 2);
    sm.gram = Matrix(2, 2);
    sm.rhs = {1.0, 1.0};
    sm.rhs_curv = Vector(2, 0.0);
    RegWeights reg = RegWeights::from_values(1e-3, 1e-3, 0.0);
    reg.log_lambda_alpha = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(solve_alpha(sm, reg), UsageError);
}

TEST_CASE("solved alpha minimizes the regularized loss over random perturbations") {
    Rng rng(19);
    KernelParams kp = oracle::random_kernel(2, 2, 4, 2, rng);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(8, 2, rng);
    Matrix batch = oracle::random_matrix(16, 2, rng);
    RegWeights reg = RegWeights::from_values(1e-2, 1e-3, 1e-3);

    ScoreMatrices sm = assemble(kp, bp, z, batch);
    Vector alpha = solve_alpha(sm, reg);

    FittedModel m;
    m.kernel = kp;
    m.base = bp;
    m.inducing = z;
    m.alpha = alpha;
    m.whitening = whitening_identity(2);
    const double at_solution = regularized_loss(m, batch, reg);

    for (int rep = 0; rep < 100; ++rep) {
        Vector delta = oracle::random_vector(8, rng);
        double norm = 0.0;
        for (double v : delta) norm += v * v;
        norm = std::sqrt(norm);
        FittedModel pert = m;
        for (std::size_t i = 0; i < 8; ++i) {
            pert.alpha[i] = alpha[i] + delta[i] / norm * 1e-3;
        }
        CHECK(regularized_loss(pert, batch, reg) >= at_solution);
    }

    // Gradient of the quadratic objective at the solution.
    const double la = reg.lambda_alpha();
    const double lc = reg.lambda_c();
    const double lh = reg.lambda_h();
    double bmax = 0.0;
    Vector resid(8, 0.0);
    for (std::size_t i = 0; i < 8; ++i) {
        double acc = sm.rhs[i] + lc * sm.rhs_curv[i];
        bmax = std::max(bmax, std::fabs(acc));
        for (std::size_t j = 0; j < 8; ++j) {
            acc += (sm.grad_prod(i, j) + lc * sm.curv_prod(i, j) + lh * sm.gram(i, j)) * alpha[j];
        }
        acc += la * alpha[i];
        resid[i] = acc;
    }
    CHECK(oracle::max_abs(resid) <= 1e-7 * (1.0 + bmax));
}

TEST_CASE("score loss is exactly minus the dimension at the origin") {
    for (std::size_t dim : {std::size_t{1}, std::size_t{2}, std::size_t{10}}) {
        FittedModel m;
        m.kernel = plain_gaussian(dim, 1.0);
        m.base = base_gaussian(Vector(dim, 0.0), Vector(dim, 1.0));
        m.inducing = Matrix(1, dim);
        m.inducing.fill(0.5);
        m.alpha = {0.0};
        m.whitening = whitening_identity(dim);
        Matrix batch(1, dim);
        CHECK(score_loss(m, batch) == -static_cast<double>(dim));
    }
}

TEST_CASE("gaussian score loss closed form at a general point") {
    FittedModel m;
    m.kernel = plain_gaussian(2, 1.0);
    m.base = base_gaussian({0.0, 0.0}, {1.0, 1.0});
    m.inducing = Matrix(1, 2);
    m.alpha = {0.0};
    m.whitening = whitening_identity(2);
    Matrix batch(1, 2);
    batch(0, 0) = 0.7;
    batch(0, 1) = -1.9;
    double want = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
        want += -1.0 + 0.5 * batch(0, d) * batch(0, d);
    }
    CHECK(score_loss(m, batch) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("score loss composes from the pointwise derivative operations") {
    Rng rng(23);
    FittedModel m = random_model(rng, 2, 4);
    Matrix batch = oracle::random_matrix(7, 2, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        Vector x(batch.row(i), batch.row(i) + 2);
        Vector g = grad_log_p_tilde(m, x);
        Vector h = hess_diag_log_p_tilde(m, x);
        for (std::size_t d = 0; d < 2; ++d) want += h[d] + 0.5 * g[d] * g[d];
    }
    want /= 7.0;
    CHECK(oracle::close(score_loss(m, batch), want, 1e-12));
}

TEST_CASE("regularized loss with all weights zero equals the score loss") {
    Rng rng(29);
    FittedModel m = random_model(rng, 2, 4);
    Matrix batch = oracle::random_matrix(5, 2, rng);
    RegWeights reg;
    reg.log_lambda_alpha = -std::numeric_limits<double>::infinity();
    reg.log_lambda_c = -std::numeric_limits<double>::infinity();
    reg.log_lambda_h = -std::numeric_limits<double>::infinity();
    CHECK(regularized_loss(m, batch, reg) == score_loss(m, batch));
}

TEST_CASE("regularized loss at zero alpha keeps only the base curvature penalty") {
    Rng rng(31);
    FittedModel m = random_model(rng, 2, 3);
    m.alpha.assign(3, 0.0);
    Matrix batch = oracle::random_matrix(6, 2, rng);
    RegWeights reg = RegWeights::from_values(1e-2, 0.5, 0.0);
    double curv = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        Vector h = base_hess_diag(m.base, Vector(batch.row(i), batch.row(i) + 2));
        for (double v : h) curv += v * v;
    }
    const double want = score_loss(m, batch) + 0.5 / 6.0 * curv * 0.5;
    CHECK(oracle::close(regularized_loss(m, batch, reg), want, 1e-12));
}

TEST_CASE("monotone ridge: larger lambda_alpha strictly shrinks alpha") {
    Rng rng(37);
    KernelParams kp = oracle::random_kernel(2, 1, 4, 2, rng);
    BaseDensityParams bp = oracle::random_base(2, rng);
    Matrix z = oracle::random_matrix(5, 2, rng);
    Matrix batch = oracle::random_matrix(12, 2, rng);
    ScoreMatrices sm = assemble(kp, bp, z, batch);
    double prev = std::numeric_limits<double>::infinity();
    for (double la : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
        Vector alpha = solve_alpha(sm, RegWeights::from_values(la, 1e-3, 0.0));
        double norm = 0.0;
        for (double v : alpha) norm += v * v;
        CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("fitting on a batch improves the score loss over zero alpha") {
    for (const auto& name : synth_names()) {
        SynthSpec spec = synth_by_name(name);
        Matrix batch = synth_sample(spec, 200, 71);
        FittedModel m;
        m.kernel = plain_gaussian(2, 1.0);
        m.base = base_default(2);
        m.whitening = whitening_identity(2);
        m.inducing = Matrix(20, 2);
        for (std::size_t i = 0; i < 20; ++i) {
            m.inducing(i, 0) = batch(i, 0);
            m.inducing(i, 1) = batch(i, 1);
        }
        m.alpha.assign(20, 0.0);
        const double at_zero = score_loss(m, batch);
        ScoreMatrices sm = assemble(m.kernel, m.base, m.inducing, batch);
        m.alpha = solve_alpha(sm, RegWeights::from_values(1e-6, 0.0, 0.0));
        CHECK(score_loss(m, batch) < at_zero);
    }
}

TEST_CASE("raw-space evaluation applies the whitening chain") {
    Rng rng(41);
    FittedModel m = random_model(rng, 2, 3);
    Matrix rows = oracle::random_matrix(100, 2, rng, 2.0);
    for (std::size_t i = 0; i < 100; ++i) rows(i, 1) += 0.7 * rows(i, 0);
    m.whitening = whitening_fit(rows);

    Vector x_raw = oracle::random_vector(2, rng);
    Vector x_int = whiten(m.whitening, x_raw);
    CHECK(log_p_tilde_raw(m, x_raw) ==
          doctest::Approx(log_p_tilde(m, x_int) + m.whitening.log_abs_det).epsilon(1e-14));

    auto f = [&](const Vector& q) { return log_p_tilde_raw(m, q); };
    Vector g = grad_log_p_tilde_raw(m, x_raw);
    Vector gf = oracle::fd_grad(f, x_raw, 1e-5);
    for (std::size_t d = 0; d < 2; ++d) CHECK(oracle::close(g[d], gf[d], 1e-5));
}

}  // TEST_SUITE
