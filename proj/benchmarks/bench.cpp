// Microbenchmarks for the hot paths: feature-map evaluation, kernel slabs,
// score-matrix assembly, the coefficient solve, and the FSSD statistic.

#include <benchmark/benchmark.h>

#include "deepkexp/basedist.hpp"
#include "deepkexp/evaluate.hpp"
#include "deepkexp/featnet.hpp"
#include "deepkexp/kernel.hpp"
#include "deepkexp/model.hpp"
#include "deepkexp/rng.hpp"
#include "deepkexp/whitening.hpp"

using namespace deepkexp;

namespace {

Matrix random_rows(std::size_t n, std::size_t d, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

KernelParams make_kernel(std::size_t dim, std::size_t width, Rng& rng) {
    KernelParams kp;
    kp.input_dim = dim;
    kp.rho_free = {0.0};
    kp.log_sigma = {0.0};
    kp.nets.resize(1);
    NetSpec spec;
    spec.input_dim = dim;
    spec.layers = 3;
    spec.width = width;
    spec.skip = true;
    kp.nets[0] = net_init(spec, rng);
    return kp;
}

void bm_net_eval(benchmark::State& state) {
    Rng rng(1);
    const std::size_t dim = 2;
    KernelParams kp = make_kernel(dim, static_cast<std::size_t>(state.range(0)), rng);
    Vector x{0.3, -0.7};
    for (auto _ : state) {
        NetEval ev = net_eval(*kp.nets[0], x.data());
        benchmark::DoNotOptimize(ev.phi.data());
    }
}
BENCHMARK(bm_net_eval)->Arg(15)->Arg(30);

void bm_kernel_slabs(benchmark::State& state) {
    Rng rng(2);
    const std::size_t dim = 2;
    const std::size_t m_count = static_cast<std::size_t>(state.range(0));
    KernelParams kp = make_kernel(dim, 15, rng);
    Matrix inducing = random_rows(m_count, dim, rng);
    std::vector<Matrix> phi_y = kernel_feature_table(kp, inducing);
    Vector x{0.5, 0.1};
    Vector kv(m_count);
    Matrix grad(m_count, dim);
    Matrix hess(m_count, dim);
    for (auto _ : state) {
        std::vector<FeatureEval> fx = kernel_features(kp, x.data());
        kernel_slabs(kp, fx, phi_y, &kv, &grad, &hess);
        benchmark::DoNotOptimize(kv.data());
    }
}
BENCHMARK(bm_kernel_slabs)->Arg(100)->Arg(300);

void bm_assemble(benchmark::State& state) {
    Rng rng(3);
    const std::size_t dim = 2;
    KernelParams kp = make_kernel(dim, 15, rng);
    BaseDensityParams bp = base_gaussian(Vector(dim, 0.0), Vector(dim, 1.5));
    Matrix inducing = random_rows(static_cast<std::size_t>(state.range(0)), dim, rng);
    Matrix batch = random_rows(100, dim, rng);
    for (auto _ : state) {
        ScoreMatrices sm = assemble(kp, bp, inducing, batch);
        benchmark::DoNotOptimize(sm.rhs.data());
    }
}
BENCHMARK(bm_assemble)->Arg(100)->Arg(200);

void bm_solve_alpha(benchmark::State& state) {
    Rng rng(4);
    const std::size_t dim = 2;
    const std::size_t m_count = static_cast<std::size_t>(state.range(0));
    KernelParams kp = make_kernel(dim, 15, rng);
    BaseDensityParams bp = base_gaussian(Vector(dim, 0.0), Vector(dim, 1.5));
    Matrix inducing = random_rows(m_count, dim, rng);
    Matrix batch = random_rows(100, dim, rng);
    ScoreMatrices sm = assemble(kp, bp, inducing, batch);
    RegWeights reg = RegWeights::defaults();
    for (auto _ : state) {
        Vector alpha = solve_alpha(sm, reg);
        benchmark::DoNotOptimize(alpha.data());
    }
}
BENCHMARK(bm_solve_alpha)->Arg(100)->Arg(300);

void bm_fssd2(benchmark::State& state) {
    Rng rng(5);
    const std::size_t dim = 2;
    FittedModel m;
    m.kernel = make_kernel(dim, 15, rng);
    m.base = base_gaussian(Vector(dim, 0.0), Vector(dim, 1.0));
    m.inducing = random_rows(50, dim, rng);
    m.alpha.assign(50, 0.01);
    m.whitening = whitening_identity(dim);
    Matrix data = random_rows(static_cast<std::size_t>(state.range(0)), dim, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(fssd2(m, data, 20, 7));
    }
}
BENCHMARK(bm_fssd2)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
