#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "deepkexp/model.hpp"

namespace deepkexp {

struct TrainConfig {
    std::size_t inducing_count = 300;
    std::size_t batch_train = 100;  // |D_t|
    std::size_t batch_val = 100;    // |D_v|, also the stage-2 validation draw
    double lr_stage1 = 1e-2;
    double lr_stage2 = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t patience = 200;
    double data_noise_std = 0.05;
    std::uint64_t seed = 0;
    std::optional<double> max_wallclock_sec;  // soft budget; default unlimited
    std::size_t max_steps_stage1 = 100000;    // hard caps; patience stops first in practice
    std::size_t max_steps_stage2 = 100000;
    double lambda_init = 1e-3;
    bool optimize_lambda_h = false;  // lambda_h stays 0 unless enabled
    bool train_base = true;
    std::size_t threads = 1;  // forwarded to full-dataset assembly
};

struct ModelArch {
    std::size_t components = 3;  // R
    NetSpec net{0, 3, 30, true};  // input_dim filled from data
    bool identity_features = false;  // plain Gaussian kernel components

    static ModelArch defaults() { return {}; }
};

struct InitOverrides {
    std::optional<Vector> sigmas;  // per-component bandwidth init
    std::optional<BaseDensityParams> base;
};

struct StepRecord {
    std::size_t step;
    int stage;
    double val_objective;
    double wallclock_ms;
};

struct TrainReport {
    std::vector<StepRecord> trace;
    std::size_t stage1_steps = 0;
    std::size_t stage2_steps = 0;
    double final_val_objective = 0.0;
    double wallclock_sec = 0.0;
};

// Everything Stage 1 optimizes, bundled for the meta-gradient.
struct ModelState {
    KernelParams kernel;
    BaseDensityParams base;
    Matrix inducing;
    RegWeights reg;
};

struct MetaGrad {
    KernelParams kernel;
    BaseDensityParams base;
    Matrix inducing;
    double log_lambda_alpha = 0.0;
    double log_lambda_c = 0.0;
    double log_lambda_h = 0.0;
    double objective = 0.0;  // validation score loss at the evaluated state
};

// Validation objective of the closed-form fit: alpha solved on train_batch,
// score loss evaluated on val_batch. The finite-difference reference for
// meta_gradient.
double stage_objective(const ModelState& st, const Matrix& train_batch, const Matrix& val_batch);

// Exact gradient of stage_objective with respect to every free parameter
// (network weights, log bandwidths, mixture logits, inducing points, base
// parameters, log regularizer weights), differentiating through the linear
// solve with one extra solve against the same factorization.
MetaGrad meta_gradient(const ModelState& st, const Matrix& train_batch, const Matrix& val_batch,
                       bool grad_lambda_h = false);

// Deterministic 90/10 split (validation capped at 1000 rows); returns
// (fit indices, validation indices). Exposed so external code can reproduce
// exactly what train() used.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n_rows,
                                                                            std::uint64_t seed);

std::pair<FittedModel, TrainReport> train(const Matrix& data, const TrainConfig& cfg,
                                          const ModelArch& arch,
                                          const InitOverrides& init = {});

// Spectral clustering: Gaussian affinity with median-heuristic bandwidth,
// k-means over the bottom n_clusters eigenvectors of the normalized
// Laplacian. Returns one label per row.
std::vector<std::size_t> spectral_cluster(const Matrix& data, std::size_t n_clusters,
                                          std::uint64_t seed);

struct MixtureComponent {
    FittedModel model;
    double weight;
};

// Cluster, then fit one model per cluster; weights are cluster fractions.
std::vector<MixtureComponent> fit_mixture(const Matrix& data, std::size_t n_clusters,
                                          const TrainConfig& cfg, const ModelArch& arch);

// Density-ratio distortion of the joint fit on two well-separated clusters
// with weight pi vs (1 - pi): exp(D / (2 sigma^2 lambda_alpha) * (pi - 1/2)).
double predicted_separated_ratio(std::size_t dim, double sigma, double lambda_alpha, double pi);

}  // namespace deepkexp
