#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "deepkexp/featnet.hpp"
#include "deepkexp/la.hpp"

namespace deepkexp {

// Mixture kernel: k(x, y) = sum_r rho_r exp(-||phi_r(x) - phi_r(y)||^2 / (2 sigma_r^2)).
// Mixture weights live as softmax logits and bandwidths as log(sigma) so that
// gradient steps stay in valid ranges by construction. A component's feature
// map is either a softplus network or the identity (plain Gaussian kernel).
struct KernelParams {
    std::size_t input_dim = 0;
    Vector rho_free;   // R logits
    Vector log_sigma;  // R
    std::vector<std::optional<NetParams>> nets;  // nullopt = identity features

    std::size_t components() const { return rho_free.size(); }
    Vector mixture_weights() const;
    double bandwidth(std::size_t r) const;
    // gamma_r = 1 / sigma_r^2
    double gamma(std::size_t r) const;
    std::size_t feature_dim(std::size_t r) const;
    std::size_t scalar_count() const;
};

KernelParams kernel_zeros_like(const KernelParams& p);
void kernel_collect_scalars(KernelParams& p, std::vector<double*>& out);

Vector softmax(const Vector& logits);
// Given s = softmax(logits) and dL/ds, returns dL/dlogits.
Vector softmax_backward(const Vector& sm, const Vector& sbar);

// One feature map evaluated at one point. Identity maps materialize jac = I,
// hess = 0 so downstream code has a single path.
struct FeatureEval {
    Vector phi;
    Matrix jac;   // W x D
    Matrix hess;  // W x D
    std::optional<NetEval> net;  // retained for the parameter adjoint
};

FeatureEval feature_eval(const std::optional<NetParams>& net, std::size_t input_dim,
                         const double* x);
Vector feature_value(const std::optional<NetParams>& net, std::size_t input_dim,
                     const double* x);

// All component feature maps at one point.
std::vector<FeatureEval> kernel_features(const KernelParams& p, const double* x);
// Feature values for a set of points, one matrix per component (rows = points).
std::vector<Matrix> kernel_feature_table(const KernelParams& p, const Matrix& pts);

// Kernel value, x-gradient and diagonal x-Hessian of k(x, y_m) for every row
// y_m of the feature table. Any output pointer may be null.
//   kv[m], grad(m, d) = d k / d x_d, hess(m, d) = d^2 k / d x_d^2
void kernel_slabs(const KernelParams& p, const std::vector<FeatureEval>& fx,
                  const std::vector<Matrix>& phi_y, Vector* kv, Matrix* grad, Matrix* hess);

// Reverse pass of kernel_slabs. Accumulates sensitivities on the feature
// outputs at x, the feature values at each y_m, and the kernel's own
// parameters (mixture weights pre-chain, gamma per component).
struct KernelBack {
    std::vector<Vector> s_phi_x;   // per component: W_r
    std::vector<Matrix> s_jac_x;   // per component: W_r x D
    std::vector<Matrix> s_hess_x;  // per component: W_r x D
    std::vector<Matrix> s_phi_y;   // per component: M x W_r
    Vector rho_bar;                // dL/d rho_r (post-softmax weights)
    Vector gamma_bar;              // dL/d gamma_r

    static KernelBack zeros(const KernelParams& p, std::size_t m_points);
};

void kernel_slabs_backward(const KernelParams& p, const std::vector<FeatureEval>& fx,
                           const std::vector<Matrix>& phi_y, const Vector* s_kv,
                           const Matrix* s_grad, const Matrix* s_hess, KernelBack& back);

// Plain pairwise Gram matrix k(p_i, p_j).
Matrix kernel_gram(const KernelParams& p, const Matrix& pts);
Matrix kernel_gram_from_features(const KernelParams& p, const std::vector<Matrix>& phi);
// Reverse pass of the Gram assembly; sensitivities land in back.s_phi_y.
void kernel_gram_backward(const KernelParams& p, const std::vector<Matrix>& phi,
                          const Matrix& s_gram, KernelBack& back);

double kernel_eval(const KernelParams& p, const Vector& x, const Vector& y);
Vector kernel_grad_x(const KernelParams& p, const Vector& x, const Vector& y);
Vector kernel_hess_diag_x(const KernelParams& p, const Vector& x, const Vector& y);

}  // namespace deepkexp
