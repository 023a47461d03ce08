#pragma once

#include <cstddef>
#include <vector>

#include "deepkexp/la.hpp"
#include "deepkexp/rng.hpp"

namespace deepkexp {

// Fully connected softplus network used as a kernel feature map.
// All hidden layers share one width; an optional skip connection adds a
// linear input map to the top layer's preactivation.
struct NetSpec {
    std::size_t input_dim = 0;
    std::size_t layers = 3;
    std::size_t width = 30;
    bool skip = true;

    bool operator==(const NetSpec&) const = default;
};

struct NetParams {
    NetSpec spec;
    std::vector<Matrix> weights;  // weights[l] is width x fan_in of layer l
    std::vector<Vector> biases;   // biases[l] is width
    Matrix skip_weight;           // width x input_dim, present iff spec.skip

    std::size_t scalar_count() const;
};

// Weights Gaussian with std 1/sqrt(fan_in); biases zero.
NetParams net_init(const NetSpec& spec, Rng& rng);

// Zero-valued parameter holder of matching shapes (gradient accumulator).
NetParams net_zeros_like(const NetParams& p);

// Appends pointers to every trainable scalar in a fixed order.
void net_collect_scalars(NetParams& p, std::vector<double*>& out);

// Forward pass caches. jac(i, d) = d phi_i / d x_d; hess(i, d) = d^2 phi_i / d x_d^2.
// The per-layer ladders are retained so the parameter adjoint can run without
// re-walking the network.
struct NetEval {
    Vector phi;
    Matrix jac;
    Matrix hess;

    std::vector<Vector> h;               // h[0] = x, h[l] = activations of layer l
    std::vector<Vector> d1, d2, d3;      // softplus derivative ladders at each preactivation
    std::vector<Matrix> pre_jac;         // A^l before the activation derivative
    std::vector<Matrix> pre_hess;        // B^l = W^l H^{l-1}
    std::vector<Matrix> jac_l, hess_l;   // J^l, H^l per layer
};

NetEval net_eval(const NetParams& p, const double* x);

Vector net_forward(const NetParams& p, const Vector& x);
Matrix net_input_jacobian(const NetParams& p, const Vector& x);
Matrix net_input_hessian_diag(const NetParams& p, const Vector& x);

// Reverse pass. Seeds are sensitivities of some scalar loss with respect to
// phi, jac and hess at the evaluated point (null means zero). Accumulates
// into grads, which must be shaped like p (see net_zeros_like).
void net_param_gradients(const NetParams& p, const NetEval& ev,
                         const Vector* s_phi, const Matrix* s_jac, const Matrix* s_hess,
                         NetParams& grads);

// Overflow-safe softplus ladder: value, first, second, third derivatives.
double softplus(double a);
double softplus_d1(double a);  // logistic
inline double softplus_d2(double d1v) { return d1v * (1.0 - d1v); }
inline double softplus_d3(double d1v) { return d1v * (1.0 - d1v) * (1.0 - 2.0 * d1v); }

}  // namespace deepkexp
