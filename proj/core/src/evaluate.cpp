#include "deepkexp/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "deepkexp/errors.hpp"

namespace deepkexp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Streaming log-sum-exp; constant memory, exact for constant inputs.
class LogSumStream {
  public:
    void add(double v) {
        if (n_ == 0) {
            max_ = v;
            acc_ = 1.0;
        } else if (v <= max_) {
            acc_ += std::exp(v - max_);
        } else {
            acc_ = acc_ * std::exp(max_ - v) + 1.0;
            max_ = v;
        }
        ++n_;
    }

    double log_mean() const { return max_ + std::log(acc_ / static_cast<double>(n_)); }
    double log_sum() const { return max_ + std::log(acc_); }
    std::size_t count() const { return n_; }

  private:
    double max_ = -kInf;
    double acc_ = 0.0;
    std::size_t n_ = 0;
};

double median_sq_pairwise(const Matrix& pts) {
    const std::size_t n = pts.rows();
    const std::size_t dim = pts.cols();
    std::vector<double> d2s;
    d2s.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = pts.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* xj = pts.row(j);
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = xi[d] - xj[d];
                d2 += diff * diff;
            }
            d2s.push_back(d2);
        }
    }
    if (d2s.empty()) return 1.0;
    const std::size_t mid = (d2s.size() - 1) / 2;
    std::nth_element(d2s.begin(), d2s.begin() + mid, d2s.end());
    return d2s[mid] > 0.0 ? d2s[mid] : 1.0;
}

}  // namespace

LogZEstimate estimate_log_z(const FittedModel& m, std::size_t n_samples, std::uint64_t seed) {
    if (n_samples == 0) throw UsageError("estimate_log_z: need at least one sample");
    Rng rng(seed);
    LogSumStream s1, s2;
    const std::size_t dim = m.dim();
    Vector y(dim);
    for (std::size_t u = 0; u < n_samples; ++u) {
        Matrix row = base_sample(m.base, 1, rng);
        y.assign(row.data(), row.data() + dim);
        const double f = model_f(m, y);
        s1.add(f);
        s2.add(2.0 * f);
    }
    LogZEstimate out;
    out.samples = n_samples;
    out.log_mean_r = s1.log_mean();
    out.log_z = base_log_partition(m.base) + out.log_mean_r;
    out.var_r = 0.0;
    out.rel_std_error = 0.0;
    if (n_samples >= 2) {
        const double logn = std::log(static_cast<double>(n_samples));
        const double la = s2.log_sum();                  // log sum r^2
        const double lb = 2.0 * out.log_mean_r + logn;   // log (n * mean^2)
        if (la > lb) {
            const double log_var =
                la + std::log1p(-std::exp(lb - la)) - std::log(static_cast<double>(n_samples - 1));
            out.var_r = std::exp(log_var);
            out.rel_std_error = std::exp(0.5 * (log_var - logn) - out.log_mean_r);
        }
    }
    return out;
}

double fssd2_at(const FittedModel& m, const Matrix& data_raw, const Matrix& locations) {
    const std::size_t dim = m.dim();
    if (locations.cols() != dim) {
        throw DimensionMismatch("fssd2: location width does not match model dimension");
    }
    if (locations.rows() == 0) throw UsageError("fssd2: need at least one location");
    if (data_raw.rows() == 0) throw EmptyBatch("fssd2: empty data");
    const Matrix w = whiten_rows(m.whitening, data_raw);
    const std::size_t n = w.rows();
    const std::size_t n_loc = locations.rows();

    const double h2 = median_sq_pairwise(locations);

    Matrix xi(n_loc, dim);
    Vector xv(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = w.row(i);
        xv.assign(x, x + dim);
        const Vector g = grad_log_p_tilde(m, xv);
        for (std::size_t b = 0; b < n_loc; ++b) {
            const double* v = locations.row(b);
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x[d] - v[d];
                d2 += diff * diff;
            }
            const double l = std::exp(-d2 / (2.0 * h2));
            double* xr = xi.row(b);
            for (std::size_t d = 0; d < dim; ++d) {
                xr[d] += l * g[d] - (x[d] - v[d]) / h2 * l;
            }
        }
    }
    double acc = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < n_loc; ++b) {
        const double* xr = xi.row(b);
        for (std::size_t d = 0; d < dim; ++d) {
            const double e = xr[d] * inv_n;
            acc += e * e;
        }
    }
    return acc / (static_cast<double>(dim) * static_cast<double>(n_loc));
}

double fssd2(const FittedModel& m, const Matrix& data_raw, std::size_t n_locations,
             std::uint64_t seed) {
    if (n_locations == 0) throw UsageError("fssd2: need at least one location");
    if (data_raw.rows() < n_locations) {
        throw TooFewRows("fssd2: need at least " + std::to_string(n_locations) + " rows, got " +
                         std::to_string(data_raw.rows()));
    }
    const Matrix w = whiten_rows(m.whitening, data_raw);
    Rng rng(seed);
    std::vector<std::size_t> idx(w.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    Matrix loc(n_locations, w.cols());
    for (std::size_t b = 0; b < n_locations; ++b) {
        const double* src = w.row(idx[b]);
        std::copy(src, src + w.cols(), loc.row(b));
    }
    double* lp = loc.data();
    for (std::size_t i = 0; i < loc.size(); ++i) lp[i] += 0.2 * rng.normal();
    return fssd2_at(m, data_raw, loc);
}

double psi(double q, double z) {
    if (!(q > 0.0) || !(z > 0.0)) throw UsageError("psi: arguments must be positive");
    return std::log(z / q) + q / z - 1.0;
}

double chi(double t, double x) {
    if (!(t > 0.0) || !(x > 0.0)) throw UsageError("chi: arguments must be positive");
    const double u = x - t;
    if (std::abs(u) <= 1e-4 * t) {
        const double t2 = t * t;
        return 1.0 / (2.0 * t2) - (2.0 / 3.0) * u / (t2 * t) + 0.75 * u * u / (t2 * t2);
    }
    return (std::log1p(u / t) + t / x - 1.0) / (u * u);
}

bool chi_convexity_check(double t, const Vector& grid) {
    if (!(t > 0.0)) throw UsageError("chi_convexity_check: t must be positive");
    Vector g = grid;
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    if (g.size() < 3) throw UsageError("chi_convexity_check: need at least three distinct points");
    for (double x : g) {
        if (!(x > 0.0)) throw UsageError("chi_convexity_check: grid must be positive");
    }
    Vector v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = chi(t, g[i]);
    for (std::size_t i = 1; i + 1 < g.size(); ++i) {
        const double left = (v[i] - v[i - 1]) / (g[i] - g[i - 1]);
        const double right = (v[i + 1] - v[i]) / (g[i + 1] - g[i]);
        const double dd = 2.0 * (right - left) / (g[i + 1] - g[i - 1]);
        if (!(dd > 0.0)) return false;
    }
    return true;
}

BiasBoundResult bias_bound_from_sampler(const std::function<double(Rng&)>& draw,
                                        double support_min, std::size_t n_samples,
                                        std::uint64_t seed, std::size_t pilot) {
    if (n_samples == 0) throw UsageError("bias_bound: need at least one sample");
    if (pilot == 0) throw UsageError("bias_bound: pilot sample must be nonempty");
    if (!(support_min > 0.0)) throw UsageError("bias_bound: support bound must be positive");

    Rng root(seed);
    Rng pilot_rng = root.fork(1);
    Rng tail_rng = root.fork(2);
    Rng main_rng = root.fork(3);

    BiasBoundResult out;
    out.a = support_min;

    {
        std::vector<double> vals(pilot);
        for (std::size_t i = 0; i < pilot; ++i) vals[i] = draw(pilot_rng);
        const std::size_t k = static_cast<std::size_t>(0.4 * static_cast<double>(pilot - 1));
        std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(k), vals.end());
        out.s = std::exp(-0.001) * vals[k];
    }
    if (out.s <= out.a) {
        out.s = out.a * (1.0 + 1e-6);
        out.degenerate_quantiles = true;
    }

    {
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < pilot; ++i) {
            if (draw(tail_rng) <= out.s) ++cnt;
        }
        const double phat = static_cast<double>(cnt) / static_cast<double>(pilot);
        const double rho = phat + std::sqrt(std::log(1000.0) / (2.0 * static_cast<double>(pilot)));
        // The tail factor 4 rho (1 - rho) peaks at rho = 1/2; past that the
        // bound saturates at its maximum, so larger estimates clamp there.
        out.rho = std::min(rho, 0.5);
    }

    {
        double mean = 0.0;
        double m2 = 0.0;
        for (std::size_t i = 0; i < n_samples; ++i) {
            const double x = draw(main_rng);
            const double delta = x - mean;
            mean += delta / static_cast<double>(i + 1);
            m2 += delta * (x - mean);
        }
        out.z_hat = mean;
        out.var_r = n_samples > 1 ? m2 / static_cast<double>(n_samples - 1) : 0.0;
    }

    const double t = 0.5 * (out.s + out.a);
    const double tail = std::pow(4.0 * out.rho * (1.0 - out.rho), 0.5 * static_cast<double>(n_samples));
    out.bound = chi(t, out.z_hat) * out.var_r / static_cast<double>(n_samples) +
                std::max(psi(out.a, out.z_hat), psi(t, out.z_hat)) * tail;
    return out;
}

BiasBoundResult bias_bound_detail(const FittedModel& m, std::size_t n_samples,
                                  std::uint64_t seed, std::size_t pilot) {
    double lo = 0.0;
    for (double av : m.alpha) lo += std::min(av, 0.0);
    const double a = std::exp(lo);
    const std::size_t dim = m.dim();
    auto draw = [&m, dim](Rng& rng) {
        Matrix row = base_sample(m.base, 1, rng);
        Vector x(row.data(), row.data() + dim);
        return std::exp(model_f(m, x));
    };
    return bias_bound_from_sampler(draw, a, n_samples, seed, pilot);
}

double bias_bound(const FittedModel& m, std::size_t n_samples, std::uint64_t seed,
                  std::size_t pilot) {
    return bias_bound_detail(m, n_samples, seed, pilot).bound;
}

EvalReport evaluate(const FittedModel& m, const Matrix& test_raw, const EvalConfig& cfg) {
    if (test_raw.rows() == 0) throw EmptyBatch("evaluate: empty test set");
    const Matrix w = whiten_rows(m.whitening, test_raw);
    const std::size_t dim = m.dim();

    EvalReport rep;
    rep.test_score_loss = score_loss(m, w);
    rep.fssd2 = fssd2(m, test_raw, cfg.n_locations, cfg.seed);

    const LogZEstimate lz = estimate_log_z(m, cfg.logz_samples, cfg.seed);
    rep.log_z_hat = lz.log_z;

    double mean_lp = 0.0;
    Vector xv(dim);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double* x = w.row(i);
        xv.assign(x, x + dim);
        mean_lp += log_p_tilde(m, xv);
    }
    mean_lp /= static_cast<double>(w.rows());
    rep.loglik_per_dim =
        (mean_lp - lz.log_z + m.whitening.log_abs_det) / static_cast<double>(dim);

    rep.bias_bound = bias_bound(m, cfg.bias_samples, cfg.seed, cfg.bias_pilot);
    rep.n_locations = cfg.n_locations;
    rep.logz_samples = cfg.logz_samples;
    rep.bias_samples = cfg.bias_samples;
    return rep;
}

}  // namespace deepkexp
