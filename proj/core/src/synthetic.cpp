#include "deepkexp/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepkexp/errors.hpp"
#include "deepkexp/rng.hpp"

namespace deepkexp {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Ring: radius N(3, 0.2^2). Cosine/MoR noise scales and the two-scale MoG are
// pinned here; every consumer shares these numbers.
constexpr double kRingRadius = 3.0;
constexpr double kRingSigma = 0.2;
constexpr double kSquareHalf = 2.0;
constexpr double kSquareSigma = 0.05;
constexpr double kCosineAmp = 2.0;
constexpr double kCosineSigma = 0.2;
constexpr double kMogSharpSigma = 0.05;
constexpr double kMorRadius = 1.0;
constexpr double kMorSigma = 0.1;
constexpr double kMorSide = 6.0;

void require_2d(const SynthSpec& spec, const Vector& x) {
    if (spec.dim != 2) throw UsageError("synth: only two-dimensional specs are defined");
    if (x.size() != 2) throw DimensionMismatch("synth: point must be two-dimensional");
}

// Equilateral triangle with side kMorSide centered at the origin.
void mor_centers(double cx[3], double cy[3]) {
    const double circum = kMorSide / std::sqrt(3.0);
    cx[0] = 0.0;
    cy[0] = circum;
    cx[1] = -0.5 * kMorSide;
    cy[1] = -0.5 * circum;
    cx[2] = 0.5 * kMorSide;
    cy[2] = -0.5 * circum;
}

double sq(double v) { return v * v; }

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
double norm_cdf(double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

// Per-axis density of U(-h, h) convolved with N(0, s^2).
double square_axis_density(double x) {
    const double s = kSquareSigma;
    return (norm_cdf((x + kSquareHalf) / s) - norm_cdf((x - kSquareHalf) / s)) /
           (2.0 * kSquareHalf);
}

double square_axis_score(double x) {
    const double s = kSquareSigma;
    const double num = norm_pdf((x + kSquareHalf) / s) - norm_pdf((x - kSquareHalf) / s);
    const double den = norm_cdf((x + kSquareHalf) / s) - norm_cdf((x - kSquareHalf) / s);
    return num / (s * den);
}

}  // namespace

SynthSpec synth_by_name(const std::string& name) {
    SynthSpec spec;
    if (name == "funnel") {
        spec.name = SynthName::Funnel;
    } else if (name == "banana") {
        spec.name = SynthName::Banana;
    } else if (name == "ring") {
        spec.name = SynthName::Ring;
    } else if (name == "square") {
        spec.name = SynthName::Square;
    } else if (name == "cosine") {
        spec.name = SynthName::Cosine;
    } else if (name == "mog") {
        spec.name = SynthName::MoG;
    } else if (name == "mor") {
        spec.name = SynthName::MoR;
    } else {
        throw UnknownName("synth: unknown distribution '" + name + "'");
    }
    return spec;
}

std::string synth_name(SynthName name) {
    switch (name) {
        case SynthName::Funnel: return "funnel";
        case SynthName::Banana: return "banana";
        case SynthName::Ring: return "ring";
        case SynthName::Square: return "square";
        case SynthName::Cosine: return "cosine";
        case SynthName::MoG: return "mog";
        case SynthName::MoR: return "mor";
    }
    throw UnknownName("synth: invalid enum value");
}

const std::vector<std::string>& synth_names() {
    static const std::vector<std::string> names{"funnel", "banana", "ring",  "square",
                                                "cosine", "mog",    "mor"};
    return names;
}

Matrix synth_sample(const SynthSpec& spec, std::size_t n, std::uint64_t seed) {
    if (spec.dim != 2) throw UsageError("synth: only two-dimensional specs are defined");
    if (n == 0) throw UsageError("synth: need at least one sample");
    Matrix out(n, 2);
    Rng rng(seed);
    switch (spec.name) {
        case SynthName::Funnel:
            for (std::size_t i = 0; i < n; ++i) {
                const double x1 = rng.normal();
                out(i, 0) = x1;
                out(i, 1) = rng.normal() * std::exp(0.5 * x1);
            }
            break;
        case SynthName::Banana:
            for (std::size_t i = 0; i < n; ++i) {
                const double z1 = 2.0 * rng.normal();
                const double z2 = rng.normal();
                out(i, 0) = z1;
                out(i, 1) = z2 + 0.2 * (z1 * z1 - 4.0);
            }
            break;
        case SynthName::Ring:
            for (std::size_t i = 0; i < n; ++i) {
                const double r = kRingRadius + kRingSigma * rng.normal();
                const double th = rng.uniform(-kPi, kPi);
                out(i, 0) = r * std::cos(th);
                out(i, 1) = r * std::sin(th);
            }
            break;
        case SynthName::Square:
            for (std::size_t i = 0; i < n; ++i) {
                out(i, 0) = rng.uniform(-kSquareHalf, kSquareHalf) + kSquareSigma * rng.normal();
                out(i, 1) = rng.uniform(-kSquareHalf, kSquareHalf) + kSquareSigma * rng.normal();
            }
            break;
        case SynthName::Cosine:
            for (std::size_t i = 0; i < n; ++i) {
                const double x1 = rng.uniform(-kPi, kPi);
                out(i, 0) = x1;
                out(i, 1) = kCosineAmp * std::cos(x1) + kCosineSigma * rng.normal();
            }
            break;
        case SynthName::MoG:
            for (std::size_t i = 0; i < n; ++i) {
                if (rng.uniform01() < 0.5) {
                    out(i, 0) = -1.0 + rng.normal();
                    out(i, 1) = rng.normal();
                } else {
                    out(i, 0) = 1.0 + kMogSharpSigma * rng.normal();
                    out(i, 1) = kMogSharpSigma * rng.normal();
                }
            }
            break;
        case SynthName::MoR: {
            double cx[3];
            double cy[3];
            mor_centers(cx, cy);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = rng.index(3);
                const double r = kMorRadius + kMorSigma * rng.normal();
                const double th = rng.uniform(-kPi, kPi);
                out(i, 0) = cx[c] + r * std::cos(th);
                out(i, 1) = cy[c] + r * std::sin(th);
            }
            break;
        }
    }
    return out;
}

bool synth_score_available(const SynthSpec& spec) {
    return spec.name != SynthName::Square || spec.square_quadrature;
}

double synth_log_density(const SynthSpec& spec, const Vector& x) {
    require_2d(spec, x);
    switch (spec.name) {
        case SynthName::Funnel:
            return -0.5 * sq(x[0]) - 0.5 * x[0] - 0.5 * sq(x[1]) * std::exp(-x[0]);
        case SynthName::Banana: {
            const double w = x[1] - 0.2 * (sq(x[0]) - 4.0);
            return -sq(x[0]) / 8.0 - 0.5 * sq(w);
        }
        case SynthName::Ring: {
            const double r = std::sqrt(sq(x[0]) + sq(x[1]));
            return -sq(r - kRingRadius) / (2.0 * sq(kRingSigma)) - std::log(r);
        }
        case SynthName::Square:
            return std::log(square_axis_density(x[0])) + std::log(square_axis_density(x[1]));
        case SynthName::Cosine: {
            if (x[0] <= -kPi || x[0] >= kPi) return -kInf;
            const double w = x[1] - kCosineAmp * std::cos(x[0]);
            return -sq(w) / (2.0 * sq(kCosineSigma));
        }
        case SynthName::MoG: {
            const double l1 = -0.5 * (sq(x[0] + 1.0) + sq(x[1])) - std::log(2.0 * kPi);
            const double l2 = -(sq(x[0] - 1.0) + sq(x[1])) / (2.0 * sq(kMogSharpSigma)) -
                              std::log(2.0 * kPi * sq(kMogSharpSigma));
            const double m = std::max(l1, l2);
            return m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
        }
        case SynthName::MoR: {
            double cx[3];
            double cy[3];
            mor_centers(cx, cy);
            double ls[3];
            for (int c = 0; c < 3; ++c) {
                const double r = std::sqrt(sq(x[0] - cx[c]) + sq(x[1] - cy[c]));
                ls[c] = -sq(r - kMorRadius) / (2.0 * sq(kMorSigma)) - std::log(r);
            }
            const double m = std::max({ls[0], ls[1], ls[2]});
            return m + std::log(std::exp(ls[0] - m) + std::exp(ls[1] - m) + std::exp(ls[2] - m));
        }
    }
    throw UnknownName("synth: invalid enum value");
}

std::optional<Vector> synth_score(const SynthSpec& spec, const Vector& x) {
    require_2d(spec, x);
    Vector g(2, 0.0);
    switch (spec.name) {
        case SynthName::Funnel: {
            const double einv = std::exp(-x[0]);
            g[0] = -x[0] - 0.5 + 0.5 * sq(x[1]) * einv;
            g[1] = -x[1] * einv;
            return g;
        }
        case SynthName::Banana: {
            const double w = x[1] - 0.2 * (sq(x[0]) - 4.0);
            g[0] = -x[0] / 4.0 + 0.4 * x[0] * w;
            g[1] = -w;
            return g;
        }
        case SynthName::Ring: {
            const double r = std::sqrt(sq(x[0]) + sq(x[1]));
            const double radial = -(r - kRingRadius) / sq(kRingSigma) - 1.0 / r;
            g[0] = radial * x[0] / r;
            g[1] = radial * x[1] / r;
            return g;
        }
        case SynthName::Square: {
            if (!spec.square_quadrature) return std::nullopt;
            g[0] = square_axis_score(x[0]);
            g[1] = square_axis_score(x[1]);
            return g;
        }
        case SynthName::Cosine: {
            const double w = x[1] - kCosineAmp * std::cos(x[0]);
            const double inv_var = 1.0 / sq(kCosineSigma);
            g[0] = -w * inv_var * kCosineAmp * std::sin(x[0]);
            g[1] = -w * inv_var;
            return g;
        }
        case SynthName::MoG: {
            const double v2 = sq(kMogSharpSigma);
            const double l1 = -0.5 * (sq(x[0] + 1.0) + sq(x[1])) - std::log(2.0 * kPi);
            const double l2 =
                -(sq(x[0] - 1.0) + sq(x[1])) / (2.0 * v2) - std::log(2.0 * kPi * v2);
            const double m = std::max(l1, l2);
            const double w1 = std::exp(l1 - m);
            const double w2 = std::exp(l2 - m);
            const double tot = w1 + w2;
            g[0] = (w1 * (-(x[0] + 1.0)) + w2 * (-(x[0] - 1.0) / v2)) / tot;
            g[1] = (w1 * (-x[1]) + w2 * (-x[1] / v2)) / tot;
            return g;
        }
        case SynthName::MoR: {
            double cx[3];
            double cy[3];
            mor_centers(cx, cy);
            double ls[3];
            double gx[3];
            double gy[3];
            for (int c = 0; c < 3; ++c) {
                const double dx = x[0] - cx[c];
                const double dy = x[1] - cy[c];
                const double r = std::sqrt(sq(dx) + sq(dy));
                ls[c] = -sq(r - kMorRadius) / (2.0 * sq(kMorSigma)) - std::log(r);
                const double radial = -(r - kMorRadius) / sq(kMorSigma) - 1.0 / r;
                gx[c] = radial * dx / r;
                gy[c] = radial * dy / r;
            }
            const double m = std::max({ls[0], ls[1], ls[2]});
            double tot = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double w = std::exp(ls[c] - m);
                tot += w;
                g[0] += w * gx[c];
                g[1] += w * gy[c];
            }
            g[0] /= tot;
            g[1] /= tot;
            return g;
        }
    }
    throw UnknownName("synth: invalid enum value");
}

double fisher_divergence(const std::function<Vector(const Vector&)>& model_score,
                         const SynthSpec& spec, std::size_t n, std::uint64_t seed) {
    if (!synth_score_available(spec)) {
        throw ScoreUnavailable("fisher_divergence: true score unavailable for " +
                               synth_name(spec.name));
    }
    if (n == 0) throw UsageError("fisher_divergence: need at least one sample");
    const Matrix pts = synth_sample(spec, n, seed);
    double acc = 0.0;
    Vector x(2);
    for (std::size_t i = 0; i < n; ++i) {
        x.assign(pts.row(i), pts.row(i) + 2);
        const Vector gm = model_score(x);
        const Vector gt = *synth_score(spec, x);
        if (gm.size() != gt.size()) {
            throw DimensionMismatch("fisher_divergence: model score has wrong dimension");
        }
        double s = 0.0;
        for (std::size_t d = 0; d < gt.size(); ++d) s += sq(gm[d] - gt[d]);
        acc += 0.5 * s;
    }
    return acc / static_cast<double>(n);
}

double fisher_divergence(const FittedModel& m, const SynthSpec& spec, std::size_t n,
                         std::uint64_t seed) {
    return fisher_divergence(
        [&m](const Vector& x) { return grad_log_p_tilde_raw(m, x); }, spec, n, seed);
}

}  // namespace deepkexp
