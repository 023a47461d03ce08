#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepkexp/la.hpp"
#include "deepkexp/model.hpp"

namespace deepkexp {

// Seven fixed two-dimensional benchmark distributions.
enum class SynthName { Funnel, Banana, Ring, Square, Cosine, MoG, MoR };

struct SynthSpec {
    SynthName name = SynthName::Funnel;
    std::size_t dim = 2;
    // The smoothed square's score comes from the convolved density's closed
    // form; it is only reported when explicitly requested.
    bool square_quadrature = false;
};

// Lowercase names: funnel banana ring square cosine mog mor.
SynthSpec synth_by_name(const std::string& name);
std::string synth_name(SynthName name);
const std::vector<std::string>& synth_names();

Matrix synth_sample(const SynthSpec& spec, std::size_t n, std::uint64_t seed);

bool synth_score_available(const SynthSpec& spec);

// Gradient of the true log density; empty when unavailable (square without
// the quadrature flag).
std::optional<Vector> synth_score(const SynthSpec& spec, const Vector& x);

// True log density up to an additive constant (finite-difference anchor for
// the scores above).
double synth_log_density(const SynthSpec& spec, const Vector& x);

// 1/2 E || model_score(x) - true_score(x) ||^2 over n fresh draws.
double fisher_divergence(const std::function<Vector(const Vector&)>& model_score,
                         const SynthSpec& spec, std::size_t n, std::uint64_t seed);
double fisher_divergence(const FittedModel& m, const SynthSpec& spec, std::size_t n,
                         std::uint64_t seed);

}  // namespace deepkexp
