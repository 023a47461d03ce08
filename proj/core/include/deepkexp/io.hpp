#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deepkexp/evaluate.hpp"
#include "deepkexp/la.hpp"
#include "deepkexp/model.hpp"
#include "deepkexp/trainer.hpp"

namespace deepkexp {

// Numeric CSV with an optional single header row (detected, not configured).
// Throws ParseError/NonNumeric with 1-based row and column, EmptyFile,
// WrongDimension on ragged rows.
Matrix load_csv(const std::string& path);

void write_csv(const Matrix& rows, const std::string& path, const std::string& header = "");

struct IngestOptions {
    bool dequantize = false;
    std::uint64_t seed = 0;             // dequantization draws + whitening subsample
    std::size_t whiten_subsample = 10000;
};

struct IngestResult {
    Matrix data;        // whitened rows, constant columns removed
    Whitening whitening;
    std::vector<std::size_t> dropped_columns;  // raw indices of constant columns
    bool had_header = false;
};

// load -> drop constant columns -> optional dequantization (uniform noise
// with support equal to the median gap between adjacent distinct values,
// per column) -> whitening fitted on at most whiten_subsample rows.
IngestResult ingest(const std::string& path, const IngestOptions& opt);

// Versioned key-value header plus one little-endian float64 block holding
// every real-valued parameter. Round trips are byte-identical.
void save_model(const FittedModel& m, const std::string& path);
FittedModel load_model(const std::string& path);

struct RunConfig {
    TrainConfig train;
    ModelArch arch;
    EvalConfig eval;
    bool dequantize = false;
};

// Flat "key = value" lines; '#' comments. Unknown keys throw UnknownName.
RunConfig parse_config_file(const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

struct GridBounds {
    double x_lo = -5.0;
    double x_hi = 5.0;
    double y_lo = -5.0;
    double y_hi = 5.0;
    std::size_t resolution = 100;
};

// Log density over the lattice in raw coordinates, max-shifted and clipped at
// -9. CSV rows are (x, y, value); the PGM maps [-9, 0] onto [0, 255] with the
// top image row at y_hi.
void write_grid(const FittedModel& m, const GridBounds& b, const std::string& csv_path,
                const std::string& pgm_path);

// One "key value" line per field.
void write_eval_report(const EvalReport& rep, const std::string& path);

// CSV trace: step, stage, val_objective, wallclock_ms.
void write_train_trace(const TrainReport& rep, const std::string& path);

// Round-trip-exact decimal text for a double (deterministic).
std::string format_double(double v);

}  // namespace deepkexp
