#include "deepkexp/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "deepkexp/errors.hpp"
#include "deepkexp/rng.hpp"

namespace deepkexp {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE 754 doubles required");

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool parse_double(const std::string& tok, double& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && !tok.empty();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

Matrix load_csv_impl(const std::string& path, bool& had_header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.push_back(line);
    }
    if (lines.empty()) throw EmptyFile("no data rows in " + path);

    had_header = false;
    std::size_t first_data = 0;
    {
        const auto fields = split_csv_line(lines[0]);
        double v;
        for (const auto& f : fields) {
            if (!parse_double(f, v)) {
                had_header = true;
                first_data = 1;
                break;
            }
        }
    }
    if (first_data >= lines.size()) throw EmptyFile("only a header row in " + path);

    const std::size_t cols = split_csv_line(lines[first_data]).size();
    if (cols == 0) throw ParseError("row 1 has no fields in " + path);
    Matrix out(lines.size() - first_data, cols);
    for (std::size_t i = first_data; i < lines.size(); ++i) {
        const auto fields = split_csv_line(lines[i]);
        const std::size_t row_no = i + 1;  // 1-based, counting the header
        if (fields.size() != cols) {
            throw WrongDimension("row " + std::to_string(row_no) + " has " +
                                 std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(cols) + " in " + path);
        }
        for (std::size_t j = 0; j < cols; ++j) {
            double v;
            if (!parse_double(fields[j], v)) {
                throw NonNumeric("row " + std::to_string(row_no) + " col " +
                                 std::to_string(j + 1) + ": '" + fields[j] + "' in " + path);
            }
            out(i - first_data, j) = v;
        }
    }
    return out;
}

// Median gap between adjacent distinct values of one column; 0 when the
// column has fewer than two distinct values.
double quantization_step(const Matrix& m, std::size_t col) {
    std::vector<double> vals(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) vals[i] = m(i, col);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    if (vals.size() < 2) return 0.0;
    std::vector<double> gaps(vals.size() - 1);
    for (std::size_t i = 0; i + 1 < vals.size(); ++i) gaps[i] = vals[i + 1] - vals[i];
    const std::size_t mid = (gaps.size() - 1) / 2;
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(mid), gaps.end());
    return gaps[mid];
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(const char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

// Zero-valued network of the given shape (deserialization target).
NetParams net_shell(const NetSpec& spec) {
    NetParams p;
    p.spec = spec;
    std::size_t fan_in = spec.input_dim;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        p.weights.emplace_back(spec.width, fan_in);
        p.biases.emplace_back(spec.width, 0.0);
        fan_in = spec.width;
    }
    if (spec.skip) p.skip_weight = Matrix(spec.width, spec.input_dim);
    return p;
}

// Flattening order shared by save and load: kernel scalars, base scalars,
// inducing rows, alpha, whitening (mean, transform, inverse, log_abs_det).
std::vector<double*> model_float_slots(FittedModel& m) {
    std::vector<double*> s;
    kernel_collect_scalars(m.kernel, s);
    base_collect_scalars(m.base, s);
    for (std::size_t i = 0; i < m.inducing.size(); ++i) s.push_back(m.inducing.data() + i);
    for (std::size_t i = 0; i < m.alpha.size(); ++i) s.push_back(&m.alpha[i]);
    Whitening& w = m.whitening;
    for (std::size_t i = 0; i < w.mean.size(); ++i) s.push_back(&w.mean[i]);
    for (std::size_t i = 0; i < w.transform.size(); ++i) s.push_back(w.transform.data() + i);
    for (std::size_t i = 0; i < w.inverse.size(); ++i) s.push_back(w.inverse.data() + i);
    s.push_back(&w.log_abs_det);
    return s;
}

bool parse_bool(const std::string& v, bool& out) {
    if (v == "1" || v == "true" || v == "yes") {
        out = true;
        return true;
    }
    if (v == "0" || v == "false" || v == "no") {
        out = false;
        return true;
    }
    return false;
}

std::size_t to_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const char* first = v.data();
    const char* last = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || v.empty()) {
        throw ParseError("config: invalid count for " + key + ": '" + v + "'");
    }
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    if (!parse_double(v, out)) {
        throw ParseError("config: invalid number for " + key + ": '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    bool out = false;
    if (!parse_bool(v, out)) {
        throw ParseError("config: invalid boolean for " + key + ": '" + v + "'");
    }
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Matrix load_csv(const std::string& path) {
    bool had_header = false;
    return load_csv_impl(path, had_header);
}

void write_csv(const Matrix& rows, const std::string& path, const std::string& header) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    if (!header.empty()) out << header << '\n';
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = 0; j < rows.cols(); ++j) {
            if (j) out << ',';
            out << format_double(rows(i, j));
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

IngestResult ingest(const std::string& path, const IngestOptions& opt) {
    IngestResult res;
    Matrix raw = load_csv_impl(path, res.had_header);
    const std::size_t n = raw.rows();
    const std::size_t d = raw.cols();

    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < d; ++j) {
        double lo = raw(0, j);
        double hi = lo;
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, raw(i, j));
            hi = std::max(hi, raw(i, j));
        }
        if (hi > lo) {
            kept.push_back(j);
        } else {
            res.dropped_columns.push_back(j);
        }
    }
    if (kept.empty()) throw DataError("all columns constant in " + path);

    Matrix filt(n, kept.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kept.size(); ++j) filt(i, j) = raw(i, kept[j]);
    }

    Rng rng(opt.seed);
    if (opt.dequantize) {
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const double step = quantization_step(filt, j);
            if (step <= 0.0) continue;
            for (std::size_t i = 0; i < n; ++i) {
                filt(i, j) += rng.uniform(-0.5 * step, 0.5 * step);
            }
        }
    }

    Matrix wrows = filt;
    if (n > opt.whiten_subsample) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        idx.resize(opt.whiten_subsample);
        std::sort(idx.begin(), idx.end());
        wrows = Matrix(opt.whiten_subsample, kept.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = filt.row(idx[i]);
            std::copy(src, src + kept.size(), wrows.row(i));
        }
    }
    Whitening w = whitening_fit(wrows);
    w.kept_columns = kept;
    w.raw_dim = d;

    res.data = whiten_rows(w, filt);
    res.whitening = std::move(w);
    return res;
}

void save_model(const FittedModel& m, const std::string& path) {
    FittedModel copy = m;  // collect_scalars wants mutable access
    std::string head;
    head += "deepkexp-model 1\n";
    head += "input_dim " + std::to_string(copy.dim()) + "\n";
    head += "components " + std::to_string(copy.kernel.components()) + "\n";
    for (std::size_t r = 0; r < copy.kernel.components(); ++r) {
        if (copy.kernel.nets[r]) {
            const NetSpec& sp = copy.kernel.nets[r]->spec;
            head += "component " + std::to_string(r) + " net " + std::to_string(sp.layers) +
                    " " + std::to_string(sp.width) + " " + (sp.skip ? "1" : "0") + "\n";
        } else {
            head += "component " + std::to_string(r) + " identity\n";
        }
    }
    head += "inducing " + std::to_string(copy.inducing_count()) + "\n";
    head += std::string("base_trainable ") + (copy.base.trainable ? "1" : "0") + "\n";
    head += "whitening_raw_dim " + std::to_string(copy.whitening.raw_dim) + "\n";
    head += "whitening_kept";
    for (std::size_t c : copy.whitening.kept_columns) head += " " + std::to_string(c);
    head += "\n";

    auto slots = model_float_slots(copy);
    head += "float_count " + std::to_string(slots.size()) + "\n";
    head += "data\n";

    std::string blob;
    blob.reserve(slots.size() * 8);
    for (double* p : slots) put_f64(blob, *p);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("write failed: " + path);
}

FittedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (content.empty()) throw EmptyFile("empty model file: " + path);

    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        if (pos >= content.size()) throw ParseError("model file truncated: " + path);
        const std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) throw ParseError("model file truncated: " + path);
        std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    auto expect_key = [&](const std::string& key) -> std::string {
        const std::string line = next_line();
        if (line.rfind(key, 0) != 0U) {
            throw ParseError("model file: expected '" + key + "', got '" + line + "'");
        }
        return trim(line.substr(key.size()));
    };

    if (next_line() != "deepkexp-model 1") {
        throw ParseError("model file: unknown format or version in " + path);
    }
    const std::size_t dim = to_count("input_dim", expect_key("input_dim"));
    const std::size_t r_count = to_count("components", expect_key("components"));

    FittedModel m;
    m.kernel.input_dim = dim;
    m.kernel.rho_free.assign(r_count, 0.0);
    m.kernel.log_sigma.assign(r_count, 0.0);
    m.kernel.nets.resize(r_count);
    for (std::size_t r = 0; r < r_count; ++r) {
        std::istringstream ls(expect_key("component"));
        std::size_t idx = 0;
        std::string kind;
        ls >> idx >> kind;
        if (!ls || idx != r) throw ParseError("model file: bad component line");
        if (kind == "net") {
            NetSpec sp;
            sp.input_dim = dim;
            int skip = 0;
            ls >> sp.layers >> sp.width >> skip;
            if (!ls) throw ParseError("model file: bad net shape");
            sp.skip = skip != 0;
            m.kernel.nets[r] = net_shell(sp);
        } else if (kind != "identity") {
            throw ParseError("model file: unknown component kind '" + kind + "'");
        }
    }
    const std::size_t m_count = to_count("inducing", expect_key("inducing"));
    m.base.mu.assign(dim, 0.0);
    m.base.log_sigma.assign(dim, 0.0);
    m.base.beta_free.assign(dim, 0.0);
    m.base.trainable = expect_key("base_trainable") == "1";
    m.inducing = Matrix(m_count, dim);
    m.alpha.assign(m_count, 0.0);

    m.whitening = whitening_identity(dim);
    m.whitening.raw_dim = to_count("whitening_raw_dim", expect_key("whitening_raw_dim"));
    {
        std::istringstream ls(expect_key("whitening_kept"));
        m.whitening.kept_columns.clear();
        std::size_t c = 0;
        while (ls >> c) m.whitening.kept_columns.push_back(c);
        if (m.whitening.kept_columns.size() != dim) {
            throw ParseError("model file: kept column count mismatch");
        }
    }

    const std::size_t float_count = to_count("float_count", expect_key("float_count"));
    if (next_line() != "data") throw ParseError("model file: missing data marker");

    auto slots = model_float_slots(m);
    if (slots.size() != float_count) {
        throw ParseError("model file: float count " + std::to_string(float_count) +
                         " does not match shapes (" + std::to_string(slots.size()) + ")");
    }
    if (content.size() - pos < float_count * 8) {
        throw ParseError("model file: float block truncated");
    }
    for (std::size_t i = 0; i < float_count; ++i) {
        *slots[i] = get_f64(content.data() + pos + i * 8);
    }
    return m;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "inducing_count") {
        cfg.train.inducing_count = to_count(key, value);
    } else if (key == "batch_train") {
        cfg.train.batch_train = to_count(key, value);
    } else if (key == "batch_val") {
        cfg.train.batch_val = to_count(key, value);
    } else if (key == "lr_stage1") {
        cfg.train.lr_stage1 = to_real(key, value);
    } else if (key == "lr_stage2") {
        cfg.train.lr_stage2 = to_real(key, value);
    } else if (key == "adam_beta1") {
        cfg.train.adam_beta1 = to_real(key, value);
    } else if (key == "adam_beta2") {
        cfg.train.adam_beta2 = to_real(key, value);
    } else if (key == "adam_eps") {
        cfg.train.adam_eps = to_real(key, value);
    } else if (key == "patience") {
        cfg.train.patience = to_count(key, value);
    } else if (key == "data_noise_std") {
        cfg.train.data_noise_std = to_real(key, value);
    } else if (key == "seed") {
        cfg.train.seed = to_count(key, value);
        cfg.eval.seed = cfg.train.seed;
    } else if (key == "max_wallclock_sec") {
        cfg.train.max_wallclock_sec = to_real(key, value);
    } else if (key == "max_steps_stage1") {
        cfg.train.max_steps_stage1 = to_count(key, value);
    } else if (key == "max_steps_stage2") {
        cfg.train.max_steps_stage2 = to_count(key, value);
    } else if (key == "lambda_init") {
        cfg.train.lambda_init = to_real(key, value);
    } else if (key == "optimize_lambda_h") {
        cfg.train.optimize_lambda_h = to_bool(key, value);
    } else if (key == "train_base") {
        cfg.train.train_base = to_bool(key, value);
    } else if (key == "threads") {
        cfg.train.threads = to_count(key, value);
    } else if (key == "components") {
        cfg.arch.components = to_count(key, value);
    } else if (key == "net_layers") {
        cfg.arch.net.layers = to_count(key, value);
    } else if (key == "net_width") {
        cfg.arch.net.width = to_count(key, value);
    } else if (key == "net_skip") {
        cfg.arch.net.skip = to_bool(key, value);
    } else if (key == "identity_features") {
        cfg.arch.identity_features = to_bool(key, value);
    } else if (key == "n_locations") {
        cfg.eval.n_locations = to_count(key, value);
    } else if (key == "logz_samples") {
        cfg.eval.logz_samples = to_count(key, value);
    } else if (key == "bias_samples") {
        cfg.eval.bias_samples = to_count(key, value);
    } else if (key == "bias_pilot") {
        cfg.eval.bias_pilot = to_count(key, value);
    } else if (key == "dequantize") {
        cfg.dequantize = to_bool(key, value);
    } else {
        throw UnknownName("config: unknown key '" + key + "'");
    }
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void write_grid(const FittedModel& m, const GridBounds& b, const std::string& csv_path,
                const std::string& pgm_path) {
    if (m.whitening.raw_dim != 2) {
        throw WrongDimension("grid export needs a two-dimensional model, raw dimension is " +
                             std::to_string(m.whitening.raw_dim));
    }
    if (b.resolution < 2) throw UsageError("grid: resolution must be at least 2");
    if (!(b.x_hi > b.x_lo) || !(b.y_hi > b.y_lo)) {
        throw UsageError("grid: bounds must have positive extent");
    }
    const std::size_t res = b.resolution;
    Matrix vals(res, res);  // vals(iy, ix)
    Vector x(2);
    double vmax = -std::numeric_limits<double>::infinity();
    for (std::size_t iy = 0; iy < res; ++iy) {
        x[1] = b.y_lo + (b.y_hi - b.y_lo) * static_cast<double>(iy) /
                            static_cast<double>(res - 1);
        for (std::size_t ix = 0; ix < res; ++ix) {
            x[0] = b.x_lo + (b.x_hi - b.x_lo) * static_cast<double>(ix) /
                                static_cast<double>(res - 1);
            const double v = log_p_tilde_raw(m, x);
            vals(iy, ix) = v;
            vmax = std::max(vmax, v);
        }
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
        double& v = vals.data()[i];
        v = std::max(v - vmax, -9.0);
    }

    {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write file: " + csv_path);
        out << "x,y,log_density\n";
        for (std::size_t iy = 0; iy < res; ++iy) {
            const double y = b.y_lo + (b.y_hi - b.y_lo) * static_cast<double>(iy) /
                                          static_cast<double>(res - 1);
            for (std::size_t ix = 0; ix < res; ++ix) {
                const double xx = b.x_lo + (b.x_hi - b.x_lo) * static_cast<double>(ix) /
                                               static_cast<double>(res - 1);
                out << format_double(xx) << ',' << format_double(y) << ','
                    << format_double(vals(iy, ix)) << '\n';
            }
        }
        if (!out) throw DataError("write failed: " + csv_path);
    }
    {
        std::ofstream out(pgm_path, std::ios::binary);
        if (!out) throw DataError("cannot write file: " + pgm_path);
        out << "P5\n" << res << " " << res << "\n255\n";
        std::string row(res, '\0');
        for (std::size_t iy = res; iy-- > 0;) {  // top image row at y_hi
            for (std::size_t ix = 0; ix < res; ++ix) {
                const long g = std::lround((vals(iy, ix) + 9.0) / 9.0 * 255.0);
                row[ix] = static_cast<char>(std::clamp(g, 0L, 255L));
            }
            out.write(row.data(), static_cast<std::streamsize>(res));
        }
        if (!out) throw DataError("write failed: " + pgm_path);
    }
}

void write_eval_report(const EvalReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "test_score_loss " << format_double(rep.test_score_loss) << '\n';
    out << "fssd2 " << format_double(rep.fssd2) << '\n';
    out << "loglik_per_dim " << format_double(rep.loglik_per_dim) << '\n';
    out << "log_z_hat " << format_double(rep.log_z_hat) << '\n';
    out << "bias_bound " << format_double(rep.bias_bound) << '\n';
    out << "n_locations " << rep.n_locations << '\n';
    out << "logz_samples " << rep.logz_samples << '\n';
    out << "bias_samples " << rep.bias_samples << '\n';
    if (!out) throw DataError("write failed: " + path);
}

void write_train_trace(const TrainReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "step,stage,val_objective,wallclock_ms\n";
    for (const StepRecord& r : rep.trace) {
        out << r.step << ',' << r.stage << ',' << format_double(r.val_objective) << ','
            << format_double(r.wallclock_ms) << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace deepkexp
