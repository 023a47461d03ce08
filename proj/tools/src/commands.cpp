#include "commands.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "deepkexp/errors.hpp"
#include "deepkexp/evaluate.hpp"
#include "deepkexp/io.hpp"
#include "deepkexp/synthetic.hpp"
#include "deepkexp/trainer.hpp"

namespace deepkexp {

namespace {

struct CommonFlags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "key = value config file");
    cmd->add_option("--seed", f.seed, "RNG seed (overrides config)");
    cmd->add_option("--threads", f.threads, "worker threads for matrix assembly");
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg;
    if (f.config) cfg = parse_config_file(*f.config);
    if (f.seed) {
        cfg.train.seed = *f.seed;
        cfg.eval.seed = *f.seed;
    }
    if (f.threads) cfg.train.threads = *f.threads;
    return cfg;
}

std::string eval_report_text(const EvalReport& rep) {
    std::ostringstream os;
    os << "test_score_loss " << format_double(rep.test_score_loss) << '\n'
       << "fssd2 " << format_double(rep.fssd2) << '\n'
       << "loglik_per_dim " << format_double(rep.loglik_per_dim) << '\n'
       << "log_z_hat " << format_double(rep.log_z_hat) << '\n'
       << "bias_bound " << format_double(rep.bias_bound) << '\n'
       << "n_locations " << rep.n_locations << '\n'
       << "logz_samples " << rep.logz_samples << '\n'
       << "bias_samples " << rep.bias_samples << '\n';
    return os.str();
}

int run_fit(const std::string& data_path, const std::string& out_path, std::string trace_path,
            const CommonFlags& flags, bool dequantize, std::optional<double> noise_std) {
    RunConfig cfg = resolve_config(flags);
    if (dequantize) cfg.dequantize = true;
    if (noise_std) cfg.train.data_noise_std = *noise_std;

    IngestOptions iopt;
    iopt.dequantize = cfg.dequantize;
    iopt.seed = cfg.train.seed;
    IngestResult ing = ingest(data_path, iopt);
    for (std::size_t c : ing.dropped_columns) {
        std::cerr << "note: dropped constant column " << (c + 1) << "\n";
    }

    auto [model, report] = train(ing.data, cfg.train, cfg.arch);
    model.whitening = ing.whitening;
    save_model(model, out_path);
    if (trace_path.empty()) trace_path = out_path + ".trace.csv";
    write_train_trace(report, trace_path);

    std::cout << "model " << out_path << "\n"
              << "trace " << trace_path << "\n"
              << "stage1_steps " << report.stage1_steps << "\n"
              << "stage2_steps " << report.stage2_steps << "\n"
              << "final_val_objective " << format_double(report.final_val_objective) << "\n"
              << "wallclock_sec " << format_double(report.wallclock_sec) << "\n";
    return 0;
}

int run_eval(const std::string& model_path, const std::string& test_path,
             const std::string& out_path, const CommonFlags& flags,
             std::optional<std::size_t> samples) {
    RunConfig cfg = resolve_config(flags);
    if (samples) cfg.eval.logz_samples = *samples;

    FittedModel m = load_model(model_path);
    Matrix test = load_csv(test_path);
    EvalReport rep = evaluate(m, test, cfg.eval);
    write_eval_report(rep, out_path);
    std::cout << eval_report_text(rep);
    return 0;
}

int run_grid(const std::string& model_path, const GridBounds& bounds, const std::string& csv_path,
             const std::string& pgm_path) {
    FittedModel m = load_model(model_path);
    write_grid(m, bounds, csv_path, pgm_path);
    std::cout << "grid_csv " << csv_path << "\n"
              << "grid_pgm " << pgm_path << "\n";
    return 0;
}

int run_synth(const std::string& name, std::size_t n, std::uint64_t seed, std::string out_path) {
    SynthSpec spec = synth_by_name(name);
    Matrix rows = synth_sample(spec, n, seed);
    if (out_path.empty()) out_path = name + ".csv";
    write_csv(rows, out_path);
    std::cout << "wrote " << out_path << " (" << rows.rows() << " x " << rows.cols() << ")\n";
    return 0;
}

int run_logz(const std::string& model_path, std::size_t samples, std::uint64_t seed,
             bool with_bias_bound, const std::string& out_path) {
    FittedModel m = load_model(model_path);
    LogZEstimate z = estimate_log_z(m, samples, seed);
    std::ostringstream os;
    os << "log_z_hat " << format_double(z.log_z) << '\n'
       << "rel_std_error " << format_double(z.rel_std_error) << '\n'
       << "samples " << z.samples << '\n';
    if (with_bias_bound) {
        BiasBoundResult bb = bias_bound_detail(m, samples, seed);
        os << "bias_bound " << format_double(bb.bound) << '\n'
           << "bias_z_hat " << format_double(bb.z_hat) << '\n'
           << "bias_support_min " << format_double(bb.a) << '\n'
           << "bias_quantile " << format_double(bb.s) << '\n'
           << "bias_rho " << format_double(bb.rho) << '\n'
           << "bias_degenerate " << (bb.degenerate_quantiles ? 1 : 0) << '\n';
    }
    const std::string text = os.str();
    std::cout << text;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw DataError("cannot write file: " + out_path);
        out << text;
        if (!out) throw DataError("write failed: " + out_path);
    }
    return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
    CLI::App app{"Deep kernel exponential family density estimation"};
    app.require_subcommand(1);

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a model to a CSV dataset");
    std::string fit_data;
    std::string fit_out = "model.dkx";
    std::string fit_trace;
    bool fit_dequantize = false;
    std::optional<double> fit_noise;
    CommonFlags fit_flags;
    fit->add_option("data", fit_data, "training data CSV")->required();
    fit->add_option("--out", fit_out, "model file to write");
    fit->add_option("--trace", fit_trace, "training trace CSV (default <out>.trace.csv)");
    fit->add_flag("--dequantize", fit_dequantize, "add uniform noise at the quantization scale");
    fit->add_option("--noise-std", fit_noise, "training-time data noise std");
    add_common(fit, fit_flags);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a model on held-out CSV data");
    std::string ev_model;
    std::string ev_test;
    std::string ev_out = "eval.txt";
    std::optional<std::size_t> ev_samples;
    CommonFlags ev_flags;
    ev->add_option("model", ev_model, "model file")->required();
    ev->add_option("test", ev_test, "test data CSV")->required();
    ev->add_option("--out", ev_out, "report file to write");
    ev->add_option("--samples", ev_samples, "importance samples for log Z");
    add_common(ev, ev_flags);

    // grid
    auto* gr = app.add_subcommand("grid", "Export a 2-d log-density grid");
    std::string gr_model;
    std::string gr_csv = "grid.csv";
    std::string gr_pgm = "grid.pgm";
    GridBounds bounds;
    gr->add_option("model", gr_model, "model file")->required();
    gr->add_option("--out-csv", gr_csv, "grid CSV path");
    gr->add_option("--out-pgm", gr_pgm, "grid PGM path");
    gr->add_option("--x-lo", bounds.x_lo, "grid lower x bound");
    gr->add_option("--x-hi", bounds.x_hi, "grid upper x bound");
    gr->add_option("--y-lo", bounds.y_lo, "grid lower y bound");
    gr->add_option("--y-hi", bounds.y_hi, "grid upper y bound");
    gr->add_option("--res", bounds.resolution, "lattice points per axis");

    // synth
    auto* sy = app.add_subcommand("synth", "Sample a synthetic benchmark dataset");
    std::string sy_name;
    std::size_t sy_n = 1000;
    std::uint64_t sy_seed = 0;
    std::string sy_out;
    sy->add_option("--name", sy_name, "one of: funnel banana ring square cosine mog mor")
        ->required();
    sy->add_option("--n", sy_n, "number of rows");
    sy->add_option("--seed", sy_seed, "RNG seed");
    sy->add_option("--out", sy_out, "output CSV (default <name>.csv)");

    // logz
    auto* lz = app.add_subcommand("logz", "Estimate the log normalizer of a model");
    std::string lz_model;
    std::size_t lz_samples = 100000;
    std::uint64_t lz_seed = 0;
    bool lz_bias = false;
    std::string lz_out;
    lz->add_option("model", lz_model, "model file")->required();
    lz->add_option("--samples", lz_samples, "importance samples");
    lz->add_option("--seed", lz_seed, "RNG seed");
    lz->add_flag("--bias-bound", lz_bias, "also compute the estimator bias bound");
    lz->add_option("--out", lz_out, "also write the record to this file");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("deepkexp");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (fit->parsed()) {
            return run_fit(fit_data, fit_out, fit_trace, fit_flags, fit_dequantize, fit_noise);
        }
        if (ev->parsed()) return run_eval(ev_model, ev_test, ev_out, ev_flags, ev_samples);
        if (gr->parsed()) return run_grid(gr_model, bounds, gr_csv, gr_pgm);
        if (sy->parsed()) return run_synth(sy_name, sy_n, sy_seed, sy_out);
        if (lz->parsed()) return run_logz(lz_model, lz_samples, lz_seed, lz_bias, lz_out);
        std::cerr << "no command given\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace deepkexp
