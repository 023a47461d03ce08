#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "commands.hpp"
#include "deepkexp/errors.hpp"
#include "deepkexp/io.hpp"
#include "deepkexp/synthetic.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace deepkexp;

namespace {

namespace fs = std::filesystem;

// All artifacts go under one scratch directory in the working dir.
std::string tmp_path(const std::string& name) {
    static const fs::path root = [] {
        fs::path p = fs::path("io_scratch");
        fs::create_directories(p);
        return p;
    }();
    return (root / name).string();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << content;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A fully populated model with mixed component kinds and a non-trivial
// whitening record (column 1 of 3 dropped).
FittedModel sample_model() {
    Rng rng(404);
    FittedModel m;
    m.kernel = oracle::random_kernel(2, 2, 3, 2, rng);
    m.kernel.nets[1].reset();  // second component uses identity features
    m.base = oracle::random_base(2, rng);
    m.base.trainable = false;
    m.inducing = oracle::random_matrix(5, 2, rng);
    m.alpha = oracle::random_vector(5, rng, 0.4);

    Matrix corr(200, 2);
    for (std::size_t i = 0; i < corr.rows(); ++i) {
        const double a = rng.normal();
        const double b = rng.normal();
        corr(i, 0) = a;
        corr(i, 1) = 0.8 * a + 0.6 * b + 2.0;
    }
    m.whitening = whitening_fit(corr);
    m.whitening.raw_dim = 3;
    m.whitening.kept_columns = {0, 2};
    return m;
}

std::vector<double> model_scalars(FittedModel& m) {
    std::vector<double*> slots;
    kernel_collect_scalars(m.kernel, slots);
    base_collect_scalars(m.base, slots);
    for (std::size_t i = 0; i < m.inducing.size(); ++i) slots.push_back(m.inducing.data() + i);
    for (std::size_t i = 0; i < m.alpha.size(); ++i) slots.push_back(&m.alpha[i]);
    std::vector<double> out;
    out.reserve(slots.size());
    for (double* p : slots) out.push_back(*p);
    return out;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("format_double round trips exactly") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 7.3e300, 0.0, 3.141592653589793,
                     12345.678901234567, 5e-324, -1.0000000000000002}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}

TEST_CASE("csv loading detects headers and tolerates blank lines") {
    SUBCASE("no header") {
        write_text(tmp_path("plain.csv"), "1,2\n3,4\n");
        Matrix m = load_csv(tmp_path("plain.csv"));
        REQUIRE(m.rows() == 2);
        REQUIRE(m.cols() == 2);
        CHECK(m(0, 0) == 1.0);
        CHECK(m(1, 1) == 4.0);
    }
    SUBCASE("header, crlf, padding, blanks") {
        write_text(tmp_path("fancy.csv"), "x, y\r\n\n 1 , 2\r\n\n3,4\n\n");
        Matrix m = load_csv(tmp_path("fancy.csv"));
        REQUIRE(m.rows() == 2);
        CHECK(m(0, 0) == 1.0);
        CHECK(m(0, 1) == 2.0);
        CHECK(m(1, 0) == 3.0);
    }
    SUBCASE("numeric-looking first line is data") {
        write_text(tmp_path("nohdr.csv"), "9,8\n1,2\n");
        CHECK(load_csv(tmp_path("nohdr.csv")).rows() == 2);
    }
}

TEST_CASE("csv loading failure modes carry positions") {
    write_text(tmp_path("empty.csv"), "");
    CHECK_THROWS_AS(load_csv(tmp_path("empty.csv")), EmptyFile);
    write_text(tmp_path("hdronly.csv"), "a,b\n");
    CHECK_THROWS_AS(load_csv(tmp_path("hdronly.csv")), EmptyFile);
    write_text(tmp_path("ragged.csv"), "1,2\n3\n");
    CHECK_THROWS_AS(load_csv(tmp_path("ragged.csv")), WrongDimension);
    write_text(tmp_path("alpha.csv"), "1,2\n3,oops\n");
    try {
        load_csv(tmp_path("alpha.csv"));
        FAIL("expected NonNumeric");
    } catch (const NonNumeric& e) {
        const std::string what = e.what();
        CHECK(what.find("row 2") != std::string::npos);
        CHECK(what.find("col 2") != std::string::npos);
        CHECK(what.find("oops") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv(tmp_path("nope_missing.csv")), DataError);
}

TEST_CASE("csv write and load round trip bitwise") {
    Rng rng(7);
    Matrix m(17, 3);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std::exp(8.0 * rng.normal());
    m(0, 0) = 1.0 / 3.0;
    m(1, 1) = -5e-312;
    m(2, 2) = 0.0;
    write_csv(m, tmp_path("round.csv"), "a,b,c");
    Matrix back = load_csv(tmp_path("round.csv"));
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(back.data()[i] == m.data()[i]);
}

TEST_CASE("ingest whitens and is nearly the identity on white data") {
    Rng rng(11);
    const std::size_t n = 10000;
    std::ostringstream os;
    for (std::size_t i = 0; i < n; ++i) {
        os << format_double(rng.normal()) << ',' << format_double(rng.normal()) << '\n';
    }
    write_text(tmp_path("white.csv"), os.str());
    IngestResult r = ingest(tmp_path("white.csv"), {});
    CHECK_FALSE(r.had_header);
    CHECK(r.dropped_columns.empty());
    REQUIRE(r.data.cols() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            CHECK(std::fabs(r.whitening.transform(i, j) - want) <= 0.05);
        }
    }
    // Whitened output has zero mean and unit covariance by construction.
    Vector mu(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        mu[0] += r.data(i, 0);
        mu[1] += r.data(i, 1);
    }
    for (double& v : mu) v /= static_cast<double>(n);
    CHECK(std::fabs(mu[0]) <= 1e-10);
    CHECK(std::fabs(mu[1]) <= 1e-10);
    double c00 = 0.0, c01 = 0.0, c11 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        c00 += r.data(i, 0) * r.data(i, 0);
        c01 += r.data(i, 0) * r.data(i, 1);
        c11 += r.data(i, 1) * r.data(i, 1);
    }
    const double den = static_cast<double>(n - 1);
    CHECK(std::fabs(c00 / den - 1.0) <= 1e-8);
    CHECK(std::fabs(c01 / den) <= 1e-8);
    CHECK(std::fabs(c11 / den - 1.0) <= 1e-8);
}

TEST_CASE("ingest drops constant columns and records the survivors") {
    std::ostringstream os;
    os << "u,v,w\n";
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        os << format_double(rng.normal()) << ",7," << format_double(rng.normal()) << '\n';
    }
    write_text(tmp_path("constcol.csv"), os.str());
    IngestResult r = ingest(tmp_path("constcol.csv"), {});
    CHECK(r.had_header);
    REQUIRE(r.dropped_columns.size() == 1);
    CHECK(r.dropped_columns[0] == 1);
    CHECK(r.whitening.raw_dim == 3);
    REQUIRE(r.whitening.kept_columns.size() == 2);
    CHECK(r.whitening.kept_columns[0] == 0);
    CHECK(r.whitening.kept_columns[1] == 2);
    CHECK(r.data.cols() == 2);

    // A raw 3-vector round trips through the kept coordinates.
    Vector raw{0.4, 7.0, -1.3};
    Vector internal = whiten(r.whitening, raw);
    Vector back = unwhiten(r.whitening, internal);
    CHECK(back[0] == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(back[1] == doctest::Approx(-1.3).epsilon(1e-10));

    write_text(tmp_path("allconst.csv"), "1,2\n1,2\n1,2\n");
    CHECK_THROWS_AS(ingest(tmp_path("allconst.csv"), {}), DataError);
}

TEST_CASE("dequantization adds seeded sub-step noise") {
    std::ostringstream os;
    Rng rng(17);
    for (int i = 0; i < 400; ++i) {
        os << (rng.index(6)) << ',' << (rng.index(6)) << '\n';
    }
    write_text(tmp_path("quant.csv"), os.str());

    IngestOptions plain;
    IngestResult a = ingest(tmp_path("quant.csv"), plain);
    IngestOptions dq;
    dq.dequantize = true;
    dq.seed = 5;
    IngestResult b1 = ingest(tmp_path("quant.csv"), dq);
    IngestResult b2 = ingest(tmp_path("quant.csv"), dq);
    dq.seed = 6;
    IngestResult b3 = ingest(tmp_path("quant.csv"), dq);

    bool same12 = true;
    bool differ13 = false;
    bool differ_plain = false;
    REQUIRE(b1.data.size() == b2.data.size());
    for (std::size_t i = 0; i < b1.data.size(); ++i) {
        same12 = same12 && b1.data.data()[i] == b2.data.data()[i];
        differ13 = differ13 || b1.data.data()[i] != b3.data.data()[i];
        differ_plain = differ_plain || b1.data.data()[i] != a.data.data()[i];
    }
    CHECK(same12);
    CHECK(differ13);
    CHECK(differ_plain);

    // The raw integer grid has unit gaps, so dequantized raw values stay
    // within half a step of the grid: unwhiten and compare.
    Matrix raw = load_csv(tmp_path("quant.csv"));
    for (std::size_t i = 0; i < 40; ++i) {
        Vector w{b1.data(i, 0), b1.data(i, 1)};
        Vector x = unwhiten(b1.whitening, w);
        CHECK(std::fabs(x[0] - raw(i, 0)) <= 0.5 + 1e-9);
        CHECK(std::fabs(x[1] - raw(i, 1)) <= 0.5 + 1e-9);
    }
}

TEST_CASE("model files round trip byte for byte") {
    FittedModel m = sample_model();
    const std::string p1 = tmp_path("model_a.dkx");
    const std::string p2 = tmp_path("model_b.dkx");
    save_model(m, p1);
    FittedModel back = load_model(p1);

    CHECK(back.kernel.input_dim == m.kernel.input_dim);
    CHECK(back.kernel.components() == 2);
    CHECK(back.kernel.nets[0].has_value());
    CHECK_FALSE(back.kernel.nets[1].has_value());
    CHECK(back.base.trainable == m.base.trainable);
    CHECK(back.whitening.raw_dim == 3);
    CHECK(back.whitening.kept_columns == m.whitening.kept_columns);
    CHECK(back.whitening.log_abs_det == m.whitening.log_abs_det);

    std::vector<double> sa = model_scalars(m);
    std::vector<double> sb = model_scalars(back);
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);
    for (std::size_t i = 0; i < m.whitening.transform.size(); ++i) {
        CHECK(back.whitening.transform.data()[i] == m.whitening.transform.data()[i]);
        CHECK(back.whitening.inverse.data()[i] == m.whitening.inverse.data()[i]);
    }

    Rng rng(23);
    for (int i = 0; i < 5; ++i) {
        Vector x{rng.normal(), rng.normal(), rng.normal()};
        CHECK(log_p_tilde_raw(back, x) == log_p_tilde_raw(m, x));
    }

    save_model(back, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("model loading failure modes") {
    CHECK_THROWS_AS(load_model(tmp_path("missing.dkx")), DataError);
    write_text(tmp_path("badmagic.dkx"), "not-a-model 9\n");
    CHECK_THROWS_AS(load_model(tmp_path("badmagic.dkx")), ParseError);
    write_text(tmp_path("zero.dkx"), "");
    CHECK_THROWS_AS(load_model(tmp_path("zero.dkx")), EmptyFile);

    FittedModel m = sample_model();
    save_model(m, tmp_path("trunc.dkx"));
    std::string bytes = read_bytes(tmp_path("trunc.dkx"));
    bytes.resize(bytes.size() - 9);
    write_text(tmp_path("trunc.dkx"), bytes);
    CHECK_THROWS_AS(load_model(tmp_path("trunc.dkx")), ParseError);
}

TEST_CASE("config files parse every key and reject strangers") {
    write_text(tmp_path("full.cfg"),
               "# training\n"
               "inducing_count = 40\n"
               "batch_train = 25  # inline comment\n"
               "batch_val=30\n"
               "lr_stage1 = 0.02\n"
               "lr_stage2 = 0.005\n"
               "adam_beta1 = 0.85\n"
               "adam_beta2 = 0.995\n"
               "adam_eps = 1e-9\n"
               "patience = 17\n"
               "data_noise_std = 0.01\n"
               "seed = 99\n"
               "max_wallclock_sec = 12.5\n"
               "max_steps_stage1 = 123\n"
               "max_steps_stage2 = 45\n"
               "lambda_init = 0.004\n"
               "optimize_lambda_h = true\n"
               "train_base = no\n"
               "threads = 3\n"
               "components = 2\n"
               "net_layers = 4\n"
               "net_width = 11\n"
               "net_skip = 0\n"
               "identity_features = false\n"
               "n_locations = 8\n"
               "logz_samples = 5000\n"
               "bias_samples = 600\n"
               "bias_pilot = 700\n"
               "dequantize = yes\n");
    RunConfig cfg = parse_config_file(tmp_path("full.cfg"));
    CHECK(cfg.train.inducing_count == 40);
    CHECK(cfg.train.batch_train == 25);
    CHECK(cfg.train.batch_val == 30);
    CHECK(cfg.train.lr_stage1 == 0.02);
    CHECK(cfg.train.lr_stage2 == 0.005);
    CHECK(cfg.train.adam_beta1 == 0.85);
    CHECK(cfg.train.adam_beta2 == 0.995);
    CHECK(cfg.train.adam_eps == 1e-9);
    CHECK(cfg.train.patience == 17);
    CHECK(cfg.train.data_noise_std == 0.01);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.eval.seed == 99);
    REQUIRE(cfg.train.max_wallclock_sec.has_value());
    CHECK(*cfg.train.max_wallclock_sec == 12.5);
    CHECK(cfg.train.max_steps_stage1 == 123);
    CHECK(cfg.train.max_steps_stage2 == 45);
    CHECK(cfg.train.lambda_init == 0.004);
    CHECK(cfg.train.optimize_lambda_h);
    CHECK_FALSE(cfg.train.train_base);
    CHECK(cfg.train.threads == 3);
    CHECK(cfg.arch.components == 2);
    CHECK(cfg.arch.net.layers == 4);
    CHECK(cfg.arch.net.width == 11);
    CHECK_FALSE(cfg.arch.net.skip);
    CHECK_FALSE(cfg.arch.identity_features);
    CHECK(cfg.eval.n_locations == 8);
    CHECK(cfg.eval.logz_samples == 5000);
    CHECK(cfg.eval.bias_samples == 600);
    CHECK(cfg.eval.bias_pilot == 700);
    CHECK(cfg.dequantize);

    write_text(tmp_path("unknown.cfg"), "wibble = 3\n");
    CHECK_THROWS_AS(parse_config_file(tmp_path("unknown.cfg")), UnknownName);
    write_text(tmp_path("noeq.cfg"), "inducing_count 40\n");
    CHECK_THROWS_AS(parse_config_file(tmp_path("noeq.cfg")), ParseError);

    RunConfig direct;
    CHECK_THROWS_AS(apply_config_entry(direct, "patience", "soon"), ParseError);
    CHECK_THROWS_AS(apply_config_entry(direct, "lr_stage1", "fast"), ParseError);
    CHECK_THROWS_AS(apply_config_entry(direct, "net_skip", "maybe"), ParseError);
}

TEST_CASE("grid export clips, centers and mirrors symmetric densities") {
    FittedModel m;
    Rng rng(31);
    m.kernel = oracle::random_kernel(2, 1, 2, 1, rng, true);
    m.base = base_gaussian(Vector(2, 0.0), Vector(2, 1.0));
    m.inducing = oracle::random_matrix(3, 2, rng);
    m.alpha.assign(3, 0.0);
    m.whitening = whitening_identity(2);

    GridBounds b;
    b.x_lo = -4.0;
    b.x_hi = 4.0;
    b.y_lo = -4.0;
    b.y_hi = 4.0;
    b.resolution = 21;
    const std::string csv = tmp_path("grid.csv");
    const std::string pgm = tmp_path("grid.pgm");
    write_grid(m, b, csv, pgm);

    Matrix g = load_csv(csv);
    REQUIRE(g.rows() == 21 * 21);
    REQUIRE(g.cols() == 3);
    double vmax = -1e300;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        CHECK(g(i, 2) >= -9.0);
        CHECK(g(i, 2) <= 0.0);
        vmax = std::max(vmax, g(i, 2));
    }
    CHECK(vmax == 0.0);
    // x-mirror symmetry of the isotropic gaussian
    for (std::size_t iy = 0; iy < 21; ++iy) {
        for (std::size_t ix = 0; ix < 21; ++ix) {
            const double v = g(iy * 21 + ix, 2);
            const double vm = g(iy * 21 + (20 - ix), 2);
            CHECK(std::fabs(v - vm) <= 1e-9);
        }
    }

    const std::string bytes = read_bytes(pgm);
    const std::string header = "P5\n21 21\n255\n";
    REQUIRE(bytes.size() == header.size() + 21 * 21);
    CHECK(bytes.compare(0, header.size(), header) == 0);
    for (std::size_t iy = 0; iy < 21; ++iy) {
        for (std::size_t ix = 0; ix < 21; ++ix) {
            const double v = g(iy * 21 + ix, 2);
            const long want = std::lround((v + 9.0) / 9.0 * 255.0);
            const std::size_t pix = header.size() + (20 - iy) * 21 + ix;
            CHECK(static_cast<long>(static_cast<unsigned char>(bytes[pix])) == want);
        }
    }

    GridBounds bad = b;
    bad.resolution = 1;
    CHECK_THROWS_AS(write_grid(m, bad, csv, pgm), UsageError);
    bad = b;
    bad.x_hi = bad.x_lo;
    CHECK_THROWS_AS(write_grid(m, bad, csv, pgm), UsageError);
    FittedModel wide = sample_model();  // raw_dim 3
    CHECK_THROWS_AS(write_grid(wide, b, csv, pgm), WrongDimension);
}

TEST_CASE("eval report and train trace files") {
    EvalReport rep;
    rep.test_score_loss = -1.25;
    rep.fssd2 = 3e-4;
    rep.loglik_per_dim = -1.9;
    rep.log_z_hat = 1.84;
    rep.bias_bound = 2e-6;
    rep.n_locations = 20;
    rep.logz_samples = 1000;
    rep.bias_samples = 2000;
    write_eval_report(rep, tmp_path("report.txt"));
    const std::string text = read_bytes(tmp_path("report.txt"));
    CHECK(text.find("test_score_loss -1.25") != std::string::npos);
    CHECK(text.find("fssd2 ") != std::string::npos);
    CHECK(text.find("loglik_per_dim ") != std::string::npos);
    CHECK(text.find("log_z_hat ") != std::string::npos);
    CHECK(text.find("bias_bound ") != std::string::npos);
    CHECK(text.find("n_locations 20") != std::string::npos);
    CHECK(text.find("logz_samples 1000") != std::string::npos);
    CHECK(text.find("bias_samples 2000") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 8);

    TrainReport tr;
    tr.trace.push_back({0, 1, -0.5, 12.0});
    tr.trace.push_back({1, 2, -0.75, 20.5});
    write_train_trace(tr, tmp_path("trace.csv"));
    const std::string trace = read_bytes(tmp_path("trace.csv"));
    CHECK(trace == "step,stage,val_objective,wallclock_ms\n0,1,-0.5,12\n1,2,-0.75,20.5\n");
}

TEST_CASE("cli: synth is deterministic and validates names") {
    const std::string out1 = tmp_path("cli_ring1.csv");
    const std::string out2 = tmp_path("cli_ring2.csv");
    CHECK(cli_run({"synth", "--name", "ring", "--n", "60", "--seed", "3", "--out", out1}) == 0);
    CHECK(cli_run({"synth", "--name", "ring", "--n", "60", "--seed", "3", "--out", out2}) == 0);
    CHECK(read_bytes(out1) == read_bytes(out2));
    Matrix rows = load_csv(out1);
    CHECK(rows.rows() == 60);
    CHECK(rows.cols() == 2);

    CHECK(cli_run({"synth", "--name", "blob", "--n", "10", "--out", out1}) == 1);
    CHECK(cli_run({"synth", "--n", "10"}) == 1);            // missing required flag
    CHECK(cli_run({"synth", "--name", "ring", "--n", "-4"}) == 1);  // bad count
    CHECK(cli_run({}) == 1);                                 // no subcommand
    CHECK(cli_run({"transmogrify"}) == 1);                   // unknown subcommand
}

TEST_CASE("cli: fit, eval, grid and logz round trip on synthetic data") {
    const std::string data = tmp_path("cli_mog.csv");
    REQUIRE(cli_run({"synth", "--name", "mog", "--n", "500", "--seed", "11", "--out", data}) == 0);

    write_text(tmp_path("cli.cfg"),
               "inducing_count = 15\n"
               "batch_train = 30\n"
               "batch_val = 30\n"
               "patience = 5\n"
               "max_steps_stage1 = 25\n"
               "max_steps_stage2 = 5\n"
               "components = 1\n"
               "net_layers = 1\n"
               "net_width = 4\n"
               "n_locations = 8\n"
               "logz_samples = 2000\n"
               "bias_samples = 500\n"
               "bias_pilot = 500\n");

    const std::string model = tmp_path("cli_model.dkx");
    CHECK(cli_run({"fit", data, "--out", model, "--config", tmp_path("cli.cfg"), "--seed",
                   "21"}) == 0);
    CHECK(fs::exists(model));
    CHECK(fs::exists(model + ".trace.csv"));
    Matrix trace = load_csv(model + ".trace.csv");
    CHECK(trace.cols() == 4);
    CHECK(trace.rows() >= 1);

    FittedModel m = load_model(model);
    CHECK(m.dim() == 2);
    CHECK(m.inducing_count() == 15);

    const std::string report = tmp_path("cli_eval.txt");
    CHECK(cli_run({"eval", model, data, "--out", report, "--config", tmp_path("cli.cfg"),
                   "--seed", "21"}) == 0);
    const std::string rpt = read_bytes(report);
    CHECK(rpt.find("test_score_loss ") != std::string::npos);
    CHECK(rpt.find("nan") == std::string::npos);

    const std::string gcsv = tmp_path("cli_grid.csv");
    const std::string gpgm = tmp_path("cli_grid.pgm");
    CHECK(cli_run({"grid", model, "--out-csv", gcsv, "--out-pgm", gpgm, "--res", "12"}) == 0);
    CHECK(load_csv(gcsv).rows() == 144);
    CHECK(read_bytes(gpgm).compare(0, 3, "P5\n") == 0);

    const std::string zout = tmp_path("cli_logz.txt");
    CHECK(cli_run({"logz", model, "--samples", "1500", "--seed", "4", "--bias-bound", "--out",
                   zout}) == 0);
    const std::string ztxt = read_bytes(zout);
    CHECK(ztxt.find("log_z_hat ") != std::string::npos);
    CHECK(ztxt.find("bias_bound ") != std::string::npos);
}

TEST_CASE("cli: error classes map to exit codes") {
    write_text(tmp_path("tiny.csv"), "0.1,0.2\n0.3,0.4\n0.5,0.6\n");
    CHECK(cli_run({"fit", tmp_path("tiny.csv"), "--out", tmp_path("tiny.dkx")}) == 2);
    CHECK(cli_run({"eval", tmp_path("ghost.dkx"), tmp_path("tiny.csv")}) == 2);
    write_text(tmp_path("badrow.csv"), "1,2\nx,y\n2,3\n");
    CHECK(cli_run({"fit", tmp_path("badrow.csv"), "--out", tmp_path("bad.dkx")}) == 2);
}

}  // TEST_SUITE
