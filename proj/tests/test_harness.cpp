#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "isocal/embedding_io.hpp"
#include "isocal/errors.hpp"
#include "isocal/report.hpp"
#include "isocal/run_record.hpp"
#include "isocal/stats.hpp"
#include "isocal/text_format.hpp"
#include "oracles.hpp"

using namespace isocal;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("isocal_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& work) {
    const fs::path out = work / "stdout.txt", err = work / "stderr.txt";
    const std::string cmd =
        std::string("\"") + ISOCAL_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

RunRecord record(Method m, std::uint64_t seed, double acc) {
    RunRecord r;
    r.method = m;
    r.seed = seed;
    r.accuracy = acc;
    r.perplexity = 10.0;
    r.i1 = 0.5;
    r.i2 = 0.1;
    r.seconds_per_epoch = 1.0;
    return r;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("incomplete beta on closed forms") {
    // I_x(1, 1) = x and I_x(a, 1) = x^a
    CHECK(incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(incomplete_beta(2.5, 1, 0.4) == doctest::Approx(std::pow(0.4, 2.5)).epsilon(1e-13));
    CHECK(incomplete_beta(3, 4, 0.0) == 0.0);
    CHECK(incomplete_beta(3, 4, 1.0) == 1.0);
    CHECK(incomplete_beta(3, 4, 0.35) + incomplete_beta(4, 3, 0.65) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("t distribution CDF is symmetric with median zero") {
    for (double nu : {1.0, 2.0, 4.0, 10.0, 100.0}) {
        CHECK(student_t_cdf(0.0, nu) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(student_t_cdf(1.3, nu) + student_t_cdf(-1.3, nu) == doctest::Approx(1.0).epsilon(1e-14));
    }
    // Cauchy closed form
    CHECK(student_t_cdf(1.0, 1.0) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("two-sided p-values match quadrature of the t density") {
    for (double nu : {1.0, 2.0, 4.0, 10.0, 100.0})
        for (double t : {0.1, 0.8, 1.7, 3.0, 6.5}) {
            const double p = 2.0 * (1.0 - student_t_cdf(t, nu));
            INFO("nu=" << nu << " t=" << t);
            CHECK(std::abs(p - oracle::two_sided_p_quadrature(t, nu)) <= 1e-6);
        }
}

TEST_CASE("Welch test on three-seed shaped samples") {
    const std::vector<double> a{91.44, 90.92, 91.96}, b{90.71, 89.71, 91.71};
    const TTestResult r = welch_ttest(a, b);
    const oracle::WelchStat ref = oracle::welch_stat(a, b);
    CHECK(r.t == doctest::Approx(ref.t).epsilon(1e-12));
    CHECK(r.dof == doctest::Approx(ref.dof).epsilon(1e-12));
    CHECK(std::abs(r.p - oracle::two_sided_p_quadrature(ref.t, ref.dof)) <= 1e-6);
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("identical samples give p = 1") {
    const std::vector<double> a{1, 2, 3};
    const TTestResult r = welch_ttest(a, a);
    CHECK(r.t == 0.0);
    CHECK(r.p == 1.0);
}

TEST_CASE("zero-variance samples take the degenerate path without NaN") {
    const std::vector<double> a{0.5, 0.5, 0.5}, b{0.5, 0.5, 0.5}, c{0.7, 0.7, 0.7};
    const TTestResult same = welch_ttest(a, b);
    CHECK(same.degenerate);
    CHECK(same.p == 1.0);
    const TTestResult diff = welch_ttest(a, c);
    CHECK(diff.degenerate);
    CHECK(diff.p == 0.0);
    CHECK_FALSE(std::isnan(diff.t));
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(welch_ttest(one, a), ContractError);
}

TEST_CASE("sample summary uses the n-1 divisor") {
    const std::vector<double> xs{1, 2, 3, 4};
    const SampleSummary s = summarize(xs);
    CHECK(s.mean == 2.5);
    CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
    const std::vector<double> single{7.0};
    CHECK(summarize(single).stddev == 0.0);
}

TEST_CASE("number formatting") {
    CHECK(format_exact(0.1) == "0.10000000000000001");
    CHECK(parse_double(format_exact(0.1)) == 0.1);
    CHECK(format_short(1.0) == "1.0");
    CHECK(format_short(0.25) == "0.25");
    CHECK_FALSE(parse_double("1.5x").has_value());
    CHECK_FALSE(parse_double("").has_value());
    CHECK(parse_uint("42") == 42ULL);
    CHECK_FALSE(parse_uint("-1").has_value());
    const auto f = split_spaces("a bb c");
    REQUIRE(f.size() == 3);
    CHECK(f[1] == "bb");
    const auto g = split_spaces("a  b");
    REQUIRE(g.size() == 3);
    CHECK(g[1].empty());
}

TEST_CASE("ISOEMB zero matrix is three lines and round-trips") {
    std::stringstream s;
    write_embeddings(Matrix(2, 2), s);
    CHECK(s.str() == "ISOEMB 1 2 2\n0 0\n0 0\n");
    CHECK(read_embeddings(s) == Matrix(2, 2));
}

TEST_CASE("ISOEMB random matrix round-trips bitwise") {
    std::mt19937_64 gen(61);
    const Matrix w = oracle::gaussian_matrix(5, 3, gen, 1e3);
    std::stringstream s;
    write_embeddings(w, s);
    CHECK(read_embeddings(s) == w);
}

TEST_CASE("ISOEMB parse errors carry line numbers") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return read_embeddings(in);
    };
    CHECK_THROWS_WITH_AS(parse("ISOEMB 2 1 1\n0\n"), doctest::Contains("version"), ParseError);
    CHECK_THROWS_WITH_AS(parse("ISOEMB 1 2 2\n0 0\n0\n"), doctest::Contains("line 3"), ParseError);
    CHECK_THROWS_WITH_AS(parse("ISOEMB 1 1 2\n0 abc\n"), doctest::Contains("line 2"), ParseError);
    CHECK_THROWS_WITH_AS(parse("ISOEMB 1 1 1\nnan\n"), doctest::Contains("non-finite"), ParseError);
    CHECK_THROWS_AS(parse("ISOEMB 1 1 1\n1\n2\n"), ParseError);
    CHECK_THROWS_AS(parse("HELLO\n"), ParseError);
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(read_embeddings(fs::path("/nonexistent/file.isoemb")), IoError);
}

TEST_CASE("ISOFLOW round-trips a flow") {
    const fs::path dir = scratch_dir("flow");
    Rng rng(3);
    FlowModel f = make_flow(3, rng);
    std::vector<double> p(f.parameter_count());
    for (double& x : p) x = rng.gaussian();
    f.set_parameters(p);
    write_flow(f, dir / "f.isoflow");
    const FlowModel g = read_flow(dir / "f.isoflow");
    CHECK(g.parameters() == f.parameters());
    CHECK(g.layers.size() == f.layers.size());
    CHECK(g.layers[1].pass == f.layers[1].pass);
    fs::remove_all(dir);
}

TEST_CASE("run records serialize and parse") {
    RunRecord r = record(Method::spectrum_exp, 7, 0.1 + 0.2);
    r.degenerate.insert("accuracy");
    r.extra.emplace_back("c1", "1.5");
    const std::string text = serialize(r);
    CHECK(text.rfind("format=isocal-run 1\nmethod=spectrum-exp\nseed=7\n", 0) == 0);
    const RunRecord back = parse_run_record(text);
    CHECK(back.method == Method::spectrum_exp);
    CHECK(back.seed == 7);
    CHECK(back.accuracy == r.accuracy);
    CHECK(back.is_degenerate("accuracy"));
    CHECK(back.extra_value("c1") == "1.5");
    CHECK(serialize(back) == text);
    CHECK_THROWS_AS(parse_run_record("method=none\n"), ParseError);
    CHECK_THROWS_AS(parse_run_record("format=isocal-run 1\nmethod=bogus\n"), ParseError);
}

TEST_CASE("method labels") {
    for (Method m : kAllMethods) CHECK(parse_method(method_label(m)) == m);
    CHECK(parse_method("flow") == Method::flow_posthoc);
    CHECK_FALSE(parse_method("whitening").has_value());
}

TEST_CASE("identical groups get no star") {
    std::vector<RunRecord> rs;
    for (std::uint64_t s = 1; s <= 3; ++s) {
        rs.push_back(record(Method::none, s, 0.5));
        rs.push_back(record(Method::cosreg, s, 0.5));
    }
    const ReportTable t = aggregate(rs);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].significance == Significance::baseline);
    CHECK(t.rows[1].accuracy.stddev == 0.0);
    CHECK(t.rows[1].significance == Significance::degenerate);
    CHECK(render_text(t).find('*' + std::string("  ")) == std::string::npos);
    CHECK(render_text(t).find("nan") == std::string::npos);
}

TEST_CASE("baseline compared to itself gets no star") {
    std::vector<RunRecord> rs;
    const double acc[] = {0.4, 0.5, 0.6};
    for (std::uint64_t s = 1; s <= 3; ++s) {
        rs.push_back(record(Method::none, s, acc[s - 1]));
        rs.push_back(record(Method::cosreg, s, acc[s - 1]));
    }
    const ReportTable t = aggregate(rs);
    CHECK(t.rows[1].significance == Significance::none);
    CHECK(t.rows[1].test.p == 1.0);
}

TEST_CASE("a large gap earns a star") {
    std::vector<RunRecord> rs;
    const double base[] = {10.0, 10.1, 9.9}, better[] = {20.0, 20.1, 19.9};
    for (std::uint64_t s = 1; s <= 3; ++s) {
        rs.push_back(record(Method::none, s, base[s - 1]));
        rs.push_back(record(Method::spectrum_pol, s, better[s - 1]));
        rs.push_back(record(Method::cosreg, s, base[s - 1] - 10.0));
    }
    const ReportTable t = aggregate(rs);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[2].method == Method::spectrum_pol);
    CHECK(t.rows[2].significance == Significance::better);
    // Significantly worse is not starred.
    CHECK(t.rows[1].significance == Significance::none);
    CHECK(t.rows[1].test.p < 0.05);
}

TEST_CASE("aggregation requires a baseline") {
    std::vector<RunRecord> rs{record(Method::cosreg, 1, 0.5)};
    CHECK_THROWS_AS(aggregate(rs), ContractError);
}

TEST_CASE("golden report") {
    const auto records = read_run_records(GOLDEN_DIR);
    CHECK(records.size() == 9);
    const std::string text = render_text(aggregate(records));
    CHECK(text == slurp(fs::path(GOLDEN_DIR) / "expected_report.txt"));
}

TEST_CASE("degenerate cells are labelled in text and CSV") {
    const std::string csv = render_csv(aggregate(read_run_records(GOLDEN_DIR)));
    CHECK(csv.rfind("method,n,accuracy_mean,accuracy_std,perplexity_mean", 0) == 0);
    CHECK(csv.find("spectrum-pol,3,degenerate,degenerate,62,2,") != std::string::npos);
    CHECK(csv.find("nan") == std::string::npos);
}

TEST_CASE("empty or missing record directories are errors") {
    const fs::path dir = scratch_dir("empty");
    CHECK_THROWS_AS(read_run_records(dir), IoError);
    CHECK_THROWS_AS(read_run_records(dir / "missing"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("cli analyze") {
    const fs::path dir = scratch_dir("analyze");
    write_embeddings(Matrix(4, 3), dir / "zero.isoemb");
    write_embeddings(Matrix{{2, 0}, {0, 1}}, dir / "worked.isoemb");

    CliResult r = run_cli("analyze --machine \"" + (dir / "zero.isoemb").string() + "\"", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("I1=1.0 I2=0.0") != std::string::npos);

    r = run_cli("analyze --machine \"" + (dir / "worked.isoemb").string() + "\"", dir);
    CHECK(r.code == 0);
    const auto pos = r.out.find("I1=");
    REQUIRE(pos != std::string::npos);
    double i1 = 0, i2 = 0;
    CHECK(std::sscanf(r.out.c_str() + pos, "I1=%lf I2=%lf", &i1, &i2) == 2);
    CHECK(i1 == doctest::Approx(0.1353).epsilon(1e-3));
    CHECK(i2 == doctest::Approx(0.798).epsilon(1e-3));

    r = run_cli("analyze \"" + (dir / "missing.isoemb").string() + "\"", dir);
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
    fs::remove_all(dir);
}

TEST_CASE("cli usage errors") {
    const fs::path dir = scratch_dir("usage");
    CHECK(run_cli("train --method whitening --out \"" + dir.string() + "\"", dir).code == 1);
    CHECK(run_cli("frobnicate", dir).code == 1);
    CHECK(run_cli("train --step-size -1 --out \"" + dir.string() + "\"", dir).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("cli train writes one record per seed and report reads them") {
    const fs::path dir = scratch_dir("train");
    const std::string small = " --vocab 12 --dim 6 --context 4 --epochs 2 --train-seqs 256 --eval-seqs 128";
    CliResult r = run_cli("train --quiet --method none --seeds 1,2,3 --out \"" + dir.string() + "\"" + small, dir);
    REQUIRE(r.code == 0);
    std::vector<double> acc;
    for (int s = 1; s <= 3; ++s) {
        const fs::path p = dir / ("none_seed" + std::to_string(s) + ".run");
        REQUIRE(fs::exists(p));
        CHECK(fs::exists(dir / ("none_seed" + std::to_string(s) + "_W.isoemb")));
        acc.push_back(read_run_record(p).i1);
    }
    CHECK(acc[0] != acc[1]);
    CHECK(acc[1] != acc[2]);

    r = run_cli("report --no-timing \"" + dir.string() + "\"", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("none") != std::string::npos);
    CHECK(fs::exists(dir / "report.csv"));

    fs::remove_all(dir / "empty");
    fs::create_directories(dir / "empty");
    CHECK(run_cli("report \"" + (dir / "empty").string() + "\"", dir).code == 2);
    fs::remove_all(dir);
}

}  // TEST_SUITE
