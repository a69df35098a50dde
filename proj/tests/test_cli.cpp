#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = OHMM_CLI_PATH;
const std::string kParams = OHMM_SOURCE_DIR "/configs/poincare_params.json";

int run(const std::string& args) {
    const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ohmm_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

} // namespace

TEST(Cli, SimulateFitExperimentPlot) {
    const auto d = temp_dir("pipeline");
    ASSERT_EQ(run("simulate --params " + kParams + " --length 800 --seed 4 --out " + (d / "chain.csv").string()), 0);
    const std::string chain = slurp(d / "chain.csv");
    EXPECT_EQ(std::count(chain.begin(), chain.end(), '\n'), 801);

    write(d / "exp.cfg", "params=" + kParams + "\nchain.length=800\nminibatch=100\nseeds=1\nkmeans_only.prefix=200\n");
    ASSERT_EQ(run("fit --chain " + (d / "chain.csv").string() + " --config " + (d / "exp.cfg").string() + " --trace " +
                  (d / "trace.jsonl").string() + " --trace-every 100 --metrics " + (d / "fit.csv").string() +
                  " --params-out " + (d / "est.json").string()),
              0);
    const std::string metrics = slurp(d / "fit.csv");
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "delta,seed,accuracy,runtime_s,a11,a22,a33,transition_rmse");
    const std::string trace = slurp(d / "trace.jsonl");
    EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 7); // k = 200, 300, ..., 800
    EXPECT_NE(trace.find("\"gamma_filtered\""), std::string::npos);
    EXPECT_TRUE(fs::exists(d / "est.json"));

    ASSERT_EQ(run("experiment --config " + (d / "exp.cfg").string() + " --out-dir " + (d / "out").string()), 0);
    for (const char* f : {"metrics.csv", "summary.csv", "estimates.json"}) EXPECT_TRUE(fs::exists(d / "out" / f)) << f;
    ASSERT_EQ(run("plot-data --estimates " + (d / "out" / "estimates.json").string() + " --out " +
                  (d / "scatter.csv").string()),
              0);
    const std::string scatter = slurp(d / "scatter.csv");
    EXPECT_EQ(std::count(scatter.begin(), scatter.end(), '\n'), 1 + 6 + 3);
}

TEST(Cli, ExitCodes) {
    const auto d = temp_dir("codes");
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("simulate --length 5"), 1);
    EXPECT_EQ(run("simulate --params " + (d / "missing.json").string() + " --out " + (d / "c.csv").string()), 3);

    write(d / "bad.cfg", "params=" + kParams + "\nunknown.key=1\n");
    EXPECT_EQ(run("experiment --config " + (d / "bad.cfg").string()), 1);
    EXPECT_EQ(run("experiment --config " + (d / "absent.cfg").string()), 3);

    // A dispersion beyond the supported range is a numerical failure.
    write(d / "wide.json", R"({"transition": [[1]], "initial": [1],
                              "components": [{"center": [0, 0], "delta": 1e9}]})");
    EXPECT_EQ(run("simulate --params " + (d / "wide.json").string() + " --out " + (d / "c.csv").string()), 2);

    write(d / "corrupt.json", "{ nope");
    EXPECT_EQ(run("plot-data --estimates " + (d / "corrupt.json").string() + " --out " + (d / "s.csv").string()), 3);
}
