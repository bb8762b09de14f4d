// End-to-end test of the experiment CLI. Receives the binary path as argv[1]
// and drives the full synth -> prepare -> train -> eval -> analyze-lipschitz
// pipeline in a temporary directory.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_dir;

int run(const std::string& args) {
    const std::string cmd = g_cli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

const char* kConfig =
    "data.path = ratings.dat\n"
    "data.cache = dataset.lprc\n"
    "synth.n_users = 30\n"
    "synth.n_items = 40\n"
    "synth.n_records = 2000\n"
    "train.epochs = 2\n"
    "train.batch_size = 256\n"
    "model.d = 4\n"
    "model.deep_widths = 8,4\n"
    "lipschitz.grid = 2,5,100\n"
    "lipschitz.n_pairs = 200\n";

}  // namespace

TEST_CASE("pipeline smoke: synth, prepare, train, eval") {
    const fs::path conf = g_dir / "exp.conf";
    std::ofstream(conf) << kConfig;
    const std::string base = "--config " + conf.string() + " --out " + (g_dir / "out").string();

    REQUIRE(run("synth " + base) == 0);
    CHECK(fs::exists(g_dir / "out/ratings.dat"));
    CHECK(fs::exists(g_dir / "out/synth.json"));

    REQUIRE(run("prepare " + base) == 0);
    CHECK(fs::exists(g_dir / "out/dataset.lprc"));

    REQUIRE(run("train " + base) == 0);
    CHECK(fs::exists(g_dir / "out/checkpoint.lprm"));
    CHECK(fs::exists(g_dir / "out/runlog.jsonl"));
    CHECK(fs::exists(g_dir / "out/timings.csv"));

    REQUIRE(run("eval " + base) == 0);
    CHECK(fs::exists(g_dir / "out/metrics.json"));
    const std::string metrics = slurp(g_dir / "out/metrics.json");
    CHECK(metrics.find("auc_pct") != std::string::npos);
    CHECK(metrics.find("data.path = ratings.dat") != std::string::npos);  // embedded config
    // timings now hold all three categories
    const std::string timings = slurp(g_dir / "out/timings.csv");
    CHECK(timings.find("training_epoch,") != std::string::npos);
    CHECK(timings.find("full_training,") != std::string::npos);
    CHECK(timings.find("evaluation,") != std::string::npos);
}

TEST_CASE("config override changes only the targeted key") {
    const fs::path conf = g_dir / "exp.conf";
    const std::string out = (g_dir / "out2").string();
    REQUIRE(run("synth --config " + conf.string() + " --out " + out +
                " --set train.seed=3") == 0);
    const std::string art = slurp(g_dir / "out2/synth.json");
    CHECK(art.find("train.seed = 3") != std::string::npos);
}

TEST_CASE("eval without a checkpoint exits 3 and names the path") {
    const fs::path conf = g_dir / "exp.conf";
    const std::string out = (g_dir / "out3").string();
    REQUIRE(run("synth --config " + conf.string() + " --out " + out) == 0);
    REQUIRE(run("prepare --config " + conf.string() + " --out " + out) == 0);
    const std::string cmd = g_cli + " eval --config " + conf.string() + " --out " + out +
                            " 2>" + (g_dir / "err.txt").string() + " >/dev/null";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 3);
    CHECK(slurp(g_dir / "err.txt").find("checkpoint.lprm") != std::string::npos);
}

TEST_CASE("config errors exit 2") {
    const fs::path bad = g_dir / "bad.conf";
    std::ofstream(bad) << "loss.lambda_r = 1.5\n";
    CHECK(run("train --config " + bad.string() + " --out " + (g_dir / "outb").string()) == 2);

    const fs::path unknown = g_dir / "unknown.conf";
    std::ofstream(unknown) << "data.wat = 1\n";
    CHECK(run("train --config " + unknown.string() + " --out " + (g_dir / "outb").string()) == 2);

    CHECK(run("train --config " + (g_dir / "missing.conf").string() + " --out " +
              (g_dir / "outb").string()) == 2);
}

TEST_CASE("analyze-lipschitz reports the closed form per bandwidth") {
    const fs::path conf = g_dir / "exp.conf";
    const std::string out = (g_dir / "out").string();
    REQUIRE(run("analyze-lipschitz --config " + conf.string() + " --out " + out) == 0);
    const std::string jsonl = slurp(g_dir / "out/lipschitz.jsonl");
    // closed_form column for N in {2, 5, 100}
    CHECK(jsonl.find("\"N\":2") != std::string::npos);
    CHECK(jsonl.find("\"closed_form\":0.5") != std::string::npos);
    CHECK(jsonl.find("\"N\":5") != std::string::npos);
    CHECK(jsonl.find("\"closed_form\":0.4") != std::string::npos);
    CHECK(jsonl.find("\"N\":100") != std::string::npos);
    CHECK(jsonl.find("\"closed_form\":0.0994987437") != std::string::npos);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-cli-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    g_dir = fs::temp_directory_path() / "lipreg_cli_test";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    doctest::Context ctx;
    const int rc = ctx.run();
    fs::remove_all(g_dir);
    return rc;
}
