#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lipreg/config.hpp"

using namespace lipreg;

namespace {

std::string write_temp_config(const std::string& text) {
    static int counter = 0;
    const auto path = std::filesystem::temp_directory_path() /
                      ("lipreg_cfg_" + std::to_string(counter++) + ".conf");
    std::ofstream f(path);
    f << text;
    return path.string();
}

}  // namespace

TEST_CASE("minimal config materializes all documented defaults") {
    const auto c = load_config(write_temp_config("data.path = ratings.dat\n"));
    CHECK(c.data_path == "ratings.dat");
    CHECK(c.data_separator == "::");
    CHECK(c.data_k == 5);
    CHECK(c.data_t_sh == 3);
    CHECK(c.data_seed == 7);
    CHECK(c.data_ratios[0] == 0.8);
    CHECK(c.model.trunk == Trunk::Dcn);
    CHECK(c.model.head == Head::Rating);
    CHECK(c.model.d == 16);
    CHECK(c.model.deep_widths == std::vector<std::size_t>{64, 32});
    CHECK(c.train.learning_rate == 1e-3);
    CHECK(c.train.weight_decay == 1e-4);
    CHECK(c.loss.lambda_r == 0.7);
    CHECK(c.loss.t_sh == 3);
    CHECK(c.perturb_sigmas == std::vector<double>{0.01, 0.03, 0.05, 0.07, 0.09});
    CHECK(c.sweep_lambdas == std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9});
    CHECK(c.lipschitz_grid == std::vector<std::size_t>{2, 3, 5, 8, 13});
    // derived fields follow the data section
    CHECK(c.model.rating_classes == 5);
    CHECK(c.synth.seed == 7);
    CHECK(c.synth.rating_classes == 5);
}

TEST_CASE("out-of-range lambda_r names the field and the bound") {
    const auto path = write_temp_config("loss.lambda_r = 1.5\n");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("lambda_r"), ConfigError);
    try {
        load_config(path);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("[0,1]") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_WITH_AS(load_config(write_temp_config("data.pth = x\n")),
                         doctest::Contains("data.pth"), ConfigError);
}

TEST_CASE("parse diagnostics carry line numbers") {
    CHECK_THROWS_WITH_AS(parse_config_text("data.k = 5\nno equals sign here\n"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("data.k = 5\ndata.k = 4\n"),
                         doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
    const auto kv = parse_config_text("# header\n\ndata.k = 4  # trailing comment\n");
    CHECK(kv.at("data.k") == "4");
}

TEST_CASE("overrides change exactly the targeted line of the effective config") {
    const auto path = write_temp_config("data.path = r.dat\n");
    const auto base = effective_config_text(load_config(path));
    const auto over = effective_config_text(load_config(path, {"train.seed=3"}));
    std::istringstream a(base), b(over);
    std::string la, lb;
    int diffs = 0;
    while (std::getline(a, la) && std::getline(b, lb)) {
        if (la != lb) {
            ++diffs;
            CHECK(lb == "train.seed = 3");
        }
    }
    CHECK(diffs == 1);
    CHECK_THROWS_AS(load_config(path, {"no-equals"}), ConfigError);
}

TEST_CASE("effective config text round-trips to the same config") {
    const auto path = write_temp_config(
        "data.separator = tab\n"
        "model.trunk = mlp\n"
        "model.head = binary\n"
        "model.deep_widths = 8,4\n"
        "loss.lambda_r = 0.3\n"
        "train.epochs = 2\n");
    const auto c = load_config(path);
    CHECK(c.data_separator == "\t");
    CHECK(c.model.trunk == Trunk::Mlp);
    const std::string text = effective_config_text(c);
    const auto c2 = config_from_map(parse_config_text(text));
    CHECK(effective_config_text(c2) == text);
}

TEST_CASE("validation failures map to config errors") {
    CHECK_THROWS_AS(load_config(write_temp_config("data.t_sh = 5\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_temp_config("data.ratios = 0.5,0.2,0.2\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_temp_config("data.ratios = 0.8,0.1\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_temp_config("model.d = 0\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_temp_config("train.lr = zero\n")), ConfigError);
    CHECK_THROWS_AS(load_config(write_temp_config("model.trunk = resnet\n")), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/x.conf"), ConfigError);
}

TEST_CASE("schema_from_config mirrors the data section") {
    const auto c = load_config(write_temp_config("data.separator = tab\ndata.n_context = 2\n"));
    const auto s = schema_from_config(c);
    CHECK(s.separator == "\t");
    CHECK(s.n_context == 2);
    CHECK(s.rating_classes == 5);
    CHECK(s.has_timestamp);
}
