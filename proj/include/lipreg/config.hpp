#pragma once

// Flat-sectioned experiment configuration ("section.key = value"). Parsing is
// fail-closed: unknown keys are errors, and every default is materialized so
// emitted artifacts are self-describing.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lipreg/data.hpp"
#include "lipreg/error.hpp"
#include "lipreg/loss.hpp"
#include "lipreg/model.hpp"
#include "lipreg/train.hpp"

namespace lipreg {

struct AppConfig {
    // data
    std::string data_path = "ratings.dat";
    std::string data_cache = "dataset.lprc";
    std::string data_separator = "::";
    bool data_has_timestamp = true;
    std::size_t data_n_context = 0;
    int data_k = 5;
    int data_t_sh = 3;
    std::uint64_t data_seed = 7;
    double data_ratios[3] = {0.8, 0.1, 0.1};

    // model
    ModelConfig model;

    // train
    TrainConfig train;

    // loss
    LossConfig loss;

    // synth
    SynthConfig synth;

    // perturb
    std::vector<double> perturb_sigmas = {0.01, 0.03, 0.05, 0.07, 0.09};
    std::size_t perturb_n_seeds = 5;
    std::uint64_t perturb_seed = 123;

    // sweep
    std::vector<double> sweep_lambdas = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::size_t sweep_n_seeds = 5;

    // lipschitz
    std::vector<std::size_t> lipschitz_grid = {2, 3, 5, 8, 13};
    double lipschitz_tau = 1.0;
    std::size_t lipschitz_n_pairs = 10000;
    std::uint64_t lipschitz_seed = 0;

    void validate() const {
        if (data_k < 2) throw ConfigError("data.k: need at least two rating classes");
        if (data_t_sh < 1 || data_t_sh > data_k - 1) {
            throw ConfigError("data.t_sh: must lie in [1, K-1]");
        }
        double sum = data_ratios[0] + data_ratios[1] + data_ratios[2];
        if (data_ratios[0] <= 0.0 || data_ratios[1] < 0.0 || data_ratios[2] < 0.0 ||
            std::fabs(sum - 1.0) > 1e-9) {
            throw ConfigError("data.ratios: must be positive and sum to 1");
        }
        if (loss.lambda_r < 0.0 || loss.lambda_r > 1.0) {
            throw ConfigError("loss.lambda_r: must lie in [0,1]");
        }
        if (loss.lambda_l2 < 0.0) throw ConfigError("loss.lambda_l2: must be >= 0");
        try {
            model.validate();
            train.validate();
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

class KeyValueConsumer {
public:
    explicit KeyValueConsumer(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return false;
        return true;
    }

    std::string take(const std::string& key, const std::string& fallback) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::string v = it->second;
        kv_.erase(it);
        return v;
    }

    void reject_leftovers() const {
        if (!kv_.empty()) {
            throw ConfigError("unknown config key: " + kv_.begin()->first);
        }
    }

private:
    std::map<std::string, std::string> kv_;
};

inline double to_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not a number: '" + v + "'");
    }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not a nonnegative integer: '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false: '" + v + "'");
}

inline std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key)) {
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
        }
        kv[key] = value;
    }
    return kv;
}

inline AppConfig config_from_map(std::map<std::string, std::string> raw) {
    using namespace detail;
    KeyValueConsumer kv(std::move(raw));
    AppConfig c;

    c.data_path = kv.take("data.path", c.data_path);
    c.data_cache = kv.take("data.cache", c.data_cache);
    {
        std::string sep = kv.take("data.separator", c.data_separator);
        if (sep == "tab" || sep == "\\t") sep = "\t";
        if (sep.empty()) throw ConfigError("data.separator: must be nonempty");
        c.data_separator = sep;
    }
    c.data_has_timestamp = to_bool("data.has_timestamp",
                                   kv.take("data.has_timestamp", c.data_has_timestamp ? "true" : "false"));
    c.data_n_context = to_u64("data.n_context", kv.take("data.n_context", std::to_string(c.data_n_context)));
    c.data_k = static_cast<int>(to_u64("data.k", kv.take("data.k", std::to_string(c.data_k))));
    c.data_t_sh = static_cast<int>(to_u64("data.t_sh", kv.take("data.t_sh", std::to_string(c.data_t_sh))));
    c.data_seed = to_u64("data.seed", kv.take("data.seed", std::to_string(c.data_seed)));
    {
        const auto parts = split_csv(kv.take("data.ratios", "0.8,0.1,0.1"));
        if (parts.size() != 3) throw ConfigError("data.ratios: expected three comma-separated values");
        for (int i = 0; i < 3; ++i) c.data_ratios[i] = to_f64("data.ratios", parts[i]);
    }

    {
        const std::string trunk = kv.take("model.trunk", "dcn");
        if (trunk == "dcn") {
            c.model.trunk = Trunk::Dcn;
        } else if (trunk == "mlp") {
            c.model.trunk = Trunk::Mlp;
        } else {
            throw ConfigError("model.trunk: expected dcn|mlp, got '" + trunk + "'");
        }
    }
    {
        const std::string head = kv.take("model.head", "rating");
        if (head == "binary") {
            c.model.head = Head::Binary;
        } else if (head == "rating") {
            c.model.head = Head::Rating;
        } else {
            throw ConfigError("model.head: expected binary|rating, got '" + head + "'");
        }
    }
    c.model.d = to_u64("model.d", kv.take("model.d", std::to_string(c.model.d)));
    c.model.d_context = to_u64("model.d_context", kv.take("model.d_context", std::to_string(c.model.d_context)));
    c.model.cross_layers = to_u64("model.cross_layers", kv.take("model.cross_layers", std::to_string(c.model.cross_layers)));
    {
        const auto parts = split_csv(kv.take("model.deep_widths", "64,32"));
        c.model.deep_widths.clear();
        for (const auto& p : parts) c.model.deep_widths.push_back(to_u64("model.deep_widths", p));
    }
    c.model.tau = to_f64("model.tau", kv.take("model.tau", "1"));
    c.model.rating_classes = c.data_k;

    c.train.epochs = to_u64("train.epochs", kv.take("train.epochs", std::to_string(c.train.epochs)));
    c.train.batch_size = to_u64("train.batch_size", kv.take("train.batch_size", std::to_string(c.train.batch_size)));
    c.train.learning_rate = to_f64("train.lr", kv.take("train.lr", "0.001"));
    c.train.beta1 = to_f64("train.beta1", kv.take("train.beta1", "0.9"));
    c.train.beta2 = to_f64("train.beta2", kv.take("train.beta2", "0.999"));
    c.train.eps = to_f64("train.eps", kv.take("train.eps", "1e-8"));
    c.train.weight_decay = to_f64("train.weight_decay", kv.take("train.weight_decay", "0.0001"));
    c.train.init_seed = to_u64("train.init_seed", kv.take("train.init_seed", "0"));
    c.train.train_seed = to_u64("train.seed", kv.take("train.seed", "0"));
    c.train.patience = to_u64("train.patience", kv.take("train.patience", "5"));
    c.train.spot_check_coords = to_u64("train.spot_check_coords", kv.take("train.spot_check_coords", "16"));

    c.loss.lambda_r = to_f64("loss.lambda_r", kv.take("loss.lambda_r", "0.7"));
    c.loss.lambda_l2 = to_f64("loss.lambda_l2", kv.take("loss.lambda_l2", "0"));
    c.loss.t_sh = c.data_t_sh;
    c.loss.rating_classes = c.data_k;

    c.synth.n_users = to_u64("synth.n_users", kv.take("synth.n_users", "400"));
    c.synth.n_items = to_u64("synth.n_items", kv.take("synth.n_items", "500"));
    c.synth.n_records = to_u64("synth.n_records", kv.take("synth.n_records", "50000"));
    c.synth.latent_dim = to_u64("synth.latent_dim", kv.take("synth.latent_dim", "8"));
    c.synth.noise_std = to_f64("synth.noise_std", kv.take("synth.noise_std", "0.7"));
    c.synth.rating_classes = c.data_k;
    c.synth.seed = c.data_seed;

    {
        const auto parts = split_csv(kv.take("perturb.sigmas", "0.01,0.03,0.05,0.07,0.09"));
        c.perturb_sigmas.clear();
        for (const auto& p : parts) c.perturb_sigmas.push_back(to_f64("perturb.sigmas", p));
    }
    c.perturb_n_seeds = to_u64("perturb.n_seeds", kv.take("perturb.n_seeds", "5"));
    c.perturb_seed = to_u64("perturb.seed", kv.take("perturb.seed", "123"));

    {
        const auto parts = split_csv(kv.take("sweep.lambdas", "0.1,0.3,0.5,0.7,0.9"));
        c.sweep_lambdas.clear();
        for (const auto& p : parts) c.sweep_lambdas.push_back(to_f64("sweep.lambdas", p));
    }
    c.sweep_n_seeds = to_u64("sweep.n_seeds", kv.take("sweep.n_seeds", "5"));

    {
        const auto parts = split_csv(kv.take("lipschitz.grid", "2,3,5,8,13"));
        c.lipschitz_grid.clear();
        for (const auto& p : parts) c.lipschitz_grid.push_back(to_u64("lipschitz.grid", p));
    }
    c.lipschitz_tau = to_f64("lipschitz.tau", kv.take("lipschitz.tau", "1"));
    c.lipschitz_n_pairs = to_u64("lipschitz.n_pairs", kv.take("lipschitz.n_pairs", "10000"));
    c.lipschitz_seed = to_u64("lipschitz.seed", kv.take("lipschitz.seed", "0"));

    kv.reject_leftovers();
    c.validate();
    return c;
}

inline AppConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {}) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto kv = parse_config_text(text);
    for (const auto& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + ov);
        kv[detail::trim(ov.substr(0, eq))] = detail::trim(ov.substr(eq + 1));
    }
    return config_from_map(std::move(kv));
}

// Canonical materialized form: every key, defaults included, fixed order.
inline std::string effective_config_text(const AppConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "data.path = " << c.data_path << "\n";
    os << "data.cache = " << c.data_cache << "\n";
    os << "data.separator = " << (c.data_separator == "\t" ? "tab" : c.data_separator) << "\n";
    os << "data.has_timestamp = " << (c.data_has_timestamp ? "true" : "false") << "\n";
    os << "data.n_context = " << c.data_n_context << "\n";
    os << "data.k = " << c.data_k << "\n";
    os << "data.t_sh = " << c.data_t_sh << "\n";
    os << "data.seed = " << c.data_seed << "\n";
    os << "data.ratios = " << c.data_ratios[0] << "," << c.data_ratios[1] << ","
       << c.data_ratios[2] << "\n";
    os << "model.trunk = " << trunk_name(c.model.trunk) << "\n";
    os << "model.head = " << head_name(c.model.head) << "\n";
    os << "model.d = " << c.model.d << "\n";
    os << "model.d_context = " << c.model.d_context << "\n";
    os << "model.cross_layers = " << c.model.cross_layers << "\n";
    os << "model.deep_widths = ";
    for (std::size_t i = 0; i < c.model.deep_widths.size(); ++i) {
        if (i) os << ",";
        os << c.model.deep_widths[i];
    }
    os << "\n";
    os << "model.tau = " << c.model.tau << "\n";
    os << "train.epochs = " << c.train.epochs << "\n";
    os << "train.batch_size = " << c.train.batch_size << "\n";
    os << "train.lr = " << c.train.learning_rate << "\n";
    os << "train.beta1 = " << c.train.beta1 << "\n";
    os << "train.beta2 = " << c.train.beta2 << "\n";
    os << "train.eps = " << c.train.eps << "\n";
    os << "train.weight_decay = " << c.train.weight_decay << "\n";
    os << "train.init_seed = " << c.train.init_seed << "\n";
    os << "train.seed = " << c.train.train_seed << "\n";
    os << "train.patience = " << c.train.patience << "\n";
    os << "train.spot_check_coords = " << c.train.spot_check_coords << "\n";
    os << "loss.lambda_r = " << c.loss.lambda_r << "\n";
    os << "loss.lambda_l2 = " << c.loss.lambda_l2 << "\n";
    os << "synth.n_users = " << c.synth.n_users << "\n";
    os << "synth.n_items = " << c.synth.n_items << "\n";
    os << "synth.n_records = " << c.synth.n_records << "\n";
    os << "synth.latent_dim = " << c.synth.latent_dim << "\n";
    os << "synth.noise_std = " << c.synth.noise_std << "\n";
    os << "perturb.sigmas = ";
    for (std::size_t i = 0; i < c.perturb_sigmas.size(); ++i) {
        if (i) os << ",";
        os << c.perturb_sigmas[i];
    }
    os << "\n";
    os << "perturb.n_seeds = " << c.perturb_n_seeds << "\n";
    os << "perturb.seed = " << c.perturb_seed << "\n";
    os << "sweep.lambdas = ";
    for (std::size_t i = 0; i < c.sweep_lambdas.size(); ++i) {
        if (i) os << ",";
        os << c.sweep_lambdas[i];
    }
    os << "\n";
    os << "sweep.n_seeds = " << c.sweep_n_seeds << "\n";
    os << "lipschitz.grid = ";
    for (std::size_t i = 0; i < c.lipschitz_grid.size(); ++i) {
        if (i) os << ",";
        os << c.lipschitz_grid[i];
    }
    os << "\n";
    os << "lipschitz.tau = " << c.lipschitz_tau << "\n";
    os << "lipschitz.n_pairs = " << c.lipschitz_n_pairs << "\n";
    os << "lipschitz.seed = " << c.lipschitz_seed << "\n";
    return os.str();
}

inline DatasetSchema schema_from_config(const AppConfig& c) {
    DatasetSchema s;
    s.separator = c.data_separator;
    s.has_timestamp = c.data_has_timestamp;
    s.n_context = c.data_n_context;
    s.rating_classes = c.data_k;
    return s;
}

}  // namespace lipreg
