#pragma once

// Explicit-feedback ingestion: parsing, thresholded binary labels,
// deterministic splitting, synthetic rating worlds, and the "LPRC" cache.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lipreg/error.hpp"
#include "lipreg/io.hpp"
#include "lipreg/rng.hpp"

namespace lipreg {

struct RatingRecord {
    std::string user_id;
    std::string item_id;
    int rating = 0;                     // in [1, K]
    std::int64_t timestamp = 0;         // 0 when absent; parsed but unused by the model
    std::vector<std::string> context;   // categorical tokens, schema-fixed count

    friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

struct DatasetSchema {
    std::string separator = "::";       // "::" or "\t"
    bool has_timestamp = true;
    std::size_t n_context = 0;          // context columns after the timestamp
    int rating_classes = 5;             // K
};

struct LoadResult {
    std::vector<RatingRecord> records;
    std::size_t skipped = 0;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, const std::string& sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = line.find(sep, pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return out;
}

inline bool parse_int(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    std::size_t i = 0;
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str() + i, &end, 10);
    if (errno != 0 || end != s.c_str() + s.size()) return false;
    out = v;
    return true;
}

}  // namespace detail

inline LoadResult load_ratings_from_stream(std::istream& in, const DatasetSchema& schema) {
    LoadResult result;
    const std::size_t want = 3 + (schema.has_timestamp ? 1 : 0) + schema.n_context;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_line(line, schema.separator);
        if (fields.size() != want) {
            ++result.skipped;
            continue;
        }
        std::int64_t rating = 0;
        if (!detail::parse_int(fields[2], rating) || rating < 1 ||
            rating > schema.rating_classes) {
            ++result.skipped;
            continue;
        }
        RatingRecord rec;
        rec.user_id = fields[0];
        rec.item_id = fields[1];
        rec.rating = static_cast<int>(rating);
        std::size_t next = 3;
        if (schema.has_timestamp) {
            std::int64_t ts = 0;
            if (!detail::parse_int(fields[next], ts)) {
                ++result.skipped;
                continue;
            }
            rec.timestamp = ts;
            ++next;
        }
        rec.context.assign(fields.begin() + static_cast<std::ptrdiff_t>(next), fields.end());
        result.records.push_back(std::move(rec));
    }
    return result;
}

inline LoadResult load_ratings(const std::string& path, const DatasetSchema& schema) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open ratings file: " + path);
    return load_ratings_from_stream(f, schema);
}

// Positive iff the rating is strictly above the threshold; equality is
// negative, matching the k <= t_sh mass in the aggregation denominator.
inline int binarize(int rating, int t_sh, int rating_classes) {
    if (rating < 1 || rating > rating_classes) {
        throw ArgumentError("binarize: rating out of [1, K]");
    }
    if (t_sh < 1 || t_sh > rating_classes - 1) {
        throw ArgumentError("binarize: threshold out of [1, K-1]");
    }
    return rating > t_sh ? 1 : 0;
}

// Token -> dense index map in first-occurrence order, with a dedicated OOV
// index appended after the last real token.
class Vocabulary {
public:
    std::size_t intern(const std::string& token) {
        auto [it, inserted] = map_.try_emplace(token, tokens_.size());
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    // Known token index, or the OOV index.
    std::size_t lookup(const std::string& token) const {
        const auto it = map_.find(token);
        return it == map_.end() ? oov_index() : it->second;
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t oov_index() const { return tokens_.size(); }
    std::size_t table_rows() const { return tokens_.size() + 1; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.tokens_ == b.tokens_;
    }

private:
    std::map<std::string, std::size_t> map_;
    std::vector<std::string> tokens_;
};

struct FeatureSpace {
    Vocabulary user_vocab;
    Vocabulary item_vocab;
    std::vector<Vocabulary> context_vocabs;
    int rating_classes = 5;   // K
    int t_sh = 3;
    std::size_t d = 16;       // id-embedding dimension
    std::size_t d_context = 0;  // per-field context embedding dimension

    std::size_t d_prime() const { return context_vocabs.size() * d_context; }
    std::size_t input_dim() const { return 2 * d + d_prime(); }

    friend bool operator==(const FeatureSpace&, const FeatureSpace&) = default;
};

inline FeatureSpace build_feature_space(const std::vector<RatingRecord>& records, int K,
                                        int t_sh, std::size_t d, std::size_t d_context) {
    if (records.empty()) throw ArgumentError("build_feature_space: no records");
    if (t_sh < 1 || t_sh > K - 1) throw ArgumentError("build_feature_space: t_sh out of [1, K-1]");
    FeatureSpace fs;
    fs.rating_classes = K;
    fs.t_sh = t_sh;
    fs.d = d;
    fs.d_context = d_context;
    fs.context_vocabs.resize(records.front().context.size());
    for (const auto& rec : records) {
        if (rec.context.size() != fs.context_vocabs.size()) {
            throw ArgumentError("build_feature_space: inconsistent context field count");
        }
        fs.user_vocab.intern(rec.user_id);
        fs.item_vocab.intern(rec.item_id);
        for (std::size_t c = 0; c < rec.context.size(); ++c) {
            fs.context_vocabs[c].intern(rec.context[c]);
        }
    }
    return fs;
}

// One index-encoded training example.
struct Example {
    std::uint32_t user = 0;
    std::uint32_t item = 0;
    std::vector<std::uint32_t> context;
    std::int32_t rating = 0;
    std::int32_t label = 0;   // binarize(rating, t_sh)

    friend bool operator==(const Example&, const Example&) = default;
};

inline Example encode_record(const RatingRecord& rec, const FeatureSpace& fs) {
    Example ex;
    ex.user = static_cast<std::uint32_t>(fs.user_vocab.lookup(rec.user_id));
    ex.item = static_cast<std::uint32_t>(fs.item_vocab.lookup(rec.item_id));
    ex.context.reserve(rec.context.size());
    for (std::size_t c = 0; c < rec.context.size(); ++c) {
        ex.context.push_back(static_cast<std::uint32_t>(fs.context_vocabs[c].lookup(rec.context[c])));
    }
    ex.rating = rec.rating;
    ex.label = binarize(rec.rating, fs.t_sh, fs.rating_classes);
    return ex;
}

struct SplitDataset {
    std::vector<Example> train;
    std::vector<Example> valid;
    std::vector<Example> test;
    std::uint64_t split_seed = 0;
    double ratios[3] = {0.8, 0.1, 0.1};

    friend bool operator==(const SplitDataset&, const SplitDataset&) = default;
};

// Record-level random split; valid/test sizes are floors, remainder to train.
inline SplitDataset split_dataset(const std::vector<RatingRecord>& records,
                                  const FeatureSpace& fs, double r_train, double r_valid,
                                  double r_test, std::uint64_t seed) {
    if (r_train <= 0.0 || r_valid < 0.0 || r_test < 0.0 ||
        std::fabs(r_train + r_valid + r_test - 1.0) > 1e-9) {
        throw ArgumentError("split_dataset: ratios must be positive and sum to 1");
    }
    if (records.size() < 3) throw ArgumentError("split_dataset: need at least 3 records");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n = records.size();
    const std::size_t n_valid = static_cast<std::size_t>(std::floor(r_valid * static_cast<double>(n)));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(r_test * static_cast<double>(n)));
    SplitDataset out;
    out.split_seed = seed;
    out.ratios[0] = r_train;
    out.ratios[1] = r_valid;
    out.ratios[2] = r_test;
    for (std::size_t i = 0; i < n; ++i) {
        Example ex = encode_record(records[order[i]], fs);
        if (i < n - n_valid - n_test) {
            out.train.push_back(std::move(ex));
        } else if (i < n - n_test) {
            out.valid.push_back(std::move(ex));
        } else {
            out.test.push_back(std::move(ex));
        }
    }
    return out;
}

struct SynthConfig {
    std::size_t n_users = 100;
    std::size_t n_items = 100;
    std::size_t n_records = 1000;
    int rating_classes = 5;
    std::size_t latent_dim = 8;
    double noise_std = 0.5;
    std::uint64_t seed = 7;
};

// Latent dot-product world: rating = clamp(round(a*dot(u,v) + b + noise), 1, K).
// The affine map (a, b) sends +/-2 latent standard deviations of the dot
// product onto the [1, K] rating range, so noiseless ratings span all classes.
inline std::vector<RatingRecord> synthesize(const SynthConfig& cfg) {
    if (cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_records == 0 || cfg.latent_dim == 0) {
        throw ArgumentError("synthesize: all counts must be positive");
    }
    if (cfg.noise_std < 0.0) throw ArgumentError("synthesize: noise_std must be >= 0");
    Rng rng(cfg.seed);
    std::vector<double> users(cfg.n_users * cfg.latent_dim);
    std::vector<double> items(cfg.n_items * cfg.latent_dim);
    for (double& v : users) v = rng.normal();
    for (double& v : items) v = rng.normal();
    // dot of two standard normal latent vectors has stddev sqrt(latent_dim)
    const double dot_std = std::sqrt(static_cast<double>(cfg.latent_dim));
    const double a = (cfg.rating_classes - 1) / (4.0 * dot_std);
    const double b = (1.0 + cfg.rating_classes) / 2.0;
    std::vector<RatingRecord> out;
    out.reserve(cfg.n_records);
    for (std::size_t r = 0; r < cfg.n_records; ++r) {
        const std::size_t u = static_cast<std::size_t>(rng.uniform_index(cfg.n_users));
        const std::size_t i = static_cast<std::size_t>(rng.uniform_index(cfg.n_items));
        double dot = 0.0;
        for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
            dot += users[u * cfg.latent_dim + k] * items[i * cfg.latent_dim + k];
        }
        double score = a * dot + b;
        if (cfg.noise_std > 0.0) score += rng.normal(0.0, cfg.noise_std);
        const int rating = static_cast<int>(std::clamp(
            std::lround(score), 1L, static_cast<long>(cfg.rating_classes)));
        RatingRecord rec;
        rec.user_id = "u" + std::to_string(u);
        rec.item_id = "i" + std::to_string(i);
        rec.rating = rating;
        rec.timestamp = static_cast<std::int64_t>(r);
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// "LPRC" cache: FeatureSpace + index-encoded splits, byte-stable round trip.

inline constexpr char kCacheMagic[4] = {'L', 'P', 'R', 'C'};
inline constexpr std::uint32_t kCacheVersion = 1;

namespace detail {

inline void put_vocab(std::string& out, const Vocabulary& v) {
    std::string section;
    io::put_u64(section, v.size());
    for (const auto& t : v.tokens()) io::put_string(section, t);
    io::put_string(out, section);
}

inline Vocabulary get_vocab(io::Reader& r) {
    io::Reader section(r.str());
    Vocabulary v;
    const std::uint64_t n = section.u64();
    for (std::uint64_t i = 0; i < n; ++i) v.intern(section.str());
    return v;
}

inline void put_examples(std::string& out, const std::vector<Example>& xs) {
    std::string section;
    io::put_u64(section, xs.size());
    for (const auto& ex : xs) {
        io::put_u32(section, ex.user);
        io::put_u32(section, ex.item);
        io::put_u32(section, static_cast<std::uint32_t>(ex.context.size()));
        for (auto c : ex.context) io::put_u32(section, c);
        io::put_u32(section, static_cast<std::uint32_t>(ex.rating));
        io::put_u32(section, static_cast<std::uint32_t>(ex.label));
    }
    io::put_string(out, section);
}

inline std::vector<Example> get_examples(io::Reader& r) {
    io::Reader section(r.str());
    const std::uint64_t n = section.u64();
    std::vector<Example> xs(n);
    for (auto& ex : xs) {
        ex.user = section.u32();
        ex.item = section.u32();
        const std::uint32_t nc = section.u32();
        ex.context.resize(nc);
        for (auto& c : ex.context) c = section.u32();
        ex.rating = static_cast<std::int32_t>(section.u32());
        ex.label = static_cast<std::int32_t>(section.u32());
    }
    return xs;
}

}  // namespace detail

inline std::string serialize_cache(const FeatureSpace& fs, const SplitDataset& ds) {
    std::string out(kCacheMagic, 4);
    io::put_u32(out, kCacheVersion);
    detail::put_vocab(out, fs.user_vocab);
    detail::put_vocab(out, fs.item_vocab);
    io::put_u64(out, fs.context_vocabs.size());
    for (const auto& v : fs.context_vocabs) detail::put_vocab(out, v);
    io::put_u32(out, static_cast<std::uint32_t>(fs.rating_classes));
    io::put_u32(out, static_cast<std::uint32_t>(fs.t_sh));
    io::put_u64(out, fs.d);
    io::put_u64(out, fs.d_context);
    io::put_u64(out, ds.split_seed);
    for (double r : ds.ratios) io::put_f64(out, r);
    detail::put_examples(out, ds.train);
    detail::put_examples(out, ds.valid);
    detail::put_examples(out, ds.test);
    return out;
}

inline std::pair<FeatureSpace, SplitDataset> deserialize_cache(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 4, kCacheMagic, 4) != 0) {
        throw IoError("not an LPRC cache file");
    }
    io::Reader r(bytes.substr(4));
    const std::uint32_t version = r.u32();
    if (version != kCacheVersion) {
        throw IoError("unsupported LPRC version " + std::to_string(version));
    }
    FeatureSpace fs;
    fs.user_vocab = detail::get_vocab(r);
    fs.item_vocab = detail::get_vocab(r);
    const std::uint64_t nctx = r.u64();
    fs.context_vocabs.clear();
    for (std::uint64_t i = 0; i < nctx; ++i) fs.context_vocabs.push_back(detail::get_vocab(r));
    fs.rating_classes = static_cast<int>(r.u32());
    fs.t_sh = static_cast<int>(r.u32());
    fs.d = r.u64();
    fs.d_context = r.u64();
    SplitDataset ds;
    ds.split_seed = r.u64();
    for (double& x : ds.ratios) x = r.f64();
    ds.train = detail::get_examples(r);
    ds.valid = detail::get_examples(r);
    ds.test = detail::get_examples(r);
    if (!r.at_end()) throw IoError("trailing bytes in LPRC cache");
    return {std::move(fs), std::move(ds)};
}

inline void write_cache(const std::string& path, const FeatureSpace& fs, const SplitDataset& ds) {
    io::write_file(path, serialize_cache(fs, ds));
}

inline std::pair<FeatureSpace, SplitDataset> read_cache(const std::string& path) {
    return deserialize_cache(io::read_file(path));
}

}  // namespace lipreg
