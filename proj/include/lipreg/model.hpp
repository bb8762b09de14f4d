#pragma once

// CTR architectures: shared embedding front end, DCN cross+deep trunk, plain
// MLP trunk, and the binary / rating prediction heads. Plain-vector forward
// paths are used for evaluation and sensitivity probing; the tape builder in
// train.hpp reuses the same parameter layout for training.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "lipreg/autograd.hpp"
#include "lipreg/data.hpp"
#include "lipreg/error.hpp"
#include "lipreg/io.hpp"
#include "lipreg/rng.hpp"
#include "lipreg/tensor.hpp"

namespace lipreg {

enum class Trunk { Dcn, Mlp };
enum class Head { Binary, Rating };

struct ModelConfig {
    Trunk trunk = Trunk::Dcn;
    Head head = Head::Rating;
    std::size_t d = 16;
    std::size_t d_context = 0;
    std::size_t cross_layers = 2;           // L1, DCN only
    std::vector<std::size_t> deep_widths = {64, 32};
    int rating_classes = 5;                 // K, rating head only
    double tau = 1.0;

    void validate() const {
        if (d == 0) throw ArgumentError("model: d must be positive");
        if (deep_widths.empty()) throw ArgumentError("model: need at least one deep layer");
        for (auto w : deep_widths) {
            if (w == 0) throw ArgumentError("model: deep widths must be positive");
        }
        if (trunk == Trunk::Dcn && cross_layers == 0) {
            throw ArgumentError("model: DCN trunk needs cross_layers >= 1");
        }
        if (head == Head::Rating && rating_classes < 2) {
            throw ArgumentError("model: rating head needs K >= 2");
        }
        if (tau <= 0.0) throw ArgumentError("model: tau must be positive");
    }
};

inline std::string trunk_name(Trunk t) { return t == Trunk::Dcn ? "dcn" : "mlp"; }
inline std::string head_name(Head h) { return h == Head::Binary ? "binary" : "rating"; }

struct ParameterSet {
    Tensor user_table;                  // [|U|+1 x d], last row is OOV
    Tensor item_table;                  // [|I|+1 x d]
    std::vector<Tensor> context_tables; // [vocab+1 x d_context] each
    std::vector<Tensor> cross_w;        // [D x 1] each
    std::vector<Tensor> cross_b;        // [1 x D] each
    std::vector<Tensor> deep_w;         // [in x out] each
    std::vector<Tensor> deep_b;         // [1 x out] each
    Tensor head_w;                      // [d1+d2 x 1] binary, [d1+d2 x K] rating

    std::vector<Tensor*> all() {
        std::vector<Tensor*> out = {&user_table, &item_table};
        for (auto& t : context_tables) out.push_back(&t);
        for (auto& t : cross_w) out.push_back(&t);
        for (auto& t : cross_b) out.push_back(&t);
        for (auto& t : deep_w) out.push_back(&t);
        for (auto& t : deep_b) out.push_back(&t);
        out.push_back(&head_w);
        return out;
    }
    std::vector<const Tensor*> all() const {
        auto ts = const_cast<ParameterSet*>(this)->all();
        return {ts.begin(), ts.end()};
    }

    // Layer weights subject to L2 regularization: cross w, deep W, head.
    // Biases and embedding tables are excluded.
    std::vector<const Tensor*> regularized() const {
        std::vector<const Tensor*> out;
        for (const auto& t : cross_w) out.push_back(&t);
        for (const auto& t : deep_w) out.push_back(&t);
        out.push_back(&head_w);
        return out;
    }

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

inline std::size_t trunk_output_dim(const ModelConfig& cfg, const FeatureSpace& fs) {
    const std::size_t deep_out = cfg.deep_widths.back();
    return cfg.trunk == Trunk::Dcn ? fs.input_dim() + deep_out : deep_out;
}

// Embeddings and weights ~ N(0, 0.01^2), biases zero, draw order fixed.
inline ParameterSet init_params(const ModelConfig& cfg, const FeatureSpace& fs,
                                std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto draw = [&rng](std::size_t r, std::size_t c) {
        Tensor t(r, c);
        for (double& v : t.data()) v = rng.normal(0.0, 0.01);
        return t;
    };
    ParameterSet p;
    p.user_table = draw(fs.user_vocab.table_rows(), fs.d);
    p.item_table = draw(fs.item_vocab.table_rows(), fs.d);
    for (const auto& v : fs.context_vocabs) {
        p.context_tables.push_back(draw(v.table_rows(), fs.d_context));
    }
    const std::size_t D = fs.input_dim();
    if (cfg.trunk == Trunk::Dcn) {
        for (std::size_t l = 0; l < cfg.cross_layers; ++l) {
            p.cross_w.push_back(draw(D, 1));
            p.cross_b.emplace_back(1, D);
        }
    }
    std::size_t in = D;
    for (std::size_t w : cfg.deep_widths) {
        p.deep_w.push_back(draw(in, w));
        p.deep_b.emplace_back(1, w);
        in = w;
    }
    const std::size_t head_in = trunk_output_dim(cfg, fs);
    const std::size_t head_out = cfg.head == Head::Binary
                                     ? 1
                                     : static_cast<std::size_t>(cfg.rating_classes);
    p.head_w = draw(head_in, head_out);
    return p;
}

// ---------------------------------------------------------------------------
// Plain-vector forward path.

using VecD = std::vector<double>;

// z_ij = [z_i || z_j || z^c], gathered from the embedding tables.
inline VecD encode_input(const ParameterSet& p, std::size_t user_idx, std::size_t item_idx,
                         const std::vector<std::uint32_t>& context_idx) {
    if (user_idx >= p.user_table.rows() || item_idx >= p.item_table.rows() ||
        context_idx.size() != p.context_tables.size()) {
        throw ArgumentError("encode_input: index out of bounds");
    }
    VecD z;
    z.reserve(p.user_table.cols() + p.item_table.cols());
    for (std::size_t j = 0; j < p.user_table.cols(); ++j) z.push_back(p.user_table(user_idx, j));
    for (std::size_t j = 0; j < p.item_table.cols(); ++j) z.push_back(p.item_table(item_idx, j));
    for (std::size_t c = 0; c < context_idx.size(); ++c) {
        const Tensor& t = p.context_tables[c];
        if (context_idx[c] >= t.rows()) throw ArgumentError("encode_input: context index out of bounds");
        for (std::size_t j = 0; j < t.cols(); ++j) z.push_back(t(context_idx[c], j));
    }
    return z;
}

// z^{(l+1)} = z^(0) (z^(l)^T w) + b + z^(l)
inline VecD cross_layer(const VecD& z0, const VecD& zl, const Tensor& w, const Tensor& b) {
    const std::size_t D = z0.size();
    if (zl.size() != D || w.size() != D || b.size() != D) {
        throw ArgumentError("cross_layer: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i) s += zl[i] * w[i];
    VecD out(D);
    for (std::size_t i = 0; i < D; ++i) out[i] = z0[i] * s + b[i] + zl[i];
    return out;
}

// h^{(l+1)} = ReLU(W h + b); W stored as [in x out].
inline VecD deep_layer(const VecD& h, const Tensor& w, const Tensor& b) {
    if (h.size() != w.rows() || b.size() != w.cols()) {
        throw ArgumentError("deep_layer: shape mismatch");
    }
    VecD out(w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double hi = h[i];
        if (hi == 0.0) continue;
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += hi * w(i, j);
    }
    for (std::size_t j = 0; j < w.cols(); ++j) {
        out[j] += b(0, j);
        if (out[j] < 0.0) out[j] = 0.0;
    }
    return out;
}

// Trunk output: [z_cross || h_deep] for DCN, h_deep for MLP.
inline VecD trunk_forward(const ParameterSet& p, const ModelConfig& cfg, const VecD& z) {
    VecD deep = z;
    for (std::size_t l = 0; l < p.deep_w.size(); ++l) {
        deep = deep_layer(deep, p.deep_w[l], p.deep_b[l]);
    }
    if (cfg.trunk == Trunk::Mlp) return deep;
    VecD zc = z;
    for (std::size_t l = 0; l < p.cross_w.size(); ++l) {
        zc = cross_layer(z, zc, p.cross_w[l], p.cross_b[l]);
    }
    zc.insert(zc.end(), deep.begin(), deep.end());
    return zc;
}

// p = sigma(trunk . w_logits); no head bias, following the prediction layer.
inline double binary_head(const VecD& trunk_out, const Tensor& w_logits) {
    if (trunk_out.size() != w_logits.rows() || w_logits.cols() != 1) {
        throw ArgumentError("binary_head: shape mismatch");
    }
    double logit = 0.0;
    for (std::size_t i = 0; i < trunk_out.size(); ++i) logit += trunk_out[i] * w_logits[i];
    return stable_sigmoid(logit);
}

// f = W_head . trunk, p = softmax(f / tau) with max shift.
inline void rating_head(const VecD& trunk_out, const Tensor& w_head, double tau, VecD& logits,
                        VecD& probs) {
    if (trunk_out.size() != w_head.rows()) throw ArgumentError("rating_head: shape mismatch");
    if (tau <= 0.0) throw ArgumentError("rating_head: tau must be positive");
    const std::size_t K = w_head.cols();
    logits.assign(K, 0.0);
    for (std::size_t i = 0; i < w_head.rows(); ++i) {
        const double t = trunk_out[i];
        if (t == 0.0) continue;
        for (std::size_t k = 0; k < K; ++k) logits[k] += t * w_head(i, k);
    }
    probs.assign(K, 0.0);
    double mx = logits[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        probs[k] = std::exp((logits[k] - mx) / tau);
        denom += probs[k];
    }
    for (std::size_t k = 0; k < K; ++k) probs[k] /= denom;
}

// ---------------------------------------------------------------------------
// "LPRM" checkpoint: config echo + raw tensors in declaration order.

inline constexpr char kCheckpointMagic[4] = {'L', 'P', 'R', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Canonical config+shape echo; the checkpoint hash is FNV-1a over this.
inline std::string model_shape_echo(const ModelConfig& cfg, const ParameterSet& p) {
    std::ostringstream os;
    os << "trunk=" << trunk_name(cfg.trunk) << ";head=" << head_name(cfg.head)
       << ";d=" << cfg.d << ";d_context=" << cfg.d_context
       << ";cross_layers=" << cfg.cross_layers << ";deep=";
    for (std::size_t i = 0; i < cfg.deep_widths.size(); ++i) {
        if (i) os << ",";
        os << cfg.deep_widths[i];
    }
    os << ";K=" << cfg.rating_classes << ";tau=" << cfg.tau << ";tables=";
    for (const Tensor* t : p.all()) os << t->rows() << "x" << t->cols() << ",";
    return os.str();
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string serialize_checkpoint(const ModelConfig& cfg, const ParameterSet& p) {
    std::string out(kCheckpointMagic, 4);
    io::put_u32(out, kCheckpointVersion);
    const std::string echo = model_shape_echo(cfg, p);
    io::put_u64(out, fnv1a(echo));
    io::put_string(out, echo);
    std::string tensors;
    const auto ts = p.all();
    io::put_u64(tensors, ts.size());
    for (const Tensor* t : ts) io::put_tensor(tensors, *t);
    io::put_string(out, tensors);
    return out;
}

// Loads parameters; rejects checkpoints whose config hash does not match the
// shapes implied by (cfg, fs).
inline ParameterSet deserialize_checkpoint(const std::string& bytes, const ModelConfig& cfg,
                                           const FeatureSpace& fs) {
    if (bytes.size() < 8 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
        throw IoError("not an LPRM checkpoint");
    }
    io::Reader r(bytes.substr(4));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported LPRM version " + std::to_string(version));
    }
    const std::uint64_t hash = r.u64();
    const std::string echo = r.str();
    if (fnv1a(echo) != hash) throw IoError("LPRM checkpoint hash mismatch");
    ParameterSet expected = init_params(cfg, fs, 0);
    if (echo != model_shape_echo(cfg, expected)) {
        throw IoError("LPRM checkpoint config mismatch: " + echo);
    }
    io::Reader tensors(r.str());
    const std::uint64_t n = tensors.u64();
    auto dst = expected.all();
    if (n != dst.size()) throw IoError("LPRM tensor count mismatch");
    for (Tensor* t : dst) {
        Tensor loaded = tensors.tensor();
        if (loaded.rows() != t->rows() || loaded.cols() != t->cols()) {
            throw IoError("LPRM tensor shape mismatch");
        }
        *t = std::move(loaded);
    }
    return expected;
}

inline void write_checkpoint(const std::string& path, const ModelConfig& cfg,
                             const ParameterSet& p) {
    io::write_file(path, serialize_checkpoint(cfg, p));
}

inline ParameterSet read_checkpoint(const std::string& path, const ModelConfig& cfg,
                                    const FeatureSpace& fs) {
    return deserialize_checkpoint(io::read_file(path), cfg, fs);
}

}  // namespace lipreg
