#pragma once

// Optimization loop (AdamW with decoupled decay), evaluation against the
// metrics protocol, and the experiment drivers: perturbation robustness and
// the lambda_r sweep.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lipreg/autograd.hpp"
#include "lipreg/data.hpp"
#include "lipreg/error.hpp"
#include "lipreg/loss.hpp"
#include "lipreg/metrics.hpp"
#include "lipreg/model.hpp"
#include "lipreg/rng.hpp"

namespace lipreg {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 1024;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;
    std::size_t patience = 5;             // early stop on validation AUC
    std::size_t spot_check_coords = 16;   // finite-diff guard on the first batch

    void validate() const {
        if (learning_rate <= 0.0) throw ArgumentError("train: learning_rate must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ArgumentError("train: betas must lie in [0, 1)");
        }
        if (batch_size == 0) throw ArgumentError("train: batch_size must be >= 1");
        if (eps <= 0.0) throw ArgumentError("train: eps must be positive");
        if (weight_decay < 0.0) throw ArgumentError("train: weight_decay must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// AdamW

struct AdamWState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
};

inline AdamWState make_adamw_state(const ParameterSet& params) {
    AdamWState s;
    for (const Tensor* t : params.all()) {
        s.m.emplace_back(t->rows(), t->cols());
        s.v.emplace_back(t->rows(), t->cols());
    }
    return s;
}

// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
// Decay is decoupled: it never enters the moment estimates.
inline void adamw_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamWState& state,
                       const TrainConfig& cfg) {
    auto ts = params.all();
    if (grads.size() != ts.size()) throw ArgumentError("adamw_step: gradient count mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < ts.size(); ++t) {
        Tensor& theta = *ts[t];
        const Tensor& g = grads[t];
        if (!theta.same_shape(g)) throw ArgumentError("adamw_step: gradient shape mismatch");
        Tensor& m = state.m[t];
        Tensor& v = state.v[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps) +
                        cfg.learning_rate * cfg.weight_decay * theta[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Batched tape forward shared by training and the gradient spot check.

struct TapeParams {
    std::vector<NodeId> nodes;  // aligned with ParameterSet::all()
    NodeId user = 0, item = 0;
    std::vector<NodeId> context;
    std::vector<NodeId> cross_w, cross_b, deep_w, deep_b;
    NodeId head = 0;

    std::vector<NodeId> regularized() const {
        std::vector<NodeId> out = cross_w;
        out.insert(out.end(), deep_w.begin(), deep_w.end());
        out.push_back(head);
        return out;
    }
};

inline TapeParams register_params(Tape& tape, const ParameterSet& p) {
    TapeParams tp;
    tp.user = tape.parameter(p.user_table);
    tp.item = tape.parameter(p.item_table);
    tp.nodes = {tp.user, tp.item};
    for (const auto& t : p.context_tables) {
        tp.context.push_back(tape.parameter(t));
        tp.nodes.push_back(tp.context.back());
    }
    for (const auto& t : p.cross_w) {
        tp.cross_w.push_back(tape.parameter(t));
        tp.nodes.push_back(tp.cross_w.back());
    }
    for (const auto& t : p.cross_b) {
        tp.cross_b.push_back(tape.parameter(t));
        tp.nodes.push_back(tp.cross_b.back());
    }
    for (const auto& t : p.deep_w) {
        tp.deep_w.push_back(tape.parameter(t));
        tp.nodes.push_back(tp.deep_w.back());
    }
    for (const auto& t : p.deep_b) {
        tp.deep_b.push_back(tape.parameter(t));
        tp.nodes.push_back(tp.deep_b.back());
    }
    tp.head = tape.parameter(p.head_w);
    tp.nodes.push_back(tp.head);
    return tp;
}

// Forward through embeddings + trunk + head for a contiguous batch of
// examples. Returns the head output node: [Bx1] click probabilities for the
// binary head, [BxK] class probabilities for the rating head.
inline NodeId build_forward(Tape& tape, const TapeParams& tp, const ModelConfig& cfg,
                            const Example* batch, std::size_t batch_size) {
    std::vector<std::size_t> users(batch_size), items(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        users[b] = batch[b].user;
        items[b] = batch[b].item;
    }
    NodeId z = tape.concat_cols(tape.gather(tp.user, std::move(users)),
                                tape.gather(tp.item, std::move(items)));
    for (std::size_t c = 0; c < tp.context.size(); ++c) {
        std::vector<std::size_t> idx(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) idx[b] = batch[b].context[c];
        z = tape.concat_cols(z, tape.gather(tp.context[c], std::move(idx)));
    }
    NodeId deep = z;
    for (std::size_t l = 0; l < tp.deep_w.size(); ++l) {
        deep = tape.relu(tape.add_rowvec(tape.matmul(deep, tp.deep_w[l]), tp.deep_b[l]));
    }
    NodeId trunk = deep;
    if (cfg.trunk == Trunk::Dcn) {
        NodeId zc = z;
        for (std::size_t l = 0; l < tp.cross_w.size(); ++l) {
            const NodeId s = tape.matmul(zc, tp.cross_w[l]);
            zc = tape.add(tape.add_rowvec(tape.col_scale(z, s), tp.cross_b[l]), zc);
        }
        trunk = tape.concat_cols(zc, deep);
    }
    const NodeId logits = tape.matmul(trunk, tp.head);
    return cfg.head == Head::Binary ? tape.sigmoid(logits)
                                    : tape.softmax_rows(logits, cfg.tau);
}

// Full batch loss on a fresh tape; out_grads (when non-null) receives per-
// parameter gradients aligned with ParameterSet::all().
inline double batch_loss(const ParameterSet& params, const ModelConfig& cfg,
                         const LossConfig& loss_cfg, const Example* batch,
                         std::size_t batch_size, std::vector<Tensor>* out_grads) {
    Tape tape;
    const TapeParams tp = register_params(tape, params);
    const NodeId probs = build_forward(tape, tp, cfg, batch, batch_size);
    std::vector<int> labels(batch_size), ratings(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        labels[b] = batch[b].label;
        ratings[b] = batch[b].rating;
    }
    NodeId loss;
    if (cfg.head == Head::Binary) {
        loss = build_bce(tape, probs, labels, loss_cfg.lambda_l2, tp.regularized());
    } else {
        loss = build_combined(tape, probs, ratings, labels, loss_cfg, tp.regularized());
    }
    if (out_grads) {
        tape.backward(loss);
        out_grads->clear();
        for (NodeId id : tp.nodes) out_grads->push_back(tape.grad(id));
    }
    return tape.value(loss)[0];
}

// ---------------------------------------------------------------------------
// Evaluation.

// Click score for one example: sigmoid head output, or the aggregated
// above-threshold probability mass from the rating head.
inline double click_score(const ParameterSet& params, const ModelConfig& cfg, int t_sh,
                          std::size_t user, std::size_t item,
                          const std::vector<std::uint32_t>& context) {
    const VecD z = encode_input(params, user, item, context);
    const VecD trunk = trunk_forward(params, cfg, z);
    if (cfg.head == Head::Binary) {
        return binary_head(trunk, params.head_w);
    }
    VecD logits, probs;
    rating_head(trunk, params.head_w, cfg.tau, logits, probs);
    return aggregate_click_prob(probs, t_sh);
}

inline std::vector<double> click_scores(const ParameterSet& params, const ModelConfig& cfg,
                                        int t_sh, const std::vector<Example>& split) {
    std::vector<double> out;
    out.reserve(split.size());
    for (const auto& ex : split) {
        out.push_back(click_score(params, cfg, t_sh, ex.user, ex.item, ex.context));
    }
    return out;
}

// AUC/logloss on the split's click probabilities plus, when requested, the
// full-candidate ranking metrics against the training positives.
inline MetricsReport evaluate_model(const ParameterSet& params, const ModelConfig& cfg,
                                    const FeatureSpace& fs, const std::vector<Example>& split,
                                    const std::vector<Example>& train_split,
                                    bool with_ranking = true) {
    if (split.empty()) throw ArgumentError("evaluate_model: empty split");
    MetricsReport report;
    const std::vector<double> scores = click_scores(params, cfg, fs.t_sh, split);
    std::vector<int> labels;
    labels.reserve(split.size());
    for (const auto& ex : split) labels.push_back(ex.label);
    report.auc = roc_auc(scores, labels);
    report.logloss = logloss(scores, labels);
    if (!with_ranking) return report;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> train_pos, test_pos;
    for (const auto& ex : train_split) {
        if (ex.label) train_pos.emplace_back(ex.user, ex.item);
    }
    for (const auto& ex : split) {
        if (ex.label) test_pos.emplace_back(ex.user, ex.item);
    }
    // Ranking candidates carry no interaction context; context fields score
    // through their OOV rows.
    std::vector<std::uint32_t> oov_context;
    for (const auto& v : fs.context_vocabs) {
        oov_context.push_back(static_cast<std::uint32_t>(v.oov_index()));
    }
    const auto tasks = build_ranking_tasks(train_pos, test_pos, fs.item_vocab.size(),
                                           &report.excluded_users);
    evaluate_ranking(tasks,
                     [&](std::uint32_t user, std::uint32_t item) {
                         return click_score(params, cfg, fs.t_sh, user, item, oov_context);
                     },
                     report);
    return report;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_auc = 0.0;
    double valid_logloss = 0.0;
    double user_grad_norm = 0.0;  // mean over batches of the table-grad L2 norm
    double item_grad_norm = 0.0;
};

struct RunLog {
    std::vector<EpochLog> epochs;
    double user_weight_norm = 0.0;  // post-training Frobenius norms
    double item_weight_norm = 0.0;
    std::size_t best_epoch = 0;
    // Wall-clock timings live here but are serialized separately so that
    // the JSON-lines log stays bit-reproducible across runs.
    double mean_epoch_seconds = 0.0;
    double total_train_seconds = 0.0;
    double eval_seconds = 0.0;
};

inline std::pair<double, double> log_norms(const ParameterSet& params) {
    return {params.user_table.frobenius_norm(), params.item_table.frobenius_norm()};
}

// Timing-free JSON-lines serialization of a RunLog.
inline std::string run_log_jsonl(const RunLog& log) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& e : log.epochs) {
        os << "{\"epoch\":" << e.epoch << ",\"train_loss\":" << e.train_loss
           << ",\"valid_auc\":" << e.valid_auc << ",\"valid_logloss\":" << e.valid_logloss
           << ",\"user_grad_norm\":" << e.user_grad_norm
           << ",\"item_grad_norm\":" << e.item_grad_norm << "}\n";
    }
    os << "{\"user_weight_norm\":" << log.user_weight_norm
       << ",\"item_weight_norm\":" << log.item_weight_norm
       << ",\"best_epoch\":" << log.best_epoch << "}\n";
    return os.str();
}

namespace detail {

// Finite-difference guard over a random subset of coordinates of the first
// batch's gradient. This is a divergence detector for structural bugs (wrong
// sign or scale), not a precision check: at small init the ReLU preactivations
// are comparable to any workable step size, so most probe intervals straddle
// kinks where central differences are simply invalid. A step is trusted only
// when the loss difference rises above the rounding granularity of the loss
// (otherwise both one-sided differences quantize to the same meaningless
// value) and the forward and backward one-sided differences agree (no kink
// inside [x-h, x+h]); a coordinate with no trustworthy step at any size is
// skipped, as are coordinates whose analytic gradient is below 1e-6: at this
// init scale kink contamination alone reaches ~1e-7 in the central
// difference, so smaller gradients cannot be confirmed or refuted (and are
// too small to destabilize an optimizer step). A trusted probe disagreeing
// with the analytic value is a real gradient bug. Precision verification
// lives in the dedicated finite-difference checks, which run at healthy
// parameter scales.
inline void spot_check_gradients(const ParameterSet& params, const ModelConfig& cfg,
                                 const LossConfig& loss_cfg, const Example* batch,
                                 std::size_t batch_size, const std::vector<Tensor>& analytic,
                                 std::size_t n_coords, std::uint64_t seed) {
    const double h = 1e-5;
    const double rel_tol = 1e-2;
    ParameterSet probe = params;
    auto ts = probe.all();
    Rng rng(seed);
    const double l0 = batch_loss(probe, cfg, loss_cfg, batch, batch_size, nullptr);
    auto loss_at = [&]() { return batch_loss(probe, cfg, loss_cfg, batch, batch_size, nullptr); };
    for (std::size_t c = 0; c < n_coords; ++c) {
        const std::size_t t = static_cast<std::size_t>(rng.uniform_index(ts.size()));
        if (ts[t]->size() == 0) continue;
        const std::size_t i = static_cast<std::size_t>(rng.uniform_index(ts[t]->size()));
        const double a = analytic[t][i];
        if (std::fabs(a) < 1e-6) continue;
        bool ok = false;
        bool smooth_somewhere = false;
        for (double step : {h, h / 16.0, h / 256.0, 16.0 * h}) {
            const double saved = (*ts[t])[i];
            (*ts[t])[i] = saved + step;
            const double lp = loss_at();
            (*ts[t])[i] = saved - step;
            const double lm = loss_at();
            (*ts[t])[i] = saved;
            const double resolution =
                64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(l0));
            if (std::fabs(lp - lm) <= resolution) continue;  // below float resolution
            const double fwd = (lp - l0) / step;
            const double bwd = (l0 - lm) / step;
            const double side_scale = std::max({std::fabs(fwd), std::fabs(bwd), 1e-8});
            // The sides must agree an order of magnitude tighter than the
            // acceptance tolerance: mild agreement can mask a kink that still
            // shifts the central difference by more than rel_tol.
            if (std::fabs(fwd - bwd) / side_scale > 0.1 * rel_tol) continue;  // kink in interval
            smooth_somewhere = true;
            const double num = (lp - lm) / (2.0 * step);
            const double denom = std::max({std::fabs(a), std::fabs(num), 1e-8});
            if (std::fabs(a - num) / denom <= rel_tol || std::fabs(a - num) <= 1e-9) {
                ok = true;
                break;
            }
        }
        if (smooth_somewhere && !ok) {
            throw NumericError("gradient spot check failed at tensor " + std::to_string(t) +
                               " coord " + std::to_string(i));
        }
    }
}

}  // namespace detail

inline std::pair<ParameterSet, RunLog> run_training(const SplitDataset& ds,
                                                    const FeatureSpace& fs,
                                                    const ModelConfig& model_cfg,
                                                    const LossConfig& loss_cfg,
                                                    const TrainConfig& train_cfg) {
    model_cfg.validate();
    loss_cfg.validate();
    train_cfg.validate();
    if (ds.train.empty()) throw ArgumentError("run_training: empty train split");

    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    ParameterSet params = init_params(model_cfg, fs, train_cfg.init_seed);
    AdamWState state = make_adamw_state(params);
    RunLog log;
    Rng shuffle_rng(train_cfg.train_seed);
    std::vector<std::size_t> order(ds.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Example> batch_buf;
    std::vector<Tensor> grads;

    double best_auc = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;
    std::optional<ParameterSet> best_params;
    std::vector<int> valid_labels;
    for (const auto& ex : ds.valid) valid_labels.push_back(ex.label);

    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        EpochLog elog;
        elog.epoch = epoch;
        double loss_sum = 0.0;
        double user_norm_sum = 0.0, item_norm_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            const std::size_t bsz = std::min(train_cfg.batch_size, order.size() - start);
            batch_buf.clear();
            for (std::size_t i = 0; i < bsz; ++i) batch_buf.push_back(ds.train[order[start + i]]);
            double loss;
            try {
                loss = batch_loss(params, model_cfg, loss_cfg, batch_buf.data(), bsz, &grads);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(n_batches) + ": " + e.what());
            }
            if (!std::isfinite(loss)) {
                throw NumericError("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch) + " batch " + std::to_string(n_batches));
            }
            if (epoch == 0 && n_batches == 0 && train_cfg.spot_check_coords > 0) {
                detail::spot_check_gradients(params, model_cfg, loss_cfg, batch_buf.data(), bsz,
                                             grads, train_cfg.spot_check_coords,
                                             train_cfg.train_seed ^ 0x9e3779b97f4a7c15ull);
            }
            loss_sum += loss;
            user_norm_sum += grads[0].frobenius_norm();
            item_norm_sum += grads[1].frobenius_norm();
            adamw_step(params, grads, state, train_cfg);
            ++n_batches;
        }
        elog.train_loss = loss_sum / static_cast<double>(n_batches);
        elog.user_grad_norm = user_norm_sum / static_cast<double>(n_batches);
        elog.item_grad_norm = item_norm_sum / static_cast<double>(n_batches);

        if (!ds.valid.empty()) {
            const auto scores = click_scores(params, model_cfg, fs.t_sh, ds.valid);
            try {
                elog.valid_auc = roc_auc(scores, valid_labels);
            } catch (const UndefinedMetricError&) {
                elog.valid_auc = 0.5;
            }
            elog.valid_logloss = logloss(scores, valid_labels);
        }
        log.epochs.push_back(elog);

        if (ds.valid.empty() || elog.valid_auc > best_auc) {
            best_auc = elog.valid_auc;
            best_epoch = epoch;
            best_params = params;
            since_best = 0;
        } else if (++since_best >= train_cfg.patience) {
            break;
        }
    }
    if (best_params) params = std::move(*best_params);
    log.best_epoch = best_epoch;
    const auto [un, in] = log_norms(params);
    log.user_weight_norm = un;
    log.item_weight_norm = in;
    log.total_train_seconds =
        std::chrono::duration<double>(clock::now() - t_start).count();
    if (!log.epochs.empty()) {
        log.mean_epoch_seconds = log.total_train_seconds / static_cast<double>(log.epochs.size());
    }
    return {std::move(params), std::move(log)};
}

// ---------------------------------------------------------------------------
// Experiments.

struct PerturbationRow {
    double sigma = 0.0;
    double mean_auc = 0.0;      // fraction
    double mean_logloss = 0.0;  // natural-log units
};

// Gaussian noise on the embedding tables of a cloned parameter set, averaged
// over n_seeds. The sigma = 0 row bypasses the noise path entirely and must
// reproduce the unperturbed evaluation bit-for-bit.
inline std::vector<PerturbationRow> perturbation_experiment(
    const ParameterSet& params, const ModelConfig& cfg, const FeatureSpace& fs,
    const std::vector<Example>& test_split, const std::vector<double>& sigmas,
    std::size_t n_seeds, std::uint64_t base_seed) {
    if (n_seeds == 0) throw ArgumentError("perturbation_experiment: n_seeds must be >= 1");
    std::vector<int> labels;
    for (const auto& ex : test_split) labels.push_back(ex.label);
    std::vector<PerturbationRow> rows;
    for (double sigma : sigmas) {
        if (sigma < 0.0) throw ArgumentError("perturbation_experiment: sigma must be >= 0");
        PerturbationRow row;
        row.sigma = sigma;
        const std::size_t reps = (sigma == 0.0) ? 1 : n_seeds;
        for (std::size_t s = 0; s < reps; ++s) {
            ParameterSet noisy = params;
            if (sigma > 0.0) {
                Rng rng(base_seed + s * 1000003 + fnv1a(std::to_string(sigma)));
                for (Tensor* table : {&noisy.user_table, &noisy.item_table}) {
                    for (double& v : table->data()) v += rng.normal(0.0, sigma);
                }
                for (auto& table : noisy.context_tables) {
                    for (double& v : table.data()) v += rng.normal(0.0, sigma);
                }
            }
            const auto scores = click_scores(noisy, cfg, fs.t_sh, test_split);
            row.mean_auc += roc_auc(scores, labels);
            row.mean_logloss += logloss(scores, labels);
        }
        row.mean_auc /= static_cast<double>(reps);
        row.mean_logloss /= static_cast<double>(reps);
        rows.push_back(row);
    }
    return rows;
}

struct SweepRow {
    double lambda_r = 0.0;
    double mean_auc = 0.0;  // mean test AUC over seeds, fraction
    std::vector<double> per_seed_auc;
};

// One training run per (lambda, seed); seeds are the fixed set
// {0, ..., n_seeds-1} offset from the base config so duplicate lambdas
// produce identical rows.
inline std::vector<SweepRow> lambda_sweep(const SplitDataset& ds, const FeatureSpace& fs,
                                          const ModelConfig& model_cfg,
                                          const LossConfig& base_loss,
                                          const TrainConfig& base_train,
                                          const std::vector<double>& lambdas,
                                          std::size_t n_seeds = 5) {
    std::vector<SweepRow> rows;
    for (double lambda : lambdas) {
        if (lambda < 0.0 || lambda > 1.0) throw ArgumentError("lambda_sweep: lambda out of [0,1]");
        SweepRow row;
        row.lambda_r = lambda;
        LossConfig loss_cfg = base_loss;
        loss_cfg.lambda_r = lambda;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            TrainConfig tc = base_train;
            tc.init_seed = base_train.init_seed + s;
            tc.train_seed = base_train.train_seed + s;
            auto [params, log] = run_training(ds, fs, model_cfg, loss_cfg, tc);
            const auto report = evaluate_model(params, model_cfg, fs, ds.test, ds.train,
                                               /*with_ranking=*/false);
            row.per_seed_auc.push_back(report.auc);
            row.mean_auc += report.auc;
        }
        row.mean_auc /= static_cast<double>(n_seeds);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace lipreg
