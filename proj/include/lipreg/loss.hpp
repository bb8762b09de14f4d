#pragma once

// Objectives: BCE with L2 regularization, K-class CE, the rating-to-click
// aggregation p_hat, and the lambda_r blend. Plain-value forms for metrics
// and tests, tape builders for training.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lipreg/autograd.hpp"
#include "lipreg/error.hpp"
#include "lipreg/tensor.hpp"

namespace lipreg {

inline constexpr double kProbEps = 1e-12;

struct LossConfig {
    double lambda_r = 0.7;    // CE share of the blend
    double lambda_l2 = 0.0;   // L2 coefficient in the BCE term
    int t_sh = 3;
    int rating_classes = 5;   // K

    void validate() const {
        if (lambda_r < 0.0 || lambda_r > 1.0) throw ArgumentError("loss: lambda_r out of [0,1]");
        if (lambda_l2 < 0.0) throw ArgumentError("loss: lambda_l2 must be >= 0");
        if (t_sh < 1 || t_sh > rating_classes - 1) throw ArgumentError("loss: t_sh out of [1, K-1]");
    }
};

// p_hat = sum_{k > t} p_k / (sum_{k <= t} p_k + sum_{k > t} p_k).
// Accepts any nonnegative mass vector; reduces to the tail mass when
// the input is already normalized.
inline double aggregate_click_prob(const std::vector<double>& p, int t_sh) {
    if (t_sh < 1 || static_cast<std::size_t>(t_sh) >= p.size()) {
        throw ArgumentError("aggregate_click_prob: t_sh out of [1, K-1]");
    }
    double pos = 0.0, total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] < 0.0) throw ArgumentError("aggregate_click_prob: negative mass");
        total += p[k];
        if (static_cast<int>(k) + 1 > t_sh) pos += p[k];
    }
    if (total <= 0.0) throw NumericError("aggregate_click_prob: all-zero mass vector");
    return pos / total;
}

inline double l2_penalty(const std::vector<const Tensor*>& weights, double lambda_l2) {
    if (lambda_l2 == 0.0) return 0.0;
    double s = 0.0;
    for (const Tensor* w : weights) {
        for (double v : w->data()) s += v * v;
    }
    return lambda_l2 * s;
}

// Batch-mean BCE plus lambda * sum ||w||^2 over the supplied layer weights.
inline double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                       double lambda_l2 = 0.0,
                       const std::vector<const Tensor*>& reg_weights = {}) {
    if (probs.empty()) throw ArgumentError("bce_loss: empty batch");
    if (probs.size() != labels.size()) throw ArgumentError("bce_loss: batch size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::min(std::max(probs[i], kProbEps), 1.0 - kProbEps);
        s += labels[i] ? std::log(p) : std::log(1.0 - p);
    }
    return -s / static_cast<double>(probs.size()) + l2_penalty(reg_weights, lambda_l2);
}

// Batch-mean categorical CE over one-hot ratings; probs is [B x K] row-major.
inline double ce_loss(const Tensor& class_probs, const std::vector<int>& ratings) {
    if (class_probs.rows() == 0) throw ArgumentError("ce_loss: empty batch");
    if (class_probs.rows() != ratings.size()) throw ArgumentError("ce_loss: batch size mismatch");
    double s = 0.0;
    for (std::size_t b = 0; b < class_probs.rows(); ++b) {
        const int r = ratings[b];
        if (r < 1 || static_cast<std::size_t>(r) > class_probs.cols()) {
            throw ArgumentError("ce_loss: rating out of range");
        }
        double row_sum = 0.0;
        for (std::size_t k = 0; k < class_probs.cols(); ++k) row_sum += class_probs(b, k);
        if (std::fabs(row_sum - 1.0) > 1e-9) throw ArgumentError("ce_loss: probs do not sum to 1");
        s += std::log(std::max(class_probs(b, static_cast<std::size_t>(r - 1)), kProbEps));
    }
    return -s / static_cast<double>(class_probs.rows());
}

// L = lambda_r * CE + (1 - lambda_r) * BCE; p_hat is re-derived from the
// class probabilities rather than trusted from the caller.
inline double combined_loss(const Tensor& class_probs, const std::vector<int>& ratings,
                            const std::vector<int>& labels, const LossConfig& cfg,
                            const std::vector<const Tensor*>& reg_weights = {}) {
    cfg.validate();
    std::vector<double> phat(class_probs.rows());
    std::vector<double> row(class_probs.cols());
    for (std::size_t b = 0; b < class_probs.rows(); ++b) {
        for (std::size_t k = 0; k < class_probs.cols(); ++k) row[k] = class_probs(b, k);
        phat[b] = aggregate_click_prob(row, cfg.t_sh);
    }
    const double ce = ce_loss(class_probs, ratings);
    const double bce = bce_loss(phat, labels, cfg.lambda_l2, reg_weights);
    return cfg.lambda_r * ce + (1.0 - cfg.lambda_r) * bce;
}

// ---------------------------------------------------------------------------
// Tape builders.

// Aggregation on the tape: p_hat = rowsum(p .* mask_pos) / rowsum(p).
inline NodeId build_click_prob(Tape& tape, NodeId class_probs, int t_sh) {
    const Tensor& p = tape.value(class_probs);
    const std::size_t K = p.cols();
    if (t_sh < 1 || static_cast<std::size_t>(t_sh) >= K) {
        throw ArgumentError("build_click_prob: t_sh out of [1, K-1]");
    }
    Tensor mask(p.rows(), K);
    for (std::size_t b = 0; b < p.rows(); ++b) {
        for (std::size_t k = static_cast<std::size_t>(t_sh); k < K; ++k) mask(b, k) = 1.0;
    }
    const NodeId pos = tape.rowsum(tape.mul(class_probs, tape.constant(std::move(mask))));
    return tape.div(pos, tape.rowsum(class_probs));
}

// BCE over a [Bx1] probability column, with the L2 term over reg weight nodes.
inline NodeId build_bce(Tape& tape, NodeId click_prob, const std::vector<int>& labels,
                        double lambda_l2, const std::vector<NodeId>& reg_weights) {
    const Tensor& p = tape.value(click_prob);
    if (p.rows() == 0) throw ArgumentError("build_bce: empty batch");
    if (p.cols() != 1 || p.rows() != labels.size()) throw ArgumentError("build_bce: shape mismatch");
    Tensor y(p.rows(), 1), ny(p.rows(), 1);
    for (std::size_t b = 0; b < p.rows(); ++b) {
        y(b, 0) = labels[b] ? 1.0 : 0.0;
        ny(b, 0) = labels[b] ? 0.0 : 1.0;
    }
    const NodeId log_p = tape.log_clamped(click_prob, kProbEps);
    const NodeId log_np = tape.log_clamped(tape.affine(click_prob, -1.0, 1.0), kProbEps);
    const NodeId terms = tape.add(tape.mul(tape.constant(std::move(y)), log_p),
                                  tape.mul(tape.constant(std::move(ny)), log_np));
    NodeId loss = tape.affine(tape.sum(terms), -1.0 / static_cast<double>(p.rows()), 0.0);
    if (lambda_l2 > 0.0) {
        for (NodeId w : reg_weights) {
            loss = tape.add(loss, tape.affine(tape.sum(tape.mul(w, w)), lambda_l2, 0.0));
        }
    }
    return loss;
}

// CE over [BxK] class probabilities against one-hot ratings.
inline NodeId build_ce(Tape& tape, NodeId class_probs, const std::vector<int>& ratings) {
    const Tensor& p = tape.value(class_probs);
    if (p.rows() == 0) throw ArgumentError("build_ce: empty batch");
    if (p.rows() != ratings.size()) throw ArgumentError("build_ce: batch size mismatch");
    Tensor onehot(p.rows(), p.cols());
    for (std::size_t b = 0; b < p.rows(); ++b) {
        const int r = ratings[b];
        if (r < 1 || static_cast<std::size_t>(r) > p.cols()) {
            throw ArgumentError("build_ce: rating out of range");
        }
        onehot(b, static_cast<std::size_t>(r - 1)) = 1.0;
    }
    const NodeId picked = tape.mul(tape.constant(std::move(onehot)),
                                   tape.log_clamped(class_probs, kProbEps));
    return tape.affine(tape.sum(picked), -1.0 / static_cast<double>(p.rows()), 0.0);
}

// lambda_r * CE + (1 - lambda_r) * BCE(p_hat), p_hat derived on the tape.
inline NodeId build_combined(Tape& tape, NodeId class_probs, const std::vector<int>& ratings,
                             const std::vector<int>& labels, const LossConfig& cfg,
                             const std::vector<NodeId>& reg_weights) {
    cfg.validate();
    const NodeId click = build_click_prob(tape, class_probs, cfg.t_sh);
    const NodeId bce = build_bce(tape, click, labels, cfg.lambda_l2, reg_weights);
    const NodeId ce = build_ce(tape, class_probs, ratings);
    return tape.add(tape.affine(ce, cfg.lambda_r, 0.0),
                    tape.affine(bce, 1.0 - cfg.lambda_r, 0.0));
}

}  // namespace lipreg
