#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pclip/corpus.hpp"
#include "pclip/encoders.hpp"
#include "pclip/mat.hpp"

namespace pclip {

// ---- symmetric InfoNCE over a similarity matrix ----

// Entry (i,j) = dot(v_i, t_j); rows must be unit-normalized so this is the
// cosine similarity.
Mat cosine_similarity_matrix(const Mat& V, const Mat& T);

// Mean over rows of cross-entropy against the diagonal, logits = S/tau,
// stabilized by per-row max subtraction.
double info_nce_i2t(const Mat& S, double tau);
// Same over columns of S.
double info_nce_t2i(const Mat& S, double tau);
double clip_loss(const Mat& S, double tau);

// ---- training ----

struct TrainConfig {
    int batch_size = 32;
    int epochs = 10;
    double learning_rate = 3e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    bool use_llm_backend = true;      // false => minimal mean-pooled backend
    bool use_learnable_prompt = true; // false => soft prompt neither assembled nor trained
    bool clamp_log_tau = false;       // cap |log tau| at ln(100)
};

struct TraceRow {
    int epoch = 0;
    int step = 0;  // global step index, 1-based
    double loss_i2t = 0.0;
    double loss_t2i = 0.0;
    double loss_total = 0.0;
    double tau = 0.0;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    std::vector<double> epoch_loss;  // mean total loss per epoch
    int steps = 0;
};

// Adam over the trainable partition only. Batches are drawn from a seeded
// per-epoch shuffle; the last incomplete batch is dropped. Aborts on a
// non-finite loss, naming the step.
TrainResult train(DualEncoder& model, const std::vector<PairRecord>& records,
                  const TrainConfig& cfg);

// CSV columns {epoch, step, loss_i2t, loss_t2i, loss_total, tau}.
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

// ---- gradient verification ----

struct GradCheckGroup {
    std::string name;
    double max_rel_dev = 0.0;
};

struct GradCheckReport {
    double max_rel_dev = 0.0;
    std::vector<GradCheckGroup> groups;
};

// Central differences on every coordinate of every trainable parameter
// against the analytic gradients of the clip loss on the given batch.
// Relative deviation uses max(|analytic|, |numeric|, 1e-6) in the denominator.
GradCheckReport finite_difference_check(DualEncoder& model,
                                        const std::vector<const PairRecord*>& batch,
                                        double epsilon = 1e-5);

// Loss and analytic gradients for one batch, aligned with
// model.trainable_params(). Shared by the trainer and the checker.
struct LossAndGrads {
    double loss = 0.0;
    double loss_i2t = 0.0;
    double loss_t2i = 0.0;
    std::vector<Mat> grads;
};
LossAndGrads compute_loss_and_grads(DualEncoder& model,
                                    const std::vector<const PairRecord*>& batch);
double compute_loss(DualEncoder& model, const std::vector<const PairRecord*>& batch);

}  // namespace pclip
