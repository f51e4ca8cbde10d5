#include "pclip/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace pclip {

Mat cosine_similarity_matrix(const Mat& V, const Mat& T) {
    if (V.rows != T.rows || V.cols != T.cols)
        throw std::runtime_error("cosine_similarity_matrix: shape mismatch");
    if (V.rows == 0) throw std::runtime_error("cosine_similarity_matrix: empty input");
    auto check_unit = [](const Mat& m, const char* side) {
        for (int r = 0; r < m.rows; ++r) {
            double ss = 0.0;
            for (int c = 0; c < m.cols; ++c) ss += m.at(r, c) * m.at(r, c);
            if (std::abs(std::sqrt(ss) - 1.0) > 1e-6)
                throw std::runtime_error(std::string("cosine_similarity_matrix: ") + side +
                                         " row " + std::to_string(r) + " is not unit-normalized");
        }
    };
    check_unit(V, "V");
    check_unit(T, "T");
    Mat S(V.rows, T.rows);
    for (int i = 0; i < V.rows; ++i)
        for (int j = 0; j < T.rows; ++j) {
            double acc = 0.0;
            for (int c = 0; c < V.cols; ++c) acc += V.at(i, c) * T.at(j, c);
            S.at(i, j) = acc;
        }
    return S;
}

static void check_loss_inputs(const Mat& S, double tau) {
    if (S.rows != S.cols || S.rows < 1)
        throw std::runtime_error("info_nce: similarity matrix must be square and nonempty");
    if (!(tau > 0.0)) throw std::runtime_error("info_nce: tau must be positive");
    if (!all_finite(S)) throw std::runtime_error("info_nce: non-finite similarity entries");
}

double info_nce_i2t(const Mat& S, double tau) {
    check_loss_inputs(S, tau);
    int n = S.rows;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = S.at(i, 0) / tau;
        for (int j = 1; j < n; ++j) mx = std::max(mx, S.at(i, j) / tau);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(S.at(i, j) / tau - mx);
        acc += std::log(z) + mx - S.at(i, i) / tau;
    }
    return acc / n;
}

double info_nce_t2i(const Mat& S, double tau) {
    check_loss_inputs(S, tau);
    int n = S.rows;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = S.at(0, i) / tau;
        for (int j = 1; j < n; ++j) mx = std::max(mx, S.at(j, i) / tau);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(S.at(j, i) / tau - mx);
        acc += std::log(z) + mx - S.at(i, i) / tau;
    }
    return acc / n;
}

double clip_loss(const Mat& S, double tau) {
    return info_nce_i2t(S, tau) + info_nce_t2i(S, tau);
}

// grads aligned with model.trainable_params(): prompt (if enabled),
// head w1/b1/w2/b2, image w1/b1/w2/b2, log_tau.
static std::vector<Graph::Id> trainable_node_ids(const DualEncoder::LossNodes& nodes,
                                                 bool prompt_enabled) {
    std::vector<Graph::Id> ids;
    if (prompt_enabled) ids.push_back(nodes.prompt);
    for (Graph::Id id : {nodes.head.w1, nodes.head.b1, nodes.head.w2, nodes.head.b2,
                         nodes.image.w1, nodes.image.b1, nodes.image.w2, nodes.image.b2})
        ids.push_back(id);
    ids.push_back(nodes.log_tau);
    return ids;
}

LossAndGrads compute_loss_and_grads(DualEncoder& model,
                                    const std::vector<const PairRecord*>& batch) {
    Graph g;
    auto nodes = model.build_clip_loss(g, batch);
    g.backward(nodes.loss);
    LossAndGrads out;
    out.loss = g.val(nodes.loss).at(0, 0);
    out.loss_i2t = g.val(nodes.loss_i2t).at(0, 0);
    out.loss_t2i = g.val(nodes.loss_t2i).at(0, 0);
    for (Graph::Id id : trainable_node_ids(nodes, model.config().use_learnable_prompt)) {
        Mat grad = g.grad(id);
        if (grad.size() == 0) grad = Mat(g.val(id).rows, g.val(id).cols);
        out.grads.push_back(std::move(grad));
    }
    return out;
}

double compute_loss(DualEncoder& model, const std::vector<const PairRecord*>& batch) {
    Graph g;
    auto nodes = model.build_clip_loss(g, batch);
    return g.val(nodes.loss).at(0, 0);
}

namespace {

struct AdamState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    long t = 0;
};

void adam_step(std::vector<Mat*>& params, const std::vector<Mat>& grads, AdamState& state,
               const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (Mat* p : params) {
            state.m.emplace_back(p->rows, p->cols);
            state.v.emplace_back(p->rows, p->cols);
        }
    }
    ++state.t;
    double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t k = 0; k < params.size(); ++k) {
        Mat& p = *params[k];
        const Mat& grad = grads[k];
        Mat& m = state.m[k];
        Mat& v = state.v[k];
        for (size_t i = 0; i < p.size(); ++i) {
            double gi = grad.a[i];
            m.a[i] = b1 * m.a[i] + (1.0 - b1) * gi;
            v.a[i] = b2 * v.a[i] + (1.0 - b2) * gi * gi;
            double mh = m.a[i] / bc1;
            double vh = v.a[i] / bc2;
            p.a[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    }
}

}  // namespace

TrainResult train(DualEncoder& model, const std::vector<PairRecord>& records,
                  const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
    if (cfg.epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
    size_t n_batches = records.size() / static_cast<size_t>(cfg.batch_size);
    if (n_batches == 0)
        throw std::runtime_error("train: need at least one full batch (" +
                                 std::to_string(records.size()) + " records, batch size " +
                                 std::to_string(cfg.batch_size) + ")");
    if (model.config().use_learnable_prompt != cfg.use_learnable_prompt)
        throw std::runtime_error("train: model and config disagree on use_learnable_prompt");

    const double log_tau_cap = std::log(100.0);
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(cfg.seed + 0x7a11ULL);
    auto params = model.trainable_params();
    AdamState adam;
    TrainResult result;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_acc = 0.0;
        for (size_t b = 0; b < n_batches; ++b) {
            std::vector<const PairRecord*> batch;
            batch.reserve(cfg.batch_size);
            for (int i = 0; i < cfg.batch_size; ++i)
                batch.push_back(&records[order[b * cfg.batch_size + i]]);

            auto lg = compute_loss_and_grads(model, batch);
            int step = result.steps + 1;
            if (!std::isfinite(lg.loss))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
            adam_step(params, lg.grads, adam, cfg);
            if (cfg.clamp_log_tau) {
                double& lt = model.log_tau_param().at(0, 0);
                lt = std::clamp(lt, -log_tau_cap, log_tau_cap);
            }
            ++result.steps;
            result.trace.push_back({epoch, step, lg.loss_i2t, lg.loss_t2i, lg.loss, model.tau()});
            epoch_acc += lg.loss;
        }
        result.epoch_loss.push_back(epoch_acc / static_cast<double>(n_batches));
    }
    return result;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    out << "epoch,step,loss_i2t,loss_t2i,loss_total,tau\n";
    char buf[256];
    for (const auto& row : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g\n", row.epoch, row.step,
                      row.loss_i2t, row.loss_t2i, row.loss_total, row.tau);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

GradCheckReport finite_difference_check(DualEncoder& model,
                                        const std::vector<const PairRecord*>& batch,
                                        double epsilon) {
    auto analytic = compute_loss_and_grads(model, batch);
    auto params = model.trainable_params();
    std::vector<std::string> names;
    if (model.config().use_learnable_prompt) names.push_back("soft_prompt");
    for (const char* n : {"head.w1", "head.b1", "head.w2", "head.b2", "image.w1", "image.b1",
                          "image.w2", "image.b2"})
        names.push_back(n);
    names.push_back("log_tau");

    GradCheckReport report;
    for (size_t k = 0; k < params.size(); ++k) {
        GradCheckGroup group;
        group.name = names[k];
        Mat& p = *params[k];
        for (size_t i = 0; i < p.size(); ++i) {
            double orig = p.a[i];
            p.a[i] = orig + epsilon;
            double lp = compute_loss(model, batch);
            p.a[i] = orig - epsilon;
            double lm = compute_loss(model, batch);
            p.a[i] = orig;
            double fd = (lp - lm) / (2.0 * epsilon);
            double an = analytic.grads[k].a[i];
            double dev = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            group.max_rel_dev = std::max(group.max_rel_dev, dev);
        }
        report.max_rel_dev = std::max(report.max_rel_dev, group.max_rel_dev);
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace pclip
