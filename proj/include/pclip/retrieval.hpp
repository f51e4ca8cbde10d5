#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pclip/corpus.hpp"
#include "pclip/encoders.hpp"
#include "pclip/mat.hpp"

namespace pclip {

struct EmbeddingMatrix {
    Mat rows;                      // N x D, unit-normalized rows
    std::vector<std::string> ids;  // aligned with rows, unique
};

void validate_embedding_matrix(const EmbeddingMatrix& emb);

struct Neighbor {
    int row = -1;
    double score = 0.0;
};

// Exact (non-approximate) cosine top-K over unit rows. Ties break toward the
// lower row index.
class Index {
public:
    explicit Index(EmbeddingMatrix emb);

    // Optional per-row candidate filter; exclude_row is always dropped.
    std::vector<Neighbor> top_k(const Mat& query_row, int k, int exclude_row = -1,
                                const std::vector<bool>* allowed = nullptr) const;
    std::vector<Neighbor> top_k_by_row(int query_row, int k,
                                       const std::vector<bool>* allowed = nullptr) const;

    int row_of(const std::string& id) const;  // -1 when absent
    const EmbeddingMatrix& embeddings() const { return emb_; }
    int size() const { return emb_.rows.rows; }

private:
    EmbeddingMatrix emb_;
    std::map<std::string, int> row_by_id_;
};

Index build_index(EmbeddingMatrix emb);

// |a ∩ b| / |a ∪ b|; both empty -> 0.
double cui_iou(const std::set<std::string>& a, const std::set<std::string>& b);

// Gain = relevance, discount = 1/log2(rank+1), rank starting at 1;
// ideal_relevances must be the descending sort of all candidate relevances.
// Returns 0 when IDCG@K = 0.
double ndcg_at_k(const std::vector<double>& retrieved_relevances,
                 const std::vector<double>& ideal_relevances, int k);

enum class TaskKind { CuiNdcg, Modality, Organ, ModalityAndOrgan, IrmaOrgan };

std::string task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);

struct KResult {
    int k = 0;
    double value = 0.0;
    int n_flagged = 0;  // queries scored over fewer than k candidates
};

struct MetricReport {
    std::string task;
    std::vector<KResult> per_k;
    int n_queries = 0;
    int n_excluded = 0;
    std::map<std::string, int> excluded_reasons;
};

// Mean NDCG over queries where candidate relevance is the CUI-set IoU.
// Queries with empty CUI sets are excluded and counted. Every index id must
// have a record.
MetricReport cui_at_k(const Index& index, const std::vector<PairRecord>& records,
                      const std::vector<int>& ks);

// Categorical P@K: keys maps record id -> class key; records without a key
// are excluded as queries and filtered out of the candidate pool.
MetricReport precision_at_k(const Index& index, const std::map<std::string, std::string>& keys,
                            const std::string& name, const std::vector<int>& ks);

// Class keys per task from derived labels (category tasks) or IRMA codes.
std::map<std::string, std::string> task_keys(TaskKind kind,
                                             const std::vector<PairRecord>& records,
                                             const CategoryMap& modality_map,
                                             const CategoryMap& organ_map);
std::map<std::string, std::string> irma_task_keys(const std::vector<IrmaRecord>& records,
                                                  const IrmaAxes& axes = {});

struct EvalInputs {
    const std::vector<PairRecord>* pair_records = nullptr;
    const std::vector<IrmaRecord>* irma_records = nullptr;
    const CategoryMap* modality_map = nullptr;
    const CategoryMap* organ_map = nullptr;
};

// Embeds all eval images with the model's image encoder, builds each index
// once, and runs every requested task. Deterministic.
std::vector<MetricReport> run_eval(const DualEncoder& model, const EvalInputs& inputs,
                                   const std::vector<TaskKind>& tasks,
                                   const std::vector<int>& ks = {5, 10, 50});

// Task runner over a prebuilt index (e.g. from a persisted embedding dump).
std::vector<MetricReport> run_eval_on_index(const Index& index, const EvalInputs& inputs,
                                            const std::vector<TaskKind>& tasks,
                                            const std::vector<int>& ks);

EmbeddingMatrix embed_pair_records(const DualEncoder& model,
                                   const std::vector<PairRecord>& records);
EmbeddingMatrix embed_irma_records(const DualEncoder& model,
                                   const std::vector<IrmaRecord>& records);

}  // namespace pclip
