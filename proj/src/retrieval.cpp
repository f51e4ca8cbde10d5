#include "pclip/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pclip {

void validate_embedding_matrix(const EmbeddingMatrix& emb) {
    if (static_cast<int>(emb.ids.size()) != emb.rows.rows)
        throw std::runtime_error("embedding matrix: id count " + std::to_string(emb.ids.size()) +
                                 " does not match row count " + std::to_string(emb.rows.rows));
    std::set<std::string> seen;
    for (const auto& id : emb.ids)
        if (!seen.insert(id).second)
            throw std::runtime_error("embedding matrix: duplicate id " + id);
    for (int r = 0; r < emb.rows.rows; ++r) {
        double ss = 0.0;
        for (int c = 0; c < emb.rows.cols; ++c) ss += emb.rows.at(r, c) * emb.rows.at(r, c);
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-6)
            throw std::runtime_error("embedding matrix: row " + std::to_string(r) +
                                     " is not unit-normalized");
    }
}

Index::Index(EmbeddingMatrix emb) : emb_(std::move(emb)) {
    validate_embedding_matrix(emb_);
    for (int r = 0; r < static_cast<int>(emb_.ids.size()); ++r) row_by_id_[emb_.ids[r]] = r;
}

Index build_index(EmbeddingMatrix emb) {
    return Index(std::move(emb));
}

int Index::row_of(const std::string& id) const {
    auto it = row_by_id_.find(id);
    return it == row_by_id_.end() ? -1 : it->second;
}

std::vector<Neighbor> Index::top_k(const Mat& query_row, int k, int exclude_row,
                                   const std::vector<bool>* allowed) const {
    if (k < 1) throw std::runtime_error("top_k: k must be >= 1");
    if (query_row.rows != 1 || query_row.cols != emb_.rows.cols)
        throw std::runtime_error("top_k: query shape mismatch");
    std::vector<Neighbor> scored;
    scored.reserve(emb_.rows.rows);
    for (int r = 0; r < emb_.rows.rows; ++r) {
        if (r == exclude_row) continue;
        if (allowed && !(*allowed)[r]) continue;
        double acc = 0.0;
        for (int c = 0; c < emb_.rows.cols; ++c) acc += query_row.at(0, c) * emb_.rows.at(r, c);
        scored.push_back({r, acc});
    }
    size_t keep = std::min(static_cast<size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                      [](const Neighbor& a, const Neighbor& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.row < b.row;
                      });
    scored.resize(keep);
    return scored;
}

std::vector<Neighbor> Index::top_k_by_row(int query_row, int k,
                                          const std::vector<bool>* allowed) const {
    if (query_row < 0 || query_row >= emb_.rows.rows)
        throw std::runtime_error("top_k_by_row: row out of range");
    Mat q(1, emb_.rows.cols);
    for (int c = 0; c < emb_.rows.cols; ++c) q.at(0, c) = emb_.rows.at(query_row, c);
    return top_k(q, k, query_row, allowed);
}

double cui_iou(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& x : a)
        if (b.count(x)) ++inter;
    size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

static double dcg(const std::vector<double>& relevances, int k) {
    double acc = 0.0;
    int n = std::min<int>(k, static_cast<int>(relevances.size()));
    for (int r = 1; r <= n; ++r) acc += relevances[r - 1] / std::log2(static_cast<double>(r) + 1.0);
    return acc;
}

double ndcg_at_k(const std::vector<double>& retrieved_relevances,
                 const std::vector<double>& ideal_relevances, int k) {
    if (k < 1) throw std::runtime_error("ndcg_at_k: k must be >= 1");
    for (size_t i = 1; i < ideal_relevances.size(); ++i)
        if (ideal_relevances[i] > ideal_relevances[i - 1])
            throw std::runtime_error("ndcg_at_k: ideal_relevances must be sorted descending");
    double ideal = dcg(ideal_relevances, k);
    if (ideal == 0.0) return 0.0;
    return dcg(retrieved_relevances, k) / ideal;
}

std::string task_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::CuiNdcg: return "cui_ndcg";
    case TaskKind::Modality: return "modality";
    case TaskKind::Organ: return "organ";
    case TaskKind::ModalityAndOrgan: return "modality_and_organ";
    case TaskKind::IrmaOrgan: return "irma_organ";
    }
    return "cui_ndcg";
}

TaskKind task_from_name(const std::string& name) {
    for (TaskKind kind : {TaskKind::CuiNdcg, TaskKind::Modality, TaskKind::Organ,
                          TaskKind::ModalityAndOrgan, TaskKind::IrmaOrgan})
        if (task_name(kind) == name) return kind;
    throw std::runtime_error("unknown task '" + name + "'");
}

MetricReport cui_at_k(const Index& index, const std::vector<PairRecord>& records,
                      const std::vector<int>& ks) {
    if (index.size() < 2) throw std::runtime_error("cui_at_k: empty candidate pool");
    std::map<std::string, const PairRecord*> by_id;
    for (const auto& rec : records) by_id[rec.id] = &rec;
    const auto& ids = index.embeddings().ids;
    std::vector<const PairRecord*> row_rec(ids.size());
    for (size_t r = 0; r < ids.size(); ++r) {
        auto it = by_id.find(ids[r]);
        if (it == by_id.end())
            throw std::runtime_error("cui_at_k: no record for embedding id " + ids[r]);
        row_rec[r] = it->second;
    }

    MetricReport report;
    report.task = task_name(TaskKind::CuiNdcg);
    std::vector<double> sums(ks.size(), 0.0);
    for (int q = 0; q < index.size(); ++q) {
        const PairRecord* query = row_rec[q];
        if (query->cuis.empty()) {
            ++report.n_excluded;
            ++report.excluded_reasons["empty_cui_set"];
            continue;
        }
        // Graded relevance of every candidate; ideal ranking sorts ties by id
        // for determinism (the NDCG value is tie-invariant).
        std::vector<std::pair<double, std::string>> all;
        all.reserve(index.size() - 1);
        for (int r = 0; r < index.size(); ++r) {
            if (r == q) continue;
            all.emplace_back(cui_iou(query->cuis, row_rec[r]->cuis), ids[r]);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<double> ideal;
        ideal.reserve(all.size());
        for (const auto& [rel, _] : all) ideal.push_back(rel);

        int kmax = *std::max_element(ks.begin(), ks.end());
        auto neighbors = index.top_k_by_row(q, kmax);
        std::vector<double> retrieved;
        retrieved.reserve(neighbors.size());
        for (const auto& nb : neighbors)
            retrieved.push_back(cui_iou(query->cuis, row_rec[nb.row]->cuis));

        for (size_t i = 0; i < ks.size(); ++i) sums[i] += ndcg_at_k(retrieved, ideal, ks[i]);
        ++report.n_queries;
    }
    for (size_t i = 0; i < ks.size(); ++i) {
        double value = report.n_queries > 0 ? sums[i] / report.n_queries : 0.0;
        report.per_k.push_back({ks[i], value, 0});
    }
    return report;
}

MetricReport precision_at_k(const Index& index, const std::map<std::string, std::string>& keys,
                            const std::string& name, const std::vector<int>& ks) {
    const auto& ids = index.embeddings().ids;
    std::vector<const std::string*> row_key(ids.size(), nullptr);
    std::vector<bool> allowed(ids.size(), false);
    for (size_t r = 0; r < ids.size(); ++r) {
        auto it = keys.find(ids[r]);
        if (it != keys.end()) {
            row_key[r] = &it->second;
            allowed[r] = true;
        }
    }

    MetricReport report;
    report.task = name;
    std::vector<double> sums(ks.size(), 0.0);
    std::vector<int> flagged(ks.size(), 0);
    for (int q = 0; q < index.size(); ++q) {
        if (!row_key[q]) {
            ++report.n_excluded;
            ++report.excluded_reasons["missing_label"];
            continue;
        }
        int n_candidates = 0;
        for (size_t r = 0; r < allowed.size(); ++r)
            if (allowed[r] && static_cast<int>(r) != q) ++n_candidates;
        if (n_candidates == 0) {
            ++report.n_excluded;
            ++report.excluded_reasons["no_labeled_candidates"];
            continue;
        }
        int kmax = *std::max_element(ks.begin(), ks.end());
        auto neighbors = index.top_k_by_row(q, kmax, &allowed);
        for (size_t i = 0; i < ks.size(); ++i) {
            int k = ks[i];
            int avail = std::min<int>(k, static_cast<int>(neighbors.size()));
            if (avail < k) ++flagged[i];
            int hits = 0;
            for (int j = 0; j < avail; ++j)
                if (*row_key[neighbors[j].row] == *row_key[q]) ++hits;
            sums[i] += static_cast<double>(hits) / static_cast<double>(avail);
        }
        ++report.n_queries;
    }
    for (size_t i = 0; i < ks.size(); ++i) {
        double value = report.n_queries > 0 ? sums[i] / report.n_queries : 0.0;
        report.per_k.push_back({ks[i], value, flagged[i]});
    }
    return report;
}

std::map<std::string, std::string> task_keys(TaskKind kind,
                                             const std::vector<PairRecord>& records,
                                             const CategoryMap& modality_map,
                                             const CategoryMap& organ_map) {
    auto labels = derive_retrieval_labels(records, modality_map, organ_map);
    std::map<std::string, std::string> keys;
    for (const auto& lab : labels.labels) {
        switch (kind) {
        case TaskKind::Modality:
            if (lab.modality) keys[lab.record_id] = modality_map.class_names[*lab.modality];
            break;
        case TaskKind::Organ:
            if (lab.organ) keys[lab.record_id] = organ_map.class_names[*lab.organ];
            break;
        case TaskKind::ModalityAndOrgan:
            if (lab.modality && lab.organ)
                keys[lab.record_id] = modality_map.class_names[*lab.modality] + "|" +
                                      organ_map.class_names[*lab.organ];
            break;
        default:
            throw std::runtime_error("task_keys: not a categorical pair-record task");
        }
    }
    return keys;
}

std::map<std::string, std::string> irma_task_keys(const std::vector<IrmaRecord>& records,
                                                  const IrmaAxes& axes) {
    std::map<std::string, std::string> keys;
    for (const auto& rec : records)
        keys[rec.id] = irma_axis_substring(rec.irma_code, axes.anatomy_axis, axes);
    return keys;
}

EmbeddingMatrix embed_pair_records(const DualEncoder& model,
                                   const std::vector<PairRecord>& records) {
    EmbeddingMatrix emb;
    std::vector<ImageRef> refs;
    refs.reserve(records.size());
    for (const auto& rec : records) {
        refs.push_back(rec.image_ref);
        emb.ids.push_back(rec.id);
    }
    emb.rows = model.encode_images(refs);
    return emb;
}

EmbeddingMatrix embed_irma_records(const DualEncoder& model,
                                   const std::vector<IrmaRecord>& records) {
    EmbeddingMatrix emb;
    std::vector<ImageRef> refs;
    refs.reserve(records.size());
    for (const auto& rec : records) {
        refs.push_back(rec.image_ref);
        emb.ids.push_back(rec.id);
    }
    emb.rows = model.encode_images(refs);
    return emb;
}

std::vector<MetricReport> run_eval_on_index(const Index& index, const EvalInputs& inputs,
                                            const std::vector<TaskKind>& tasks,
                                            const std::vector<int>& ks) {
    std::vector<MetricReport> reports;
    for (TaskKind kind : tasks) {
        switch (kind) {
        case TaskKind::CuiNdcg: {
            if (!inputs.pair_records)
                throw std::runtime_error("cui_ndcg task needs a pair-record dataset");
            reports.push_back(cui_at_k(index, *inputs.pair_records, ks));
            break;
        }
        case TaskKind::Modality:
        case TaskKind::Organ:
        case TaskKind::ModalityAndOrgan: {
            if (!inputs.pair_records)
                throw std::runtime_error(task_name(kind) + " task needs a pair-record dataset");
            if (!inputs.modality_map || !inputs.organ_map)
                throw std::runtime_error(task_name(kind) + " task needs modality and organ maps");
            auto keys = task_keys(kind, *inputs.pair_records, *inputs.modality_map,
                                  *inputs.organ_map);
            reports.push_back(precision_at_k(index, keys, task_name(kind), ks));
            break;
        }
        case TaskKind::IrmaOrgan: {
            if (!inputs.irma_records)
                throw std::runtime_error("irma_organ task needs an IRMA dataset");
            auto keys = irma_task_keys(*inputs.irma_records);
            reports.push_back(precision_at_k(index, keys, task_name(kind), ks));
            break;
        }
        }
    }
    return reports;
}

std::vector<MetricReport> run_eval(const DualEncoder& model, const EvalInputs& inputs,
                                   const std::vector<TaskKind>& tasks,
                                   const std::vector<int>& ks) {
    bool needs_pairs = false, needs_irma = false;
    for (TaskKind kind : tasks)
        (kind == TaskKind::IrmaOrgan ? needs_irma : needs_pairs) = true;

    std::vector<MetricReport> reports;
    if (needs_pairs) {
        if (!inputs.pair_records)
            throw std::runtime_error("run_eval: pair-record tasks need a pair-record dataset");
        Index index = build_index(embed_pair_records(model, *inputs.pair_records));
        std::vector<TaskKind> subset;
        for (TaskKind kind : tasks)
            if (kind != TaskKind::IrmaOrgan) subset.push_back(kind);
        auto part = run_eval_on_index(index, inputs, subset, ks);
        reports.insert(reports.end(), part.begin(), part.end());
    }
    if (needs_irma) {
        if (!inputs.irma_records)
            throw std::runtime_error("run_eval: irma_organ needs an IRMA dataset");
        Index index = build_index(embed_irma_records(model, *inputs.irma_records));
        auto part = run_eval_on_index(index, inputs, {TaskKind::IrmaOrgan}, ks);
        reports.insert(reports.end(), part.begin(), part.end());
    }
    // Preserve the requested task order.
    std::vector<MetricReport> ordered;
    std::vector<bool> used(reports.size(), false);
    for (TaskKind kind : tasks)
        for (size_t i = 0; i < reports.size(); ++i)
            if (!used[i] && reports[i].task == task_name(kind)) {
                used[i] = true;
                ordered.push_back(std::move(reports[i]));
                break;
            }
    return ordered;
}

}  // namespace pclip
