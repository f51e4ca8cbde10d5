#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pclip/corpus.hpp"
#include "pclip/retrieval.hpp"
#include "pclip/store.hpp"
#include "pclip/training.hpp"

namespace pclip {

// Fixed output filenames under --out-dir.
struct RunPaths {
    std::string out_dir;

    std::string dataset() const { return out_dir + "/dataset.jsonl"; }
    std::string irma_dataset() const { return out_dir + "/dataset.tsv"; }
    std::string ingest_report() const { return out_dir + "/ingest_report.json"; }
    std::string checkpoint() const { return out_dir + "/checkpoint.bin"; }
    std::string embeddings() const { return out_dir + "/embeddings.bin"; }
    std::string report() const { return out_dir + "/report.json"; }
    std::string trace() const { return out_dir + "/trace.csv"; }
    std::string config() const { return out_dir + "/config.json"; }
    std::string stats() const { return out_dir + "/stats.json"; }
};

enum class DatasetSchema { Rocov2Jsonl, IrmaTsv };
std::string schema_name(DatasetSchema s);
DatasetSchema schema_from_name(const std::string& name);

struct IngestOptions {
    std::string input;
    DatasetSchema schema = DatasetSchema::Rocov2Jsonl;
    std::string out_dir;
};

struct IngestResult {
    int n_records = 0;
    std::map<std::string, int> split_counts;  // pair datasets only
};

IngestResult cmd_ingest(const IngestOptions& opts);

struct TrainOptions {
    std::string dataset;
    std::string out_dir;
    std::optional<Split> split_filter = Split::Train;  // nullopt => use all records
    TrainConfig train;   // defaults: batch 32, epochs 10, lr 3e-6
    ModelConfig model;   // image_input_dim is inferred from the data
};

struct TrainRunResult {
    TrainResult result;
    std::string checkpoint_path;
};

TrainRunResult cmd_train(const TrainOptions& opts);

struct EmbedOptions {
    std::string checkpoint;
    std::string dataset;
    DatasetSchema schema = DatasetSchema::Rocov2Jsonl;
    std::string out_dir;
};

struct EmbedResult {
    int n_rows = 0;
    std::string embeddings_path;
};

EmbedResult cmd_embed(const EmbedOptions& opts);

struct EvalOptions {
    // Either a precomputed embedding dump, or a checkpoint to embed with.
    std::string embeddings;
    std::string checkpoint;
    std::string dataset;  // pair-record dataset for cui/categorical tasks
    std::string irma_dataset;
    std::string modality_map;
    std::string organ_map;
    std::vector<TaskKind> tasks = {TaskKind::CuiNdcg};
    std::vector<int> ks = {5, 10, 50};
    std::string out_dir;
};

struct EvalResult {
    std::vector<MetricReport> reports;
    std::string table;  // formatted per-task table
};

EvalResult cmd_eval(const EvalOptions& opts);

struct StatsOptions {
    std::string dataset;
    std::vector<int> limits = {77, 512};
    int bucket_width = 8;
    std::string out_dir;
    std::string plot_path;  // optional ASCII histogram file
};

struct StatsResult {
    CaptionStats stats;
    std::string table;
};

StatsResult cmd_stats(const StatsOptions& opts);

std::string format_report_table(const std::vector<MetricReport>& reports);

}  // namespace pclip
