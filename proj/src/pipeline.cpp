#include "pclip/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "json.hpp"

namespace pclip {

using nlohmann::json;
namespace fs = std::filesystem;

std::string schema_name(DatasetSchema s) {
    return s == DatasetSchema::Rocov2Jsonl ? "rocov2-jsonl" : "irma-tsv";
}

DatasetSchema schema_from_name(const std::string& name) {
    if (name == "rocov2-jsonl") return DatasetSchema::Rocov2Jsonl;
    if (name == "irma-tsv") return DatasetSchema::IrmaTsv;
    throw std::runtime_error("unknown schema '" + name + "' (expected rocov2-jsonl or irma-tsv)");
}

static void prepare_out_dir(const std::string& out_dir) {
    if (out_dir.empty()) throw std::runtime_error("out_dir must be set");
    fs::create_directories(out_dir);
}

static void write_resolved_config(const RunPaths& paths, json config) {
    config["out_dir"] = paths.out_dir;
    atomic_write_text(paths.config(), config.dump(2) + "\n");
}

IngestResult cmd_ingest(const IngestOptions& opts) {
    prepare_out_dir(opts.out_dir);
    RunPaths paths{opts.out_dir};
    IngestResult result;
    json report;
    report["schema"] = schema_name(opts.schema);
    report["input"] = opts.input;
    if (opts.schema == DatasetSchema::Rocov2Jsonl) {
        auto records = load_pair_dataset(opts.input);
        write_pair_dataset(records, paths.dataset());
        result.n_records = static_cast<int>(records.size());
        for (const auto& rec : records) ++result.split_counts[split_name(rec.split)];
        report["dataset"] = paths.dataset();
        report["split_counts"] = result.split_counts;
    } else {
        auto records = load_irma_dataset(opts.input);
        write_irma_dataset(records, paths.irma_dataset());
        result.n_records = static_cast<int>(records.size());
        report["dataset"] = paths.irma_dataset();
    }
    report["n_records"] = result.n_records;
    atomic_write_text(paths.ingest_report(), report.dump(2) + "\n");

    json config;
    config["subcommand"] = "ingest";
    config["input"] = opts.input;
    config["schema"] = schema_name(opts.schema);
    write_resolved_config(paths, std::move(config));
    return result;
}

static int inferred_image_dim(const std::vector<PairRecord>& records) {
    for (const auto& rec : records)
        if (std::holds_alternative<std::vector<double>>(rec.image_ref))
            return static_cast<int>(std::get<std::vector<double>>(rec.image_ref).size());
    throw std::runtime_error("no record carries inline image features; cannot size the encoder");
}

TrainRunResult cmd_train(const TrainOptions& opts) {
    prepare_out_dir(opts.out_dir);
    RunPaths paths{opts.out_dir};

    auto all_records = load_pair_dataset(opts.dataset);
    std::vector<PairRecord> records;
    if (opts.split_filter) {
        for (auto& rec : all_records)
            if (rec.split == *opts.split_filter) records.push_back(std::move(rec));
        if (records.empty())
            throw std::runtime_error("no records with split " + split_name(*opts.split_filter) +
                                     " in " + opts.dataset);
    } else {
        records = std::move(all_records);
    }

    ModelConfig model_cfg = opts.model;
    model_cfg.backend.tier =
        opts.train.use_llm_backend ? BackendTier::Transformer : BackendTier::Minimal;
    model_cfg.use_learnable_prompt = opts.train.use_learnable_prompt;
    model_cfg.image_input_dim = inferred_image_dim(records);
    model_cfg.init_seed = opts.train.seed;

    DualEncoder model(model_cfg);
    TrainRunResult out;
    out.result = train(model, records, opts.train);
    write_trace_csv(out.result.trace, paths.trace());
    save_checkpoint(make_checkpoint(model, opts.train), paths.checkpoint());
    out.checkpoint_path = paths.checkpoint();

    json config;
    config["subcommand"] = "train";
    config["dataset"] = opts.dataset;
    config["split"] = opts.split_filter ? split_name(*opts.split_filter) : "all";
    config["train"] = train_config_to_json(opts.train);
    config["model"] = model_config_to_json(model_cfg);
    write_resolved_config(paths, std::move(config));
    return out;
}

EmbedResult cmd_embed(const EmbedOptions& opts) {
    prepare_out_dir(opts.out_dir);
    RunPaths paths{opts.out_dir};
    DualEncoder model = model_from_checkpoint(load_checkpoint(opts.checkpoint));

    EmbeddingMatrix emb;
    if (opts.schema == DatasetSchema::Rocov2Jsonl)
        emb = embed_pair_records(model, load_pair_dataset(opts.dataset));
    else
        emb = embed_irma_records(model, load_irma_dataset(opts.dataset));
    save_embeddings(emb, paths.embeddings());

    json config;
    config["subcommand"] = "embed";
    config["checkpoint"] = opts.checkpoint;
    config["dataset"] = opts.dataset;
    config["schema"] = schema_name(opts.schema);
    write_resolved_config(paths, std::move(config));
    return {emb.rows.rows, paths.embeddings()};
}

std::string format_report_table(const std::vector<MetricReport>& reports) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %6s %10s %10s %10s\n", "task", "k", "value",
                  "queries", "flagged");
    out += buf;
    for (const auto& rep : reports)
        for (const auto& kr : rep.per_k) {
            std::snprintf(buf, sizeof(buf), "%-20s %6d %10.4f %10d %10d\n", rep.task.c_str(),
                          kr.k, kr.value, rep.n_queries, kr.n_flagged);
            out += buf;
        }
    return out;
}

EvalResult cmd_eval(const EvalOptions& opts) {
    prepare_out_dir(opts.out_dir);
    RunPaths paths{opts.out_dir};
    if (opts.tasks.empty()) throw std::runtime_error("eval: no tasks requested");
    if (opts.ks.empty()) throw std::runtime_error("eval: no K values requested");

    std::vector<PairRecord> pair_records;
    std::vector<IrmaRecord> irma_records;
    CategoryMap modality_map, organ_map;
    EvalInputs inputs;

    bool needs_pairs = false, needs_irma = false, needs_maps = false;
    for (TaskKind kind : opts.tasks) {
        if (kind == TaskKind::IrmaOrgan)
            needs_irma = true;
        else
            needs_pairs = true;
        if (kind == TaskKind::Modality || kind == TaskKind::Organ ||
            kind == TaskKind::ModalityAndOrgan)
            needs_maps = true;
    }
    if (needs_pairs) {
        if (opts.dataset.empty()) throw std::runtime_error("eval: tasks need --dataset");
        pair_records = load_pair_dataset(opts.dataset);
        inputs.pair_records = &pair_records;
    }
    if (needs_irma) {
        if (opts.irma_dataset.empty()) throw std::runtime_error("eval: irma_organ needs --irma-dataset");
        irma_records = load_irma_dataset(opts.irma_dataset);
        inputs.irma_records = &irma_records;
    }
    if (needs_maps) {
        if (opts.modality_map.empty() || opts.organ_map.empty())
            throw std::runtime_error("eval: categorical tasks need --modality-map and --organ-map");
        modality_map = load_category_map(opts.modality_map);
        organ_map = load_category_map(opts.organ_map);
        inputs.modality_map = &modality_map;
        inputs.organ_map = &organ_map;
    }

    EvalResult out;
    if (!opts.embeddings.empty()) {
        if (needs_pairs && needs_irma)
            throw std::runtime_error(
                "eval: a single embedding dump cannot serve both pair-record and IRMA tasks");
        Index index = build_index(load_embeddings(opts.embeddings));
        out.reports = run_eval_on_index(index, inputs, opts.tasks, opts.ks);
    } else {
        if (opts.checkpoint.empty())
            throw std::runtime_error("eval: need --embeddings or --checkpoint");
        DualEncoder model = model_from_checkpoint(load_checkpoint(opts.checkpoint));
        out.reports = run_eval(model, inputs, opts.tasks, opts.ks);
    }
    save_reports(out.reports, paths.report());
    out.table = format_report_table(out.reports);

    json config;
    config["subcommand"] = "eval";
    config["embeddings"] = opts.embeddings;
    config["checkpoint"] = opts.checkpoint;
    config["dataset"] = opts.dataset;
    config["irma_dataset"] = opts.irma_dataset;
    config["modality_map"] = opts.modality_map;
    config["organ_map"] = opts.organ_map;
    json tasks = json::array();
    for (TaskKind kind : opts.tasks) tasks.push_back(task_name(kind));
    config["tasks"] = tasks;
    config["ks"] = opts.ks;
    write_resolved_config(paths, std::move(config));
    return out;
}

static std::string ascii_histogram(const CaptionStats& stats) {
    std::string out = "token-length histogram (bucket width " +
                      std::to_string(stats.bucket_width) + ")\n";
    int max_count = 0;
    for (int c : stats.bucket_counts) max_count = std::max(max_count, c);
    char buf[160];
    for (size_t b = 0; b < stats.bucket_counts.size(); ++b) {
        int lo = static_cast<int>(b) * stats.bucket_width;
        int hi = lo + stats.bucket_width - 1;
        int count = stats.bucket_counts[b];
        int bar = max_count > 0 ? (count * 50) / max_count : 0;
        std::snprintf(buf, sizeof(buf), "%5d-%-5d %7d |%s\n", lo, hi, count,
                      std::string(static_cast<size_t>(bar), '#').c_str());
        out += buf;
    }
    return out;
}

StatsResult cmd_stats(const StatsOptions& opts) {
    prepare_out_dir(opts.out_dir);
    RunPaths paths{opts.out_dir};
    auto records = load_pair_dataset(opts.dataset);
    auto tokenizer = default_tokenizer();

    StatsResult out;
    out.stats = caption_length_stats(records, *tokenizer, opts.limits, opts.bucket_width);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "captions %d, mean tokens %.2f\n", out.stats.n_captions,
                  out.stats.mean_tokens);
    out.table = buf;
    std::snprintf(buf, sizeof(buf), "%10s %12s\n", "limit", "exceedance");
    out.table += buf;
    for (const auto& [limit, frac] : out.stats.exceedance) {
        std::snprintf(buf, sizeof(buf), "%10d %12.4f\n", limit, frac);
        out.table += buf;
    }

    json j;
    j["n_captions"] = out.stats.n_captions;
    j["mean_tokens"] = out.stats.mean_tokens;
    j["bucket_width"] = out.stats.bucket_width;
    j["bucket_counts"] = out.stats.bucket_counts;
    json ex = json::array();
    for (const auto& [limit, frac] : out.stats.exceedance)
        ex.push_back({{"limit", limit}, {"fraction", frac}});
    j["exceedance"] = ex;
    atomic_write_text(paths.stats(), j.dump(2) + "\n");

    if (!opts.plot_path.empty()) atomic_write_text(opts.plot_path, ascii_histogram(out.stats));

    json config;
    config["subcommand"] = "stats";
    config["dataset"] = opts.dataset;
    config["limits"] = opts.limits;
    config["bucket_width"] = opts.bucket_width;
    config["plot"] = opts.plot_path;
    write_resolved_config(paths, std::move(config));
    return out;
}

}  // namespace pclip
