#pragma once

#include <string>
#include <vector>

#include "pclip/encoders.hpp"
#include "pclip/retrieval.hpp"
#include "pclip/training.hpp"

#include "json.hpp"

namespace pclip {

inline constexpr int kArtifactVersion = 1;

// Self-describing header stored as a JSON sidecar (binary artifacts) or at
// the top of the file (pure JSON artifacts). The loader rejects versions
// newer than kArtifactVersion.
struct ArtifactHeader {
    std::string kind;  // checkpoint | embeddings | report
    int version = kArtifactVersion;
    std::string config_digest;
    std::string created_at;
    uint64_t payload_bytes = 0;
};

// ISO-8601 UTC; honors SOURCE_DATE_EPOCH for reproducible artifacts.
std::string now_timestamp();

// Write-temp-then-rename; concurrent readers only ever see complete files.
void atomic_write_bytes(const std::string& path, const std::string& bytes);
void atomic_write_text(const std::string& path, const std::string& text);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// ---- checkpoint: <stem>.bin payload + <stem>.json header ----
// Payload holds every model parameter (soft prompt included regardless of the
// ablation flag) as little-endian float32 in canonical order.

struct Checkpoint {
    ModelConfig model_config;
    TrainConfig train_config;
    std::vector<Mat> params;  // canonical order, values at save time
    ArtifactHeader header;
};

Checkpoint make_checkpoint(const DualEncoder& model, const TrainConfig& train_cfg,
                           const std::string& created_at = "");
void save_checkpoint(const Checkpoint& ck, const std::string& bin_path);
Checkpoint load_checkpoint(const std::string& bin_path);
// Rebuilds the frozen backend from its recorded seed and installs the saved
// trainable parameters.
DualEncoder model_from_checkpoint(const Checkpoint& ck);

// ---- embedding dump: <stem>.bin payload + <stem>.json header ----
// Header carries {N, D, ids, version}; payload is row-major little-endian
// float32.

void save_embeddings(const EmbeddingMatrix& emb, const std::string& bin_path,
                     const std::string& created_at = "");
EmbeddingMatrix load_embeddings(const std::string& bin_path,
                                ArtifactHeader* header_out = nullptr);

// ---- metric report: single JSON file ----

void save_reports(const std::vector<MetricReport>& reports, const std::string& json_path,
                  const std::string& created_at = "");
std::vector<MetricReport> load_reports(const std::string& json_path,
                                       ArtifactHeader* header_out = nullptr);
nlohmann::json reports_to_json(const std::vector<MetricReport>& reports);

}  // namespace pclip
