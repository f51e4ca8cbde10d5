#include "pclip/store.hpp"

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pclip {

using nlohmann::json;
namespace fs = std::filesystem;

std::string now_timestamp() {
    std::time_t t = 0;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env)
        t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
    else
        t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void atomic_write_bytes(const std::string& path, const std::string& bytes) {
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

void atomic_write_text(const std::string& path, const std::string& text) {
    atomic_write_bytes(path, text);
}

// ---- float32 little-endian packing ----

static void pack_f32le(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

static float unpack_f32le(const char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

static std::string pack_mats(const std::vector<const Mat*>& mats) {
    std::string out;
    size_t total = 0;
    for (const Mat* m : mats) total += m->size();
    out.reserve(total * 4);
    for (const Mat* m : mats)
        for (double x : m->a) pack_f32le(out, static_cast<float>(x));
    return out;
}

// ---- header sidecar ----

static fs::path header_path(const std::string& bin_path) {
    fs::path p(bin_path);
    p.replace_extension(".json");
    return p;
}

static json header_to_json(const ArtifactHeader& h) {
    json j;
    j["kind"] = h.kind;
    j["version"] = h.version;
    j["config_digest"] = h.config_digest;
    j["created_at"] = h.created_at;
    j["payload_bytes"] = h.payload_bytes;
    return j;
}

static ArtifactHeader header_from_json(const json& j, const std::string& expected_kind) {
    ArtifactHeader h;
    for (const auto& field : {"kind", "version", "config_digest", "created_at", "payload_bytes"})
        if (!j.contains(field))
            throw std::runtime_error(std::string("artifact header: missing field ") + field);
    h.kind = j["kind"].get<std::string>();
    h.version = j["version"].get<int>();
    h.config_digest = j["config_digest"].get<std::string>();
    h.created_at = j["created_at"].get<std::string>();
    h.payload_bytes = j["payload_bytes"].get<uint64_t>();
    if (h.version > kArtifactVersion)
        throw std::runtime_error("unsupported artifact version " + std::to_string(h.version) +
                                 " (supported <= " + std::to_string(kArtifactVersion) + ")");
    if (h.kind != expected_kind)
        throw std::runtime_error("expected artifact kind " + expected_kind + ", found " + h.kind);
    return h;
}

static json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

static std::string read_payload(const std::string& path, uint64_t expected_bytes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open payload file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected_bytes)
        throw std::runtime_error("payload length mismatch in " + path + ": header says " +
                                 std::to_string(expected_bytes) + " bytes, file has " +
                                 std::to_string(bytes.size()));
    return bytes;
}

// ---- config codecs ----

json model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["backend"] = {{"tier", backend_tier_name(cfg.backend.tier)},
                    {"width", cfg.backend.width},
                    {"vocab_size", cfg.backend.vocab_size},
                    {"n_layers", cfg.backend.n_layers},
                    {"max_context", cfg.backend.max_context},
                    {"seed", cfg.backend.seed}};
    j["prefix_1"] = cfg.prefix_1;
    j["prefix_2"] = cfg.prefix_2;
    j["init_phrase"] = cfg.init_phrase;
    j["use_learnable_prompt"] = cfg.use_learnable_prompt;
    j["d_shared"] = cfg.d_shared;
    j["head_hidden"] = cfg.head_hidden;
    j["image_input_dim"] = cfg.image_input_dim;
    j["image_hidden"] = cfg.image_hidden;
    j["tau_init"] = cfg.tau_init;
    j["init_seed"] = cfg.init_seed;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    const auto& b = j.at("backend");
    cfg.backend.tier = backend_tier_from_name(b.at("tier").get<std::string>());
    cfg.backend.width = b.at("width").get<int>();
    cfg.backend.vocab_size = b.at("vocab_size").get<int>();
    cfg.backend.n_layers = b.at("n_layers").get<int>();
    cfg.backend.max_context = b.at("max_context").get<int>();
    cfg.backend.seed = b.at("seed").get<uint64_t>();
    cfg.prefix_1 = j.at("prefix_1").get<std::string>();
    cfg.prefix_2 = j.at("prefix_2").get<std::string>();
    cfg.init_phrase = j.at("init_phrase").get<std::string>();
    cfg.use_learnable_prompt = j.at("use_learnable_prompt").get<bool>();
    cfg.d_shared = j.at("d_shared").get<int>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.image_input_dim = j.at("image_input_dim").get<int>();
    cfg.image_hidden = j.at("image_hidden").get<int>();
    cfg.tau_init = j.at("tau_init").get<double>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["seed"] = cfg.seed;
    j["use_llm_backend"] = cfg.use_llm_backend;
    j["use_learnable_prompt"] = cfg.use_learnable_prompt;
    j["clamp_log_tau"] = cfg.clamp_log_tau;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.adam_beta1 = j.at("adam_beta1").get<double>();
    cfg.adam_beta2 = j.at("adam_beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.use_llm_backend = j.at("use_llm_backend").get<bool>();
    cfg.use_learnable_prompt = j.at("use_learnable_prompt").get<bool>();
    cfg.clamp_log_tau = j.at("clamp_log_tau").get<bool>();
    return cfg;
}

// ---- checkpoint ----

struct CheckpointCodec {
    static std::vector<Mat*> mutable_params(DualEncoder& m) {
        return {&m.prompt_.vectors, &m.head_.w1, &m.head_.b1, &m.head_.w2, &m.head_.b2,
                &m.image_.w1, &m.image_.b1, &m.image_.w2, &m.image_.b2, &m.log_tau_};
    }
};

static json checkpoint_meta(const Checkpoint& ck) {
    json meta;
    meta["model"] = model_config_to_json(ck.model_config);
    meta["train"] = train_config_to_json(ck.train_config);
    meta["soft_prompt_k"] = ck.params.empty() ? 0 : ck.params[0].rows;
    json shapes = json::array();
    for (const auto& p : ck.params) shapes.push_back({p.rows, p.cols});
    meta["param_shapes"] = shapes;
    return meta;
}

Checkpoint make_checkpoint(const DualEncoder& model, const TrainConfig& train_cfg,
                           const std::string& created_at) {
    Checkpoint ck;
    ck.model_config = model.config();
    ck.train_config = train_cfg;
    for (const Mat* p : model.all_params()) ck.params.push_back(*p);
    ck.header.kind = "checkpoint";
    ck.header.version = kArtifactVersion;
    ck.header.created_at = created_at.empty() ? now_timestamp() : created_at;
    ck.header.config_digest =
        hex_digest_of_string(checkpoint_meta(ck).dump());
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& bin_path) {
    std::vector<const Mat*> mats;
    for (const auto& p : ck.params) mats.push_back(&p);
    std::string payload = pack_mats(mats);

    ArtifactHeader header = ck.header;
    header.payload_bytes = payload.size();
    json j = header_to_json(header);
    j["meta"] = checkpoint_meta(ck);

    atomic_write_bytes(bin_path, payload);
    atomic_write_text(header_path(bin_path).string(), j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& bin_path) {
    json j = read_json_file(header_path(bin_path).string());
    Checkpoint ck;
    ck.header = header_from_json(j, "checkpoint");
    if (!j.contains("meta")) throw std::runtime_error("checkpoint header: missing field meta");
    ck.model_config = model_config_from_json(j["meta"].at("model"));
    ck.train_config = train_config_from_json(j["meta"].at("train"));

    std::vector<std::pair<int, int>> shapes;
    for (const auto& s : j["meta"].at("param_shapes"))
        shapes.emplace_back(s[0].get<int>(), s[1].get<int>());
    size_t total = 0;
    for (auto [r, c] : shapes) total += static_cast<size_t>(r) * c;
    std::string payload = read_payload(bin_path, ck.header.payload_bytes);
    if (payload.size() != total * 4)
        throw std::runtime_error("checkpoint payload does not match param shapes");

    const char* p = payload.data();
    for (auto [r, c] : shapes) {
        Mat m(r, c);
        for (auto& x : m.a) {
            x = static_cast<double>(unpack_f32le(p));
            p += 4;
        }
        ck.params.push_back(std::move(m));
    }
    return ck;
}

DualEncoder model_from_checkpoint(const Checkpoint& ck) {
    DualEncoder model(ck.model_config);
    auto slots = CheckpointCodec::mutable_params(model);
    if (slots.size() != ck.params.size())
        throw std::runtime_error("checkpoint parameter count mismatch");
    for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]->rows != ck.params[i].rows || slots[i]->cols != ck.params[i].cols)
            throw std::runtime_error("checkpoint parameter shape mismatch at index " +
                                     std::to_string(i));
        *slots[i] = ck.params[i];
    }
    return model;
}

// ---- embeddings ----

void save_embeddings(const EmbeddingMatrix& emb, const std::string& bin_path,
                     const std::string& created_at) {
    validate_embedding_matrix(emb);
    std::string payload = pack_mats({&emb.rows});

    ArtifactHeader header;
    header.kind = "embeddings";
    header.version = kArtifactVersion;
    header.created_at = created_at.empty() ? now_timestamp() : created_at;
    header.payload_bytes = payload.size();
    json j = header_to_json(header);
    j["meta"] = {{"N", emb.rows.rows}, {"D", emb.rows.cols}, {"ids", emb.ids}};
    j["config_digest"] = hex_digest_of_string(j["meta"].dump());

    atomic_write_bytes(bin_path, payload);
    atomic_write_text(header_path(bin_path).string(), j.dump(2) + "\n");
}

EmbeddingMatrix load_embeddings(const std::string& bin_path, ArtifactHeader* header_out) {
    json j = read_json_file(header_path(bin_path).string());
    ArtifactHeader header = header_from_json(j, "embeddings");
    if (!j.contains("meta")) throw std::runtime_error("embeddings header: missing field meta");
    int n = j["meta"].at("N").get<int>();
    int d = j["meta"].at("D").get<int>();
    EmbeddingMatrix emb;
    emb.ids = j["meta"].at("ids").get<std::vector<std::string>>();
    if (static_cast<uint64_t>(n) * d * 4 != header.payload_bytes)
        throw std::runtime_error("embeddings header: payload_bytes disagrees with N*D");
    std::string payload = read_payload(bin_path, header.payload_bytes);
    emb.rows = Mat(n, d);
    const char* p = payload.data();
    for (auto& x : emb.rows.a) {
        x = static_cast<double>(unpack_f32le(p));
        p += 4;
    }
    validate_embedding_matrix(emb);
    if (header_out) *header_out = header;
    return emb;
}

// ---- metric reports ----

json reports_to_json(const std::vector<MetricReport>& reports) {
    json arr = json::array();
    for (const auto& rep : reports)
        for (const auto& kr : rep.per_k)
            arr.push_back({{"task", rep.task},
                           {"k", kr.k},
                           {"value", kr.value},
                           {"n_queries", rep.n_queries},
                           {"n_flagged", kr.n_flagged},
                           {"n_excluded", rep.n_excluded}});
    return arr;
}

void save_reports(const std::vector<MetricReport>& reports, const std::string& json_path,
                  const std::string& created_at) {
    ArtifactHeader header;
    header.kind = "report";
    header.version = kArtifactVersion;
    header.created_at = created_at.empty() ? now_timestamp() : created_at;
    header.payload_bytes = 0;
    json j = header_to_json(header);
    j["reports"] = reports_to_json(reports);
    json exclusions = json::object();
    for (const auto& rep : reports) exclusions[rep.task] = rep.excluded_reasons;
    j["exclusions"] = exclusions;
    j["config_digest"] = hex_digest_of_string(j["reports"].dump());
    atomic_write_text(json_path, j.dump(2) + "\n");
}

std::vector<MetricReport> load_reports(const std::string& json_path, ArtifactHeader* header_out) {
    json j = read_json_file(json_path);
    ArtifactHeader header = header_from_json(j, "report");
    if (!j.contains("reports")) throw std::runtime_error("report artifact: missing field reports");
    std::vector<MetricReport> reports;
    for (const auto& row : j["reports"]) {
        std::string task = row.at("task").get<std::string>();
        if (reports.empty() || reports.back().task != task) {
            MetricReport rep;
            rep.task = task;
            rep.n_queries = row.at("n_queries").get<int>();
            rep.n_excluded = row.at("n_excluded").get<int>();
            reports.push_back(std::move(rep));
        }
        reports.back().per_k.push_back({row.at("k").get<int>(), row.at("value").get<double>(),
                                        row.at("n_flagged").get<int>()});
    }
    if (j.contains("exclusions"))
        for (auto& rep : reports)
            if (j["exclusions"].contains(rep.task))
                rep.excluded_reasons =
                    j["exclusions"][rep.task].get<std::map<std::string, int>>();
    if (header_out) *header_out = header;
    return reports;
}

}  // namespace pclip
