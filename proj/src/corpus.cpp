#include "pclip/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pclip {

using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw std::runtime_error("invalid split '" + name + "' (expected train, valid or test)");
}

static std::optional<Split> split_from_path(const std::string& path) {
    std::string base = std::filesystem::path(path).filename().string();
    std::vector<Split> hits;
    for (Split s : {Split::Train, Split::Valid, Split::Test})
        if (base.find(split_name(s)) != std::string::npos) hits.push_back(s);
    if (hits.size() == 1) return hits[0];
    return std::nullopt;
}

static std::string line_err(const std::string& msg, size_t line) {
    return msg + " at line " + std::to_string(line);
}

static ImageRef parse_image_ref_json(const json& j, size_t line) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_array()) {
        std::vector<double> feats;
        feats.reserve(j.size());
        for (const auto& v : j) {
            if (!v.is_number())
                throw std::runtime_error(line_err("image_ref array must hold numbers", line));
            feats.push_back(v.get<double>());
        }
        return feats;
    }
    throw std::runtime_error(
        line_err("field image_ref must be a path string or numeric array", line));
}

std::vector<PairRecord> load_pair_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::optional<Split> path_split = split_from_path(path);

    static const std::set<std::string> known_fields = {
        "id", "image_ref", "caption", "cuis", "semantic_types", "split"};
    static const std::vector<std::string> required_fields = {
        "id", "image_ref", "caption", "cuis", "semantic_types"};

    std::vector<PairRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(line_err(std::string("malformed JSON (") + e.what() + ")", line_no));
        }
        if (!j.is_object()) throw std::runtime_error(line_err("record must be a JSON object", line_no));
        for (const auto& [key, _] : j.items())
            if (!known_fields.count(key))
                throw std::runtime_error(line_err("unexpected field " + key, line_no));
        for (const auto& field : required_fields)
            if (!j.contains(field))
                throw std::runtime_error(line_err("missing field " + field, line_no));

        PairRecord rec;
        if (!j["id"].is_string()) throw std::runtime_error(line_err("field id must be a string", line_no));
        rec.id = j["id"].get<std::string>();
        if (!seen_ids.insert(rec.id).second)
            throw std::runtime_error(line_err("duplicate id " + rec.id, line_no));
        rec.image_ref = parse_image_ref_json(j["image_ref"], line_no);
        if (!j["caption"].is_string())
            throw std::runtime_error(line_err("field caption must be a string", line_no));
        rec.caption = j["caption"].get<std::string>();
        if (!j["cuis"].is_array())
            throw std::runtime_error(line_err("field cuis must be an array", line_no));
        for (const auto& c : j["cuis"]) {
            if (!c.is_string()) throw std::runtime_error(line_err("cuis entries must be strings", line_no));
            rec.cuis.insert(c.get<std::string>());
        }
        if (!j["semantic_types"].is_object())
            throw std::runtime_error(line_err("field semantic_types must be an object", line_no));
        for (const auto& [cui, type] : j["semantic_types"].items()) {
            if (!rec.cuis.count(cui))
                throw std::runtime_error(line_err("semantic_types key " + cui + " not in cuis", line_no));
            if (!type.is_string())
                throw std::runtime_error(line_err("semantic_types values must be strings", line_no));
            rec.semantic_types[cui] = type.get<std::string>();
        }
        if (j.contains("split")) {
            if (!j["split"].is_string())
                throw std::runtime_error(line_err("field split must be a string", line_no));
            try {
                rec.split = split_from_name(j["split"].get<std::string>());
            } catch (const std::exception& e) {
                throw std::runtime_error(line_err(e.what(), line_no));
            }
        } else if (path_split) {
            rec.split = *path_split;
        } else {
            throw std::runtime_error(
                line_err("missing field split and file name names no split", line_no));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_pair_dataset(const std::vector<PairRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    for (const auto& rec : records) {
        json j;
        j["id"] = rec.id;
        if (std::holds_alternative<std::string>(rec.image_ref))
            j["image_ref"] = std::get<std::string>(rec.image_ref);
        else
            j["image_ref"] = std::get<std::vector<double>>(rec.image_ref);
        j["caption"] = rec.caption;
        j["cuis"] = rec.cuis;
        j["semantic_types"] = rec.semantic_types;
        j["split"] = split_name(rec.split);
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

static bool parse_inline_features(const std::string& cell, std::vector<double>& out) {
    out.clear();
    std::stringstream ss(cell);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) return false;
        size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            return false;
        }
        if (pos != tok.size()) return false;
        out.push_back(v);
    }
    return !out.empty();
}

std::vector<IrmaRecord> load_irma_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<IrmaRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1 && line == "id\timage_ref\tirma_code") continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        if (cells.size() != 3)
            throw std::runtime_error(line_err(
                "malformed line: expected 3 tab-separated columns, got " + std::to_string(cells.size()),
                line_no));
        IrmaRecord rec;
        rec.id = cells[0];
        if (rec.id.empty()) throw std::runtime_error(line_err("empty id", line_no));
        if (!seen_ids.insert(rec.id).second)
            throw std::runtime_error(line_err("duplicate id " + rec.id, line_no));
        std::vector<double> feats;
        if (parse_inline_features(cells[1], feats))
            rec.image_ref = feats;
        else
            rec.image_ref = cells[1];
        try {
            canonical_irma_code(cells[2]);
        } catch (const std::exception& e) {
            throw std::runtime_error(line_err(e.what(), line_no));
        }
        rec.irma_code = cells[2];
        records.push_back(std::move(rec));
    }
    return records;
}

void write_irma_dataset(const std::vector<IrmaRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << "id\timage_ref\tirma_code\n";
    for (const auto& rec : records) {
        out << rec.id << "\t";
        if (std::holds_alternative<std::string>(rec.image_ref)) {
            out << std::get<std::string>(rec.image_ref);
        } else {
            const auto& feats = std::get<std::vector<double>>(rec.image_ref);
            for (size_t i = 0; i < feats.size(); ++i) {
                if (i) out << ",";
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", feats[i]);
                out << buf;
            }
        }
        out << "\t" << rec.irma_code << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void validate_category_map(const CategoryMap& map) {
    if (map.semantic_type.empty())
        throw std::runtime_error("category map: semantic_type must be set");
    for (const auto& [cui, cls] : map.cui_to_class)
        if (cls < 0 || cls >= static_cast<int>(map.class_names.size()))
            throw std::runtime_error("category map: class id " + std::to_string(cls) + " for " +
                                     cui + " does not index class_names");
}

CategoryMap load_category_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open category map: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed category map " + path + ": " + e.what());
    }
    for (const auto& field : {"semantic_type", "class_names", "cui_to_class"})
        if (!j.contains(field))
            throw std::runtime_error("category map " + path + ": missing field " + field);
    CategoryMap map;
    map.semantic_type = j["semantic_type"].get<std::string>();
    map.class_names = j["class_names"].get<std::vector<std::string>>();
    for (const auto& [cui, cls] : j["cui_to_class"].items()) {
        if (!cls.is_number_integer())
            throw std::runtime_error("category map " + path + ": class ids must be integers");
        map.cui_to_class[cui] = cls.get<int>();
    }
    validate_category_map(map);
    return map;
}

static std::optional<int> single_class(const PairRecord& rec, const CategoryMap& map,
                                       bool& ambiguous) {
    std::set<int> classes;
    for (const auto& cui : rec.cuis) {
        auto it = map.cui_to_class.find(cui);
        if (it != map.cui_to_class.end()) classes.insert(it->second);
    }
    ambiguous = classes.size() > 1;
    if (classes.size() == 1) return *classes.begin();
    return std::nullopt;
}

LabelResult derive_retrieval_labels(const std::vector<PairRecord>& records,
                                    const CategoryMap& modality_map,
                                    const CategoryMap& organ_map) {
    if (modality_map.semantic_type != "T060")
        throw std::runtime_error("modality map must have semantic_type T060, got " +
                                 modality_map.semantic_type);
    if (organ_map.semantic_type != "T023")
        throw std::runtime_error("organ map must have semantic_type T023, got " +
                                 organ_map.semantic_type);
    validate_category_map(modality_map);
    validate_category_map(organ_map);

    LabelResult res;
    res.report.n_records = static_cast<int>(records.size());
    res.labels.reserve(records.size());
    for (const auto& rec : records) {
        RetrievalLabel lab;
        lab.record_id = rec.id;
        bool amb = false;
        lab.modality = single_class(rec, modality_map, amb);
        if (amb) ++res.report.n_modality_ambiguous;
        if (lab.modality) ++res.report.n_modality_labeled;
        lab.organ = single_class(rec, organ_map, amb);
        if (amb) ++res.report.n_organ_ambiguous;
        if (lab.organ) ++res.report.n_organ_labeled;
        res.labels.push_back(std::move(lab));
    }
    return res;
}

CaptionStats caption_length_stats(const std::vector<PairRecord>& records,
                                  const Tokenizer& tokenizer,
                                  const std::vector<int>& limits,
                                  int bucket_width) {
    if (records.empty()) throw std::runtime_error("caption_length_stats: empty record list");
    if (bucket_width < 1) throw std::runtime_error("caption_length_stats: bucket_width must be >= 1");
    CaptionStats stats;
    stats.n_captions = static_cast<int>(records.size());
    stats.bucket_width = bucket_width;
    std::vector<int> lengths;
    lengths.reserve(records.size());
    double sum = 0.0;
    for (const auto& rec : records) {
        int len = static_cast<int>(tokenizer.tokenize(rec.caption).size());
        lengths.push_back(len);
        sum += len;
        size_t bucket = static_cast<size_t>(len / bucket_width);
        if (stats.bucket_counts.size() <= bucket) stats.bucket_counts.resize(bucket + 1, 0);
        ++stats.bucket_counts[bucket];
    }
    stats.mean_tokens = sum / stats.n_captions;
    for (int limit : limits) {
        int over = 0;
        for (int len : lengths)
            if (len > limit) ++over;
        stats.exceedance.emplace_back(limit, static_cast<double>(over) / stats.n_captions);
    }
    return stats;
}

std::string canonical_irma_code(const std::string& raw) {
    std::string code;
    for (char ch : raw) {
        if (ch == '-') continue;
        if (!std::isalnum(static_cast<unsigned char>(ch)))
            throw std::runtime_error("malformed irma code '" + raw + "': invalid character");
        code.push_back(ch);
    }
    if (code.size() != 13)
        throw std::runtime_error("malformed irma code '" + raw + "': expected 13 code characters, got " +
                                 std::to_string(code.size()));
    return code;
}

std::string irma_axis_substring(const std::string& code, int axis, const IrmaAxes& axes) {
    if (axis < 0 || axis >= static_cast<int>(axes.widths.size()))
        throw std::runtime_error("irma axis index out of range");
    std::string canon = canonical_irma_code(code);
    int offset = 0;
    for (int i = 0; i < axis; ++i) offset += axes.widths[i];
    return canon.substr(offset, axes.widths[axis]);
}

bool irma_relevance(const IrmaRecord& query, const IrmaRecord& candidate, const IrmaAxes& axes) {
    return irma_axis_substring(query.irma_code, axes.anatomy_axis, axes) ==
           irma_axis_substring(candidate.irma_code, axes.anatomy_axis, axes);
}

}  // namespace pclip
