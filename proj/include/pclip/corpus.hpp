#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "pclip/tokenizer.hpp"

namespace pclip {

// Either a path to an image file (opaque here) or a precomputed feature
// vector used directly by the toy image encoder.
using ImageRef = std::variant<std::string, std::vector<double>>;

enum class Split { Train, Valid, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// One image-caption-CUI sample.
struct PairRecord {
    std::string id;
    ImageRef image_ref;
    std::string caption;
    std::set<std::string> cuis;
    std::map<std::string, std::string> semantic_types;  // CUI -> type code, keys subset of cuis
    Split split = Split::Train;

    bool operator==(const PairRecord&) const = default;
};

struct IrmaRecord {
    std::string id;
    ImageRef image_ref;
    std::string irma_code;  // axis separators permitted, 13 code characters

    bool operator==(const IrmaRecord&) const = default;
};

// User-supplied CUI -> class table for one semantic-type axis.
struct CategoryMap {
    std::string semantic_type;            // "T060" (modality) or "T023" (organ)
    std::vector<std::string> class_names;
    std::map<std::string, int> cui_to_class;
};

struct RetrievalLabel {
    std::string record_id;
    std::optional<int> modality;
    std::optional<int> organ;
};

struct LabelReport {
    int n_records = 0;
    int n_modality_labeled = 0;
    int n_organ_labeled = 0;
    int n_modality_ambiguous = 0;
    int n_organ_ambiguous = 0;
};

struct LabelResult {
    std::vector<RetrievalLabel> labels;  // aligned with input records
    LabelReport report;
};

// ---- ingestion ----

// JSON-lines, one object per record, fields exactly
// {id, image_ref, caption, cuis, semantic_types, split}. The split field may
// be omitted when the file name carries the split (e.g. foo_train.jsonl).
std::vector<PairRecord> load_pair_dataset(const std::string& path);
void write_pair_dataset(const std::vector<PairRecord>& records, const std::string& path);

// TSV with columns {id, image_ref, irma_code}; a header line is skipped.
// image_ref cells holding comma-separated numbers are parsed as features.
std::vector<IrmaRecord> load_irma_dataset(const std::string& path);
void write_irma_dataset(const std::vector<IrmaRecord>& records, const std::string& path);

// JSON file {semantic_type, class_names, cui_to_class}.
CategoryMap load_category_map(const std::string& path);
void validate_category_map(const CategoryMap& map);

// ---- labels ----

// Records whose CUIs map to more than one class within an axis get no label
// on that axis and are counted as ambiguous.
LabelResult derive_retrieval_labels(const std::vector<PairRecord>& records,
                                    const CategoryMap& modality_map,
                                    const CategoryMap& organ_map);

// ---- caption statistics ----

struct CaptionStats {
    int n_captions = 0;
    double mean_tokens = 0.0;
    int bucket_width = 8;
    std::vector<int> bucket_counts;            // bucket i covers [i*w, (i+1)*w)
    std::vector<std::pair<int, double>> exceedance;  // limit -> fraction with count > limit
};

CaptionStats caption_length_stats(const std::vector<PairRecord>& records,
                                  const Tokenizer& tokenizer,
                                  const std::vector<int>& limits = {77, 512},
                                  int bucket_width = 8);

// ---- IRMA codes ----

// TTTT-DDD-AAA-BBB layout; the organ-style axis defaults to anatomy (index 2).
struct IrmaAxes {
    std::array<int, 4> widths{4, 3, 3, 3};
    int anatomy_axis = 2;
};

// Strips separators and validates: exactly 13 alphanumeric code characters.
std::string canonical_irma_code(const std::string& raw);
std::string irma_axis_substring(const std::string& code, int axis, const IrmaAxes& axes = {});

// True iff both codes agree on the anatomy axis.
bool irma_relevance(const IrmaRecord& query, const IrmaRecord& candidate,
                    const IrmaAxes& axes = {});

}  // namespace pclip
