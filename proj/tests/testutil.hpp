#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "pclip/corpus.hpp"
#include "pclip/mat.hpp"

namespace testutil {

// Self-deleting scratch directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        auto base = std::filesystem::temp_directory_path();
        path_ = (base / ("pclip_" + tag + "_" + std::to_string(::getpid()) + "_" +
                         std::to_string(counter++)))
                    .string();
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

// Synthetic clustered corpus: per-cluster image prototypes with additive
// noise, cluster-specific caption words plus shared fillers, and per-cluster
// modality/organ CUIs with one unique CUI per sample (graded IoU structure:
// same cluster 0.5, different cluster 0).
struct PlantedSpec {
    int n_pairs = 32;
    int n_clusters = 4;
    int d_img = 12;
    double img_noise = 0.3;
    int n_shared_words = 2;
    uint64_t seed = 1;
};

inline std::string cluster_modality_cui(int c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "CM%04d", c);
    return buf;
}

inline std::string cluster_organ_cui(int c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "CO%04d", c);
    return buf;
}

inline std::vector<pclip::PairRecord> make_planted_corpus(const PlantedSpec& spec) {
    pclip::Rng rng(spec.seed * 0x9e37ULL + 17);
    std::vector<std::vector<double>> prototypes;
    for (int c = 0; c < spec.n_clusters; ++c) {
        std::vector<double> proto(spec.d_img);
        double ss = 0.0;
        for (auto& x : proto) {
            x = rng.normal();
            ss += x * x;
        }
        for (auto& x : proto) x /= std::sqrt(ss);
        prototypes.push_back(std::move(proto));
    }

    std::vector<pclip::PairRecord> records;
    for (int i = 0; i < spec.n_pairs; ++i) {
        int c = i % spec.n_clusters;
        pclip::PairRecord rec;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img_%04d", i);
        rec.id = buf;
        std::vector<double> feats(spec.d_img);
        for (int d = 0; d < spec.d_img; ++d)
            feats[d] = prototypes[c][d] + spec.img_noise * rng.normal();
        rec.image_ref = feats;
        rec.caption = "modality" + std::to_string(c) + " scan of organ" + std::to_string(c);
        for (int w = 0; w < spec.n_shared_words; ++w)
            rec.caption += " finding" + std::to_string(rng.uniform_int(0, 5));
        rec.cuis = {cluster_modality_cui(c), cluster_organ_cui(c),
                    "CX" + std::to_string(1000 + i)};
        rec.semantic_types[cluster_modality_cui(c)] = "T060";
        rec.semantic_types[cluster_organ_cui(c)] = "T023";
        rec.split = pclip::Split::Train;
        records.push_back(std::move(rec));
    }
    return records;
}

inline pclip::CategoryMap planted_modality_map(int n_clusters) {
    pclip::CategoryMap map;
    map.semantic_type = "T060";
    for (int c = 0; c < n_clusters; ++c) {
        map.class_names.push_back("modality_" + std::to_string(c));
        map.cui_to_class[cluster_modality_cui(c)] = c;
    }
    return map;
}

inline pclip::CategoryMap planted_organ_map(int n_clusters) {
    pclip::CategoryMap map;
    map.semantic_type = "T023";
    for (int c = 0; c < n_clusters; ++c) {
        map.class_names.push_back("organ_" + std::to_string(c));
        map.cui_to_class[cluster_organ_cui(c)] = c;
    }
    return map;
}

}  // namespace testutil
