// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Each criterion is self-contained and deterministic.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "json.hpp"

#include "pclip/corpus.hpp"
#include "pclip/encoders.hpp"
#include "pclip/pipeline.hpp"
#include "pclip/retrieval.hpp"
#include "pclip/store.hpp"
#include "pclip/training.hpp"
#include "testutil.hpp"

using namespace pclip;
using nlohmann::json;

namespace {

struct Criterion {
    int number;
    std::string name;
    double budget_seconds;  // 0 => no stated budget
    std::function<bool(std::string&)> run;
};

ModelConfig acceptance_model(bool learnable_prompt, uint64_t init_seed, int d_img) {
    ModelConfig cfg;
    cfg.backend.width = 16;
    cfg.backend.vocab_size = 512;
    cfg.backend.n_layers = 2;
    cfg.backend.seed = 1234;
    cfg.d_shared = 8;
    cfg.image_input_dim = d_img;
    cfg.image_hidden = 16;
    cfg.use_learnable_prompt = learnable_prompt;
    cfg.init_seed = init_seed;
    return cfg;
}

double modality_p_at_k(const DualEncoder& model, const std::vector<PairRecord>& records, int k,
                       int n_clusters) {
    Index index = build_index(embed_pair_records(model, records));
    auto keys = task_keys(TaskKind::Modality, records, testutil::planted_modality_map(n_clusters),
                          testutil::planted_organ_map(n_clusters));
    return precision_at_k(index, keys, "modality", {k}).per_k[0].value;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ---- criterion 1: loss correctness ----

bool run_loss_correctness(std::string& detail) {
    Mat identity(2, 2);
    identity.at(0, 0) = 1.0;
    identity.at(1, 1) = 1.0;
    double loss = info_nce_i2t(identity, 1.0);
    double expected = std::log1p(std::exp(-1.0));
    if (std::abs(loss - expected) > 1e-9) {
        detail = "identity i2t " + std::to_string(loss) + " vs log(1+e^-1)";
        return false;
    }

    Mat single(1, 1);
    single.at(0, 0) = 0.42;
    if (clip_loss(single, 1.0) != 0.0) {
        detail = "clip loss at N=1 is not exactly zero";
        return false;
    }

    Rng rng(2024);
    for (int round = 0; round < 100; ++round) {
        int n = rng.uniform_int(1, 10);
        Mat s = random_normal(rng, n, n, 1.0);
        double tau = 0.05 + rng.uniform() * 2.0;
        if (info_nce_t2i(s, tau) != info_nce_i2t(transpose(s), tau)) {
            detail = "duality broke at round " + std::to_string(round);
            return false;
        }
    }
    detail = "identity oracle, N=1 zero, duality on 100 matrices";
    return true;
}

// ---- criterion 2: gradient fidelity ----

bool run_gradient_fidelity(std::string& detail) {
    auto records = testutil::make_planted_corpus(
        {.n_pairs = 4, .n_clusters = 2, .d_img = 12, .img_noise = 0.3, .seed = 11});
    DualEncoder model(acceptance_model(true, 11, 12));
    std::vector<const PairRecord*> batch;
    for (const auto& rec : records) batch.push_back(&rec);
    auto report = finite_difference_check(model, batch, 1e-5);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max relative deviation %.3g over %zu parameter groups",
                  report.max_rel_dev, report.groups.size());
    detail = buf;
    return report.max_rel_dev < 1e-4;
}

// ---- criterion 3: freeze contract ----

bool run_freeze_contract(std::string& detail) {
    auto records = testutil::make_planted_corpus(
        {.n_pairs = 16, .n_clusters = 4, .d_img = 12, .img_noise = 0.25, .seed = 3});
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 25;  // 2 steps per epoch -> 50 steps
    cfg.learning_rate = 1e-2;
    cfg.seed = 3;

    DualEncoder model(acceptance_model(true, 3, 12));
    std::string backend_before = model.backend_digest();
    auto result = train(model, records, cfg);
    if (result.steps != 50) {
        detail = "expected 50 steps, ran " + std::to_string(result.steps);
        return false;
    }
    if (model.backend_digest() != backend_before) {
        detail = "text backend digest changed during training";
        return false;
    }

    DualEncoder frozen_prompt(acceptance_model(false, 3, 12));
    std::string prompt_before = frozen_prompt.prompt_digest();
    std::string backend_before2 = frozen_prompt.backend_digest();
    TrainConfig cfg2 = cfg;
    cfg2.use_learnable_prompt = false;
    train(frozen_prompt, records, cfg2);
    if (frozen_prompt.prompt_digest() != prompt_before) {
        detail = "soft prompt digest changed despite --no-learnable-prompt";
        return false;
    }
    if (frozen_prompt.backend_digest() != backend_before2) {
        detail = "backend digest changed in the prompt-disabled run";
        return false;
    }
    detail = "backend digest stable over 50 steps; prompt digest stable when disabled";
    return true;
}

// ---- criterion 4: prompt mechanics ----

bool run_prompt_mechanics(std::string& detail) {
    TextBackendConfig bcfg;
    bcfg.width = 16;
    bcfg.vocab_size = 512;
    bcfg.seed = 7;
    TextBackend backend(bcfg);

    // randomized length property
    Rng rng(41);
    for (int round = 0; round < 100; ++round) {
        PromptTemplate tpl;
        tpl.prefix_1.clear();
        tpl.prefix_2.clear();
        int l1 = rng.uniform_int(0, 3), l2 = rng.uniform_int(0, 3);
        for (int i = 0; i < l1; ++i) tpl.prefix_1 += (i ? " p" : "p") + std::to_string(i);
        for (int i = 0; i < l2; ++i) tpl.prefix_2 += (i ? " q" : "q") + std::to_string(i);
        int k = rng.uniform_int(0, 8), lc = rng.uniform_int(1, 24);
        std::string caption;
        for (int i = 0; i < lc; ++i)
            caption += (i ? " w" : "w") + std::to_string(rng.uniform_int(0, 200));
        Graph g;
        Graph::Id prompt_node = -1;
        if (k > 0) {
            Rng prng(round + 1);
            prompt_node = g.leaf(random_normal(prng, k, backend.width(), 1.0), false);
        }
        auto assembled = assemble_prompt(g, backend, tpl, prompt_node, caption);
        if (assembled.total() != l1 + k + l2 + lc ||
            g.val(assembled.seq).rows != l1 + k + l2 + lc) {
            detail = "length mismatch at round " + std::to_string(round);
            return false;
        }
    }

    // the configured phrase tokenizes to K=15 under the fixture tokenizer
    SoftPrompt prompt = init_soft_prompt_from_phrase(
        backend,
        "Create a dense embedding that represents the medical meaning of this text for image "
        "retrieval.");
    if (prompt.k() != 15) {
        detail = "init phrase produced K=" + std::to_string(prompt.k());
        return false;
    }

    // perturbing row j moves exactly assembled position L1+j
    PromptTemplate tpl;
    const std::string caption = "portable chest film";
    Graph base_g;
    auto base = assemble_prompt(base_g, backend, tpl, base_g.leaf(prompt.vectors, false), caption);
    for (int j = 0; j < prompt.k(); ++j) {
        SoftPrompt poked = prompt;
        poked.vectors.at(j, j % backend.width()) += 0.5;
        Graph g;
        auto out = assemble_prompt(g, backend, tpl, g.leaf(poked.vectors, false), caption);
        for (int r = 0; r < out.total(); ++r) {
            bool same = true;
            for (int c = 0; c < backend.width(); ++c)
                if (g.val(out.seq).at(r, c) != base_g.val(base.seq).at(r, c)) same = false;
            bool should_differ = r == base.len_prefix1 + j;
            if (same == should_differ) {
                detail = "perturbation of row " + std::to_string(j) + " touched position " +
                         std::to_string(r);
                return false;
            }
        }
    }
    detail = "lengths on 100 random inputs; K=15 for the default phrase; row-exact routing";
    return true;
}

// ---- criterion 5: metric oracles ----

double brute_dcg(const std::vector<double>& rel, int k) {
    double acc = 0.0;
    for (int r = 1; r <= std::min<int>(k, static_cast<int>(rel.size())); ++r)
        acc += rel[r - 1] / std::log2(r + 1.0);
    return acc;
}

bool run_metric_oracles(std::string& detail) {
    // exhaustive NDCG against the literal DCG formula, n <= 6
    Rng rng(51);
    for (int n = 1; n <= 6; ++n) {
        std::vector<double> rel(n);
        for (auto& x : rel) x = std::round(rng.uniform() * 4.0) / 4.0;
        std::vector<double> ideal = rel;
        std::sort(ideal.rbegin(), ideal.rend());
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        do {
            std::vector<double> retrieved;
            for (int i : perm) retrieved.push_back(rel[i]);
            for (int k = 1; k <= n; ++k) {
                double idcg = brute_dcg(ideal, k);
                double expected = idcg == 0.0 ? 0.0 : brute_dcg(retrieved, k) / idcg;
                if (std::abs(ndcg_at_k(retrieved, ideal, k) - expected) > 1e-12) {
                    detail = "ndcg mismatch at n=" + std::to_string(n);
                    return false;
                }
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    if (std::abs(ndcg_at_k({0.5, 1.0, 0.0}, {1.0, 0.5, 0.0}, 3) - 0.85971869985219718) > 1e-6) {
        detail = "worked NDCG example off";
        return false;
    }

    // IoU against set arithmetic over every pair of subsets of a 5-universe
    const std::vector<std::string> universe = {"A", "B", "C", "D", "E"};
    for (int ma = 0; ma < 32; ++ma)
        for (int mb = 0; mb < 32; ++mb) {
            std::set<std::string> a, b;
            for (int i = 0; i < 5; ++i) {
                if (ma & (1 << i)) a.insert(universe[i]);
                if (mb & (1 << i)) b.insert(universe[i]);
            }
            int inter = __builtin_popcount(ma & mb);
            int uni = __builtin_popcount(ma | mb);
            double expected = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
            if (cui_iou(a, b) != expected) {
                detail = "iou mismatch";
                return false;
            }
        }

    // exact-search contract on 1000 random embeddings
    int n = 1000, d = 8, k = 10;
    Rng erng(52);
    Mat raw = random_normal(erng, n, d, 1.0);
    Graph g;
    Mat rows = g.val(g.l2_normalize_rows(g.leaf(raw, false)));
    EmbeddingMatrix emb{rows, {}};
    for (int i = 0; i < n; ++i) emb.ids.push_back("r" + std::to_string(i));
    Index index = build_index(emb);
    for (int q = 0; q < n; ++q) {
        std::vector<Neighbor> all;
        all.reserve(n - 1);
        for (int r = 0; r < n; ++r) {
            if (r == q) continue;
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += rows.at(q, c) * rows.at(r, c);
            all.push_back({r, acc});
        }
        std::sort(all.begin(), all.end(), [](const Neighbor& x, const Neighbor& y) {
            if (x.score != y.score) return x.score > y.score;
            return x.row < y.row;
        });
        auto fast = index.top_k_by_row(q, k);
        for (int i = 0; i < k; ++i)
            if (fast[i].row != all[i].row) {
                detail = "index/brute-force divergence at query " + std::to_string(q);
                return false;
            }
    }
    detail = "ndcg exhaustive to n=6, iou exhaustive on 2^5 pairs, index exact on 1000 rows";
    return true;
}

// ---- criterion 6: end-to-end convergence ----

bool run_convergence(std::string& detail) {
    char buf[160];
    for (uint64_t seed : {1ULL, 2ULL}) {
        auto records = testutil::make_planted_corpus({.n_pairs = 32,
                                                      .n_clusters = 4,
                                                      .d_img = 12,
                                                      .img_noise = 0.25,
                                                      .n_shared_words = 0,
                                                      .seed = seed});
        DualEncoder model(acceptance_model(true, seed, 12));
        TrainConfig cfg;
        cfg.batch_size = 8;
        cfg.epochs = 30;
        cfg.learning_rate = 1e-2;
        cfg.seed = seed;
        auto result = train(model, records, cfg);
        double p1 = modality_p_at_k(model, records, 1, 4);
        if (!(result.epoch_loss.back() < result.epoch_loss.front())) {
            std::snprintf(buf, sizeof(buf), "seed %llu: loss %.4f -> %.4f did not decrease",
                          (unsigned long long)seed, result.epoch_loss.front(),
                          result.epoch_loss.back());
            detail = buf;
            return false;
        }
        if (p1 < 0.9) {
            std::snprintf(buf, sizeof(buf), "seed %llu: post-training P@1 %.3f < 0.9",
                          (unsigned long long)seed, p1);
            detail = buf;
            return false;
        }
        std::snprintf(buf, sizeof(buf), "seed %llu: loss %.3f -> %.3f, P@1 %.3f; ",
                      (unsigned long long)seed, result.epoch_loss.front(),
                      result.epoch_loss.back(), p1);
        detail += buf;
    }
    return true;
}

// ---- criterion 7: ablation ordering ----

bool run_ablation_ordering(std::string& detail) {
    double sum_on = 0.0, sum_off = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto records = testutil::make_planted_corpus({.n_pairs = 48,
                                                      .n_clusters = 4,
                                                      .d_img = 12,
                                                      .img_noise = 0.25,
                                                      .n_shared_words = 0,
                                                      .seed = seed + 100});
        for (bool lp : {false, true}) {
            DualEncoder model(acceptance_model(lp, seed, 12));
            TrainConfig cfg;
            cfg.batch_size = 8;
            cfg.epochs = 30;
            cfg.learning_rate = 1e-2;
            cfg.seed = seed;
            cfg.use_learnable_prompt = lp;
            train(model, records, cfg);
            (lp ? sum_on : sum_off) += modality_p_at_k(model, records, 5, 4);
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "mean P@5 over 5 seeds: prompt on %.4f, prompt disabled %.4f", sum_on / 5,
                  sum_off / 5);
    detail = buf;
    return sum_on >= sum_off;
}

// ---- criterion 8: persistence ----

bool run_persistence(std::string& detail) {
    testutil::TempDir dir("acceptance_store");

    DualEncoder model(acceptance_model(true, 5, 12));
    TrainConfig tcfg;
    save_checkpoint(make_checkpoint(model, tcfg, "2026-01-01T00:00:00Z"), dir.file("ck.bin"));
    Checkpoint loaded = load_checkpoint(dir.file("ck.bin"));
    save_checkpoint(loaded, dir.file("ck2.bin"));
    if (slurp(dir.file("ck.bin")) != slurp(dir.file("ck2.bin")) ||
        slurp(dir.file("ck.json")) != slurp(dir.file("ck2.json"))) {
        detail = "checkpoint round trip is not byte-identical";
        return false;
    }

    Rng rng(61);
    Mat raw = random_normal(rng, 9, 6, 1.0);
    Graph g;
    EmbeddingMatrix emb{g.val(g.l2_normalize_rows(g.leaf(raw, false))), {}};
    for (int i = 0; i < 9; ++i) emb.ids.push_back("e" + std::to_string(i));
    save_embeddings(emb, dir.file("emb.bin"), "2026-01-01T00:00:00Z");
    ArtifactHeader header;
    EmbeddingMatrix emb2 = load_embeddings(dir.file("emb.bin"), &header);
    save_embeddings(emb2, dir.file("emb2.bin"), header.created_at);
    if (slurp(dir.file("emb.bin")) != slurp(dir.file("emb2.bin")) ||
        slurp(dir.file("emb.json")) != slurp(dir.file("emb2.json"))) {
        detail = "embedding dump round trip is not byte-identical";
        return false;
    }

    std::string bytes = slurp(dir.file("emb.bin"));
    std::ofstream(dir.file("emb.bin"), std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    try {
        load_embeddings(dir.file("emb.bin"));
        detail = "truncated payload was accepted";
        return false;
    } catch (const std::exception& e) {
        if (std::string(e.what()).find("payload length mismatch") == std::string::npos) {
            detail = std::string("unexpected error: ") + e.what();
            return false;
        }
    }
    detail = "checkpoint and embedding dumps byte-stable; truncation detected";
    return true;
}

// ---- criterion 9: CLI defaults ----

bool run_cli_defaults(std::string& detail) {
    testutil::TempDir dir("acceptance_cli");
    auto records = testutil::make_planted_corpus(
        {.n_pairs = 64, .n_clusters = 4, .d_img = 8, .img_noise = 0.3, .seed = 9});
    write_pair_dataset(records, dir.file("corpus.jsonl"));

    std::string cmd = std::string(PCLIP_CLI_PATH) + " train --dataset " + dir.file("corpus.jsonl") +
                      " --out-dir " + dir.file("out") + " > " + dir.file("stdout.txt") + " 2> " +
                      dir.file("stderr.txt");
    int rc = std::system(cmd.c_str());
    if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) {
        detail = "train subcommand failed: " + slurp(dir.file("stderr.txt"));
        return false;
    }
    std::ifstream in(dir.file("out/config.json"));
    json config;
    in >> config;
    if (config["train"]["learning_rate"] != 3e-6) {
        detail = "resolved learning_rate is not 3e-6";
        return false;
    }
    if (config["train"]["batch_size"] != 32) {
        detail = "resolved batch_size is not 32";
        return false;
    }
    if (config["train"]["epochs"] != 10) {
        detail = "resolved epochs is not 10";
        return false;
    }
    detail = "resolved-config JSON records lr 3e-6, batch 32, epochs 10";
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria = {
        {1, "loss correctness", 1.0, run_loss_correctness},
        {2, "gradient fidelity", 30.0, run_gradient_fidelity},
        {3, "freeze contract", 60.0, run_freeze_contract},
        {4, "prompt mechanics", 0.0, run_prompt_mechanics},
        {5, "metric oracles", 60.0, run_metric_oracles},
        {6, "end-to-end convergence", 120.0, run_convergence},
        {7, "ablation ordering", 0.0, run_ablation_ordering},
        {8, "persistence", 0.0, run_persistence},
        {9, "cli defaults", 0.0, run_cli_defaults},
    };

    int only = argc > 1 ? std::atoi(argv[1]) : 0;
    int failures = 0;
    for (const auto& criterion : criteria) {
        if (only != 0 && criterion.number != only) continue;
        auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (ok && criterion.budget_seconds > 0.0 && elapsed > criterion.budget_seconds) {
            ok = false;
            detail += " [exceeded " + std::to_string(criterion.budget_seconds) + "s budget]";
        }
        std::printf("[%s] criterion %d (%s, %.2fs): %s\n", ok ? "PASS" : "FAIL", criterion.number,
                    criterion.name.c_str(), elapsed, detail.c_str());
        if (!ok) ++failures;
    }
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
