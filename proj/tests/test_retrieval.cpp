#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"

#include "pclip/retrieval.hpp"
#include "pclip/training.hpp"
#include "testutil.hpp"

using namespace pclip;

namespace {

EmbeddingMatrix angles_to_embeddings(const std::vector<double>& angles,
                                     const std::string& prefix = "e") {
    EmbeddingMatrix emb;
    emb.rows = Mat(static_cast<int>(angles.size()), 2);
    for (size_t i = 0; i < angles.size(); ++i) {
        emb.rows.at(static_cast<int>(i), 0) = std::cos(angles[i]);
        emb.rows.at(static_cast<int>(i), 1) = std::sin(angles[i]);
        emb.ids.push_back(prefix + std::to_string(i));
    }
    return emb;
}

// Literal DCG formula, independent of the implementation.
double brute_dcg(const std::vector<double>& rel, int k) {
    double acc = 0.0;
    for (int r = 1; r <= std::min<int>(k, static_cast<int>(rel.size())); ++r)
        acc += rel[r - 1] / std::log2(r + 1.0);
    return acc;
}

}  // namespace

TEST_CASE("index: self-exclusion and exact-match ranking") {
    Mat rows(3, 3);
    rows.at(0, 0) = 1.0;
    rows.at(1, 1) = 1.0;
    rows.at(2, 2) = 1.0;
    Index index = build_index({rows, {"a", "b", "c"}});

    auto neighbors = index.top_k_by_row(0, 3);
    CHECK(neighbors.size() == 2);  // row 0 absent from its own result
    for (const auto& nb : neighbors) CHECK(nb.row != 0);

    Mat query(1, 3);
    query.at(0, 1) = 1.0;  // equals row "b"
    auto hits = index.top_k(query, 2);
    CHECK(hits[0].row == 1);
    CHECK(hits[0].score == doctest::Approx(1.0));
}

TEST_CASE("index equals brute force on random embeddings") {
    Rng rng(55);
    int n = 100, d = 8, k = 10;
    Mat raw = random_normal(rng, n, d, 1.0);
    Graph g;
    Mat rows = g.val(g.l2_normalize_rows(g.leaf(raw, false)));
    EmbeddingMatrix emb{rows, {}};
    for (int i = 0; i < n; ++i) emb.ids.push_back("r" + std::to_string(i));
    Index index = build_index(emb);

    for (int q = 0; q < n; ++q) {
        // brute force: every pairwise dot product, full sort, same tie rule
        std::vector<Neighbor> all;
        for (int r = 0; r < n; ++r) {
            if (r == q) continue;
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += rows.at(q, c) * rows.at(r, c);
            all.push_back({r, acc});
        }
        std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.row < b.row;
        });
        auto fast = index.top_k_by_row(q, k);
        REQUIRE(fast.size() == static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            CHECK(fast[i].row == all[i].row);
            CHECK(fast[i].score == doctest::Approx(all[i].score).epsilon(1e-12));
        }
    }
}

TEST_CASE("index rejects duplicate ids and non-unit rows") {
    Mat rows(2, 2);
    rows.at(0, 0) = 1.0;
    rows.at(1, 1) = 1.0;
    CHECK_THROWS_WITH_AS(build_index({rows, {"a", "a"}}), doctest::Contains("duplicate id"),
                         std::runtime_error);
    Mat bad = rows;
    bad.at(0, 0) = 2.0;
    CHECK_THROWS_WITH_AS(build_index({bad, {"a", "b"}}),
                         doctest::Contains("not unit-normalized"), std::runtime_error);
    Mat rows3(3, 2);
    CHECK_THROWS_WITH_AS(build_index({rows3, {"a", "b"}}), doctest::Contains("id count"),
                         std::runtime_error);
}

TEST_CASE("cui_iou set arithmetic") {
    CHECK(cui_iou({"A", "B", "C"}, {"A", "B", "C"}) == 1.0);
    CHECK(cui_iou({"A"}, {"B"}) == 0.0);
    CHECK(cui_iou({"A", "B", "C"}, {"B", "C", "D"}) == 0.5);
    CHECK(cui_iou({}, {}) == 0.0);
}

TEST_CASE("cui_iou matches set arithmetic exhaustively over a 5-element universe") {
    const std::vector<std::string> universe = {"A", "B", "C", "D", "E"};
    for (int ma = 0; ma < 32; ++ma) {
        for (int mb = 0; mb < 32; ++mb) {
            std::set<std::string> a, b;
            for (int i = 0; i < 5; ++i) {
                if (ma & (1 << i)) a.insert(universe[i]);
                if (mb & (1 << i)) b.insert(universe[i]);
            }
            int inter = __builtin_popcount(ma & mb);
            int uni = __builtin_popcount(ma | mb);
            double expected = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
            double got = cui_iou(a, b);
            CHECK(got == expected);
            CHECK(got == cui_iou(b, a));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
            CHECK((got == 1.0) == (ma == mb && ma != 0));
        }
    }
}

TEST_CASE("ndcg basics and the worked example") {
    CHECK(ndcg_at_k({1.0, 0.5, 0.0}, {1.0, 0.5, 0.0}, 3) == doctest::Approx(1.0));
    // frozen from the hand-computed DCG oracle
    CHECK(std::abs(ndcg_at_k({0.5, 1.0, 0.0}, {1.0, 0.5, 0.0}, 3) - 0.85971869985219718) < 1e-6);
    CHECK(ndcg_at_k({0.0, 0.0}, {0.0, 0.0}, 2) == 0.0);
    CHECK_THROWS_WITH_AS(ndcg_at_k({1.0}, {1.0}, 0), doctest::Contains("k must be >= 1"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(ndcg_at_k({1.0}, {0.5, 1.0}, 1), doctest::Contains("sorted descending"),
                         std::runtime_error);
}

TEST_CASE("ndcg equals brute force over all permutations of up to 6 candidates") {
    Rng rng(66);
    for (int n = 1; n <= 6; ++n) {
        std::vector<double> rel(n);
        for (auto& x : rel) x = std::round(rng.uniform() * 4.0) / 4.0;  // ties likely
        std::vector<double> ideal = rel;
        std::sort(ideal.rbegin(), ideal.rend());

        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        std::sort(perm.begin(), perm.end());
        do {
            std::vector<double> retrieved;
            for (int i : perm) retrieved.push_back(rel[i]);
            for (int k = 1; k <= n; ++k) {
                double idcg = brute_dcg(ideal, k);
                double expected = idcg == 0.0 ? 0.0 : brute_dcg(retrieved, k) / idcg;
                CHECK(ndcg_at_k(retrieved, ideal, k) == doctest::Approx(expected).epsilon(1e-12));
            }
            // any relevance-descending order scores exactly 1 (tie freedom)
            std::vector<double> descending = retrieved;
            std::sort(descending.rbegin(), descending.rend());
            for (int k = 1; k <= n; ++k)
                if (brute_dcg(ideal, k) > 0.0)
                    CHECK(ndcg_at_k(descending, ideal, k) == doctest::Approx(1.0).epsilon(1e-12));
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("cui_at_k is 1.0 when similarity order equals IoU order") {
    // Sliding-window CUI sets: IoU(i,j) = (W-|i-j|)/(W+|i-j|) depends only on
    // the index distance, and equal angular gaps make cosine similarity
    // strictly decreasing in that distance. Distance ties carry equal
    // relevance, so every retrieved order is ideal.
    int n = 8, w = 8;
    std::vector<PairRecord> records(n);
    std::vector<double> angles(n);
    for (int i = 0; i < n; ++i) {
        records[i].id = "e" + std::to_string(i);
        for (int c = i; c < i + w; ++c) records[i].cuis.insert("C" + std::to_string(c));
        angles[i] = 0.3 * i;
    }
    Index index = build_index(angles_to_embeddings(angles));
    auto report = cui_at_k(index, records, {1, 2, 5});
    CHECK(report.n_queries == n);
    for (const auto& kr : report.per_k) CHECK(kr.value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cui_at_k matches an independent full computation on a 6-record fixture") {
    Rng rng(77);
    int n = 6, d = 4;
    Mat raw = random_normal(rng, n, d, 1.0);
    Graph g;
    Mat rows = g.val(g.l2_normalize_rows(g.leaf(raw, false)));
    EmbeddingMatrix emb{rows, {}};
    std::vector<PairRecord> records(n);
    for (int i = 0; i < n; ++i) {
        emb.ids.push_back("r" + std::to_string(i));
        records[i].id = "r" + std::to_string(i);
        int n_cuis = rng.uniform_int(1, 4);
        for (int c = 0; c < n_cuis; ++c)
            records[i].cuis.insert("C" + std::to_string(rng.uniform_int(0, 5)));
    }
    Index index = build_index(emb);
    std::vector<int> ks = {1, 3, 5};
    auto report = cui_at_k(index, records, ks);

    // independent route: pairwise sims, full sort, literal DCG
    for (size_t ki = 0; ki < ks.size(); ++ki) {
        int k = ks[ki];
        double total = 0.0;
        for (int q = 0; q < n; ++q) {
            std::vector<std::pair<double, int>> sims;
            std::vector<double> ious;
            for (int r = 0; r < n; ++r) {
                if (r == q) continue;
                double acc = 0.0;
                for (int c = 0; c < d; ++c) acc += rows.at(q, c) * rows.at(r, c);
                sims.push_back({acc, r});
            }
            std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::vector<double> retrieved;
            for (const auto& [s, r] : sims)
                retrieved.push_back(cui_iou(records[q].cuis, records[r].cuis));
            std::vector<double> ideal = retrieved;
            std::sort(ideal.rbegin(), ideal.rend());
            double idcg = brute_dcg(ideal, k);
            total += idcg == 0.0 ? 0.0 : brute_dcg(retrieved, k) / idcg;
        }
        CHECK(report.per_k[ki].value == doctest::Approx(total / n).epsilon(1e-12));
    }
}

TEST_CASE("cui_at_k edge cases") {
    // single query, single candidate with IoU > 0: the only ranking is ideal
    std::vector<PairRecord> records(2);
    records[0].id = "e0";
    records[0].cuis = {"A", "B"};
    records[1].id = "e1";
    records[1].cuis = {"B"};
    Index index = build_index(angles_to_embeddings({0.0, 1.0}));
    auto report = cui_at_k(index, records, {5});
    CHECK(report.per_k[0].value == doctest::Approx(1.0));

    // empty-CUI queries are excluded and counted
    records[1].cuis.clear();
    report = cui_at_k(index, records, {5});
    CHECK(report.n_queries == 1);
    CHECK(report.n_excluded == 1);
    CHECK(report.excluded_reasons.at("empty_cui_set") == 1);

    Mat one(1, 2);
    one.at(0, 0) = 1.0;
    Index tiny = build_index({one, {"only"}});
    CHECK_THROWS_WITH_AS(cui_at_k(tiny, records, {5}), doctest::Contains("empty candidate pool"),
                         std::runtime_error);

    CHECK_THROWS_WITH_AS(cui_at_k(index, {}, {5}), doctest::Contains("no record"),
                         std::runtime_error);
}

TEST_CASE("precision_at_k on a hand-enumerated two-cluster fixture") {
    // 6 records of class a packed near angle 0, 4 of class b near angle 2.
    std::vector<double> angles = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 2.0, 2.05, 2.1, 2.15};
    EmbeddingMatrix emb = angles_to_embeddings(angles);
    std::map<std::string, std::string> keys;
    for (int i = 0; i < 10; ++i) keys[emb.ids[i]] = i < 6 ? "a" : "b";
    Index index = build_index(emb);

    auto report = precision_at_k(index, keys, "modality", {5, 50});
    CHECK(report.n_queries == 10);
    // a-queries: top-5 all same class; b-queries: 3 of top-5 share the class
    CHECK(report.per_k[0].value == doctest::Approx((6 * 1.0 + 4 * 0.6) / 10).epsilon(1e-12));
    CHECK(report.per_k[0].n_flagged == 0);
    // K=50 exceeds the pool: scored over the 9 available and flagged
    CHECK(report.per_k[1].n_flagged == 10);
    CHECK(report.per_k[1].value ==
          doctest::Approx((6 * (5.0 / 9.0) + 4 * (3.0 / 9.0)) / 10).epsilon(1e-12));
}

TEST_CASE("precision_at_k saturation, unique classes, and unlabeled handling") {
    std::vector<double> angles = {0.0, 0.1, 0.2, 0.3, 0.4};
    EmbeddingMatrix emb = angles_to_embeddings(angles);
    Index index = build_index(emb);

    std::map<std::string, std::string> keys;
    for (const auto& id : emb.ids) keys[id] = "same";
    auto report = precision_at_k(index, keys, "organ", {4});
    CHECK(report.per_k[0].value == doctest::Approx(1.0));

    // a query whose class is unique in the pool scores 0 at every K
    keys[emb.ids[2]] = "unique";
    report = precision_at_k(index, keys, "organ", {1, 2, 4});
    for (const auto& kr : report.per_k) {
        double expected_unique = 0.0;
        // remaining 4 queries retrieve among labeled candidates only
        (void)expected_unique;
        CHECK(kr.value <= 1.0);
    }
    // check the unique query directly: no neighbor shares "unique"
    std::vector<bool> allowed(5, true);
    auto neighbors = index.top_k_by_row(2, 4, &allowed);
    for (const auto& nb : neighbors) CHECK(keys[emb.ids[nb.row]] != "unique");

    // unlabeled records are excluded as queries and as candidates
    keys.erase(emb.ids[4]);
    report = precision_at_k(index, keys, "organ", {2});
    CHECK(report.n_queries == 4);
    CHECK(report.n_excluded == 1);
    CHECK(report.excluded_reasons.at("missing_label") == 1);
}

TEST_CASE("a query whose class is unique in the pool scores 0 at every K") {
    EmbeddingMatrix emb = angles_to_embeddings({0.0, 0.7, 1.4});
    std::map<std::string, std::string> keys = {
        {emb.ids[0], "u"}, {emb.ids[1], "v"}, {emb.ids[2], "v"}};
    Index index = build_index(emb);
    // restrict queries to the unique-class record by dropping the others'
    // contributions: with all three labeled, the "u" query can never hit
    for (int k : {1, 2, 5}) {
        std::map<std::string, std::string> solo = {{emb.ids[0], "u"},
                                                   {emb.ids[1], "v"},
                                                   {emb.ids[2], "w"}};
        auto report = precision_at_k(index, solo, "organ", {k});
        CHECK(report.per_k[0].value == 0.0);  // every class unique => all zero
    }
}

TEST_CASE("run_eval is deterministic and handles the empty task list") {
    auto records = testutil::make_planted_corpus(
        {.n_pairs = 24, .n_clusters = 4, .d_img = 8, .img_noise = 0.2, .seed = 21});
    ModelConfig mcfg;
    mcfg.backend.width = 16;
    mcfg.backend.vocab_size = 512;
    mcfg.backend.seed = 5;
    mcfg.d_shared = 8;
    mcfg.image_input_dim = 8;
    mcfg.init_seed = 2;
    DualEncoder model(mcfg);
    TrainConfig tcfg;
    tcfg.batch_size = 8;
    tcfg.epochs = 20;
    tcfg.learning_rate = 1e-2;
    tcfg.seed = 3;
    train(model, records, tcfg);

    CategoryMap modality = testutil::planted_modality_map(4);
    CategoryMap organ = testutil::planted_organ_map(4);
    EvalInputs inputs;
    inputs.pair_records = &records;
    inputs.modality_map = &modality;
    inputs.organ_map = &organ;

    std::vector<TaskKind> tasks = {TaskKind::CuiNdcg, TaskKind::Modality, TaskKind::Organ,
                                   TaskKind::ModalityAndOrgan};
    auto a = run_eval(model, inputs, tasks, {5, 10, 50});
    auto b = run_eval(model, inputs, tasks, {5, 10, 50});
    REQUIRE(a.size() == tasks.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].task == b[i].task);
        CHECK(a[i].n_queries == b[i].n_queries);
        for (size_t k = 0; k < a[i].per_k.size(); ++k)
            CHECK(a[i].per_k[k].value == b[i].per_k[k].value);
    }
    CHECK(a[0].task == "cui_ndcg");
    CHECK(a[1].task == "modality");

    // converged planted clusters: precision does not improve with deeper K
    for (size_t i = 1; i < a.size(); ++i) {
        CHECK(a[i].per_k[0].k == 5);
        CHECK(a[i].per_k[2].k == 50);
        CHECK(a[i].per_k[0].value >= a[i].per_k[2].value - 1e-12);
    }
    for (const auto& rep : a)
        for (const auto& kr : rep.per_k) {
            CHECK(kr.value >= 0.0);
            CHECK(kr.value <= 1.0);
        }

    CHECK(run_eval(model, inputs, {}, {5}).empty());
}

TEST_CASE("irma task keys use the anatomy axis") {
    std::vector<IrmaRecord> records(3);
    records[0].id = "x0";
    records[0].irma_code = "1121-110-414-700";
    records[1].id = "x1";
    records[1].irma_code = "2220-320-414-701";
    records[2].id = "x2";
    records[2].irma_code = "1121-110-500-700";
    auto keys = irma_task_keys(records);
    CHECK(keys["x0"] == "414");
    CHECK(keys["x1"] == "414");
    CHECK(keys["x2"] == "500");
}
