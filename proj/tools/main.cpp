#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pclip/pipeline.hpp"

namespace {

struct CliState {
    pclip::IngestOptions ingest;
    std::string ingest_schema = "rocov2-jsonl";

    pclip::TrainOptions train;
    std::string train_split = "train";
    bool no_llm_backend = false;
    bool no_learnable_prompt = false;

    pclip::EmbedOptions embed;
    std::string embed_schema = "rocov2-jsonl";

    pclip::EvalOptions eval;
    std::vector<std::string> eval_tasks = {"cui_ndcg"};

    pclip::StatsOptions stats;
};

int run_ingest(CliState& st) {
    st.ingest.schema = pclip::schema_from_name(st.ingest_schema);
    auto result = pclip::cmd_ingest(st.ingest);
    std::printf("ingested %d records into %s\n", result.n_records, st.ingest.out_dir.c_str());
    return 0;
}

int run_train(CliState& st) {
    if (st.train_split == "all")
        st.train.split_filter = std::nullopt;
    else
        st.train.split_filter = pclip::split_from_name(st.train_split);
    st.train.train.use_llm_backend = !st.no_llm_backend;
    st.train.train.use_learnable_prompt = !st.no_learnable_prompt;
    auto result = pclip::cmd_train(st.train);
    std::printf("trained %d steps, first-epoch loss %.6f, last-epoch loss %.6f\n",
                result.result.steps, result.result.epoch_loss.front(),
                result.result.epoch_loss.back());
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    return 0;
}

int run_embed(CliState& st) {
    st.embed.schema = pclip::schema_from_name(st.embed_schema);
    auto result = pclip::cmd_embed(st.embed);
    std::printf("embedded %d rows into %s\n", result.n_rows, result.embeddings_path.c_str());
    return 0;
}

int run_eval(CliState& st) {
    st.eval.tasks.clear();
    for (const auto& name : st.eval_tasks) st.eval.tasks.push_back(pclip::task_from_name(name));
    auto result = pclip::cmd_eval(st.eval);
    std::fputs(result.table.c_str(), stdout);
    return 0;
}

int run_stats(CliState& st) {
    auto result = pclip::cmd_stats(st.stats);
    std::fputs(result.table.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-tuned dual-encoder contrastive training and zero-shot "
                 "image-to-image retrieval evaluation"};
    app.require_subcommand(1);
    CliState st;

    auto* ingest = app.add_subcommand("ingest", "normalize a dataset file and report on it");
    ingest->add_option("--input", st.ingest.input, "dataset file")->required();
    ingest->add_option("--schema", st.ingest_schema, "rocov2-jsonl | irma-tsv");
    ingest->add_option("--out-dir", st.ingest.out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "contrastive training over image-caption pairs");
    train->add_option("--dataset", st.train.dataset, "pair-record JSONL")->required();
    train->add_option("--out-dir", st.train.out_dir, "output directory")->required();
    train->add_option("--split", st.train_split, "train | valid | test | all (default train)");
    train->add_option("--batch-size", st.train.train.batch_size, "batch size (default 32)");
    train->add_option("--epochs", st.train.train.epochs, "epochs (default 10)");
    train->add_option("--lr", st.train.train.learning_rate, "learning rate (default 3e-6)");
    train->add_option("--seed", st.train.train.seed, "seed for init and shuffling");
    train->add_flag("--no-llm-backend", st.no_llm_backend,
                    "use the minimal mean-pooled text backend instead of the transformer");
    train->add_flag("--no-learnable-prompt", st.no_learnable_prompt,
                    "drop the soft prompt from the input and the optimizer");
    train->add_flag("--clamp-tau", st.train.train.clamp_log_tau, "cap |log tau| at ln(100)");
    train->add_option("--tau-init", st.train.model.tau_init, "initial temperature (default 0.07)");
    train->add_option("--dim-text", st.train.model.backend.width, "text backend width");
    train->add_option("--dim-shared", st.train.model.d_shared, "shared embedding width");
    train->add_option("--head-hidden", st.train.model.head_hidden,
                      "projection head hidden width (0 => text width)");
    train->add_option("--image-hidden", st.train.model.image_hidden, "image encoder hidden width");
    train->add_option("--vocab-size", st.train.model.backend.vocab_size, "toy vocab size");
    train->add_option("--layers", st.train.model.backend.n_layers, "transformer layers");
    train->add_option("--backend-seed", st.train.model.backend.seed, "frozen backend seed");
    train->add_option("--max-context", st.train.model.backend.max_context, "token capacity");
    train->add_option("--prefix1", st.train.model.prefix_1, "static prefix before the prompt");
    train->add_option("--prefix2", st.train.model.prefix_2, "static prefix before the caption");
    train->add_option("--init-phrase", st.train.model.init_phrase, "soft prompt init phrase");

    auto* embed = app.add_subcommand("embed", "embed a dataset with a trained checkpoint");
    embed->add_option("--checkpoint", st.embed.checkpoint, "checkpoint .bin")->required();
    embed->add_option("--dataset", st.embed.dataset, "dataset file")->required();
    embed->add_option("--schema", st.embed_schema, "rocov2-jsonl | irma-tsv");
    embed->add_option("--out-dir", st.embed.out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "retrieval metrics over an embedding index");
    eval->add_option("--embeddings", st.eval.embeddings, "embedding dump .bin");
    eval->add_option("--checkpoint", st.eval.checkpoint, "checkpoint .bin (embeds on the fly)");
    eval->add_option("--dataset", st.eval.dataset, "pair-record JSONL");
    eval->add_option("--irma-dataset", st.eval.irma_dataset, "IRMA TSV");
    eval->add_option("--modality-map", st.eval.modality_map, "T060 category map JSON");
    eval->add_option("--organ-map", st.eval.organ_map, "T023 category map JSON");
    eval->add_option("--tasks", st.eval_tasks,
                     "cui_ndcg,modality,organ,modality_and_organ,irma_organ")
        ->delimiter(',');
    eval->add_option("--ks", st.eval.ks, "cutoffs (default 5,10,50)")->delimiter(',');
    eval->add_option("--out-dir", st.eval.out_dir, "output directory")->required();

    auto* stats = app.add_subcommand("stats", "caption token-length statistics");
    stats->add_option("--dataset", st.stats.dataset, "pair-record JSONL")->required();
    stats->add_option("--limits", st.stats.limits, "token limits (default 77,512)")->delimiter(',');
    stats->add_option("--bucket-width", st.stats.bucket_width, "histogram bucket width");
    stats->add_option("--plot", st.stats.plot_path, "write an ASCII histogram to this file");
    stats->add_option("--out-dir", st.stats.out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return run_ingest(st);
        if (train->parsed()) return run_train(st);
        if (embed->parsed()) return run_embed(st);
        if (eval->parsed()) return run_eval(st);
        if (stats->parsed()) return run_stats(st);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
