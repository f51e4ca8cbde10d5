#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pclip/corpus.hpp"
#include "pclip/graph.hpp"
#include "pclip/mat.hpp"
#include "pclip/tokenizer.hpp"

namespace pclip {

// ---- text backend ----

// "transformer" is the LLM-style tier with last-position pooling;
// "minimal" is a mean-pooled embedding table standing in for a small
// baseline text encoder. Both are frozen at construction.
enum class BackendTier { Minimal, Transformer };

std::string backend_tier_name(BackendTier t);
BackendTier backend_tier_from_name(const std::string& name);

struct TextBackendConfig {
    BackendTier tier = BackendTier::Transformer;
    int width = 32;        // D_txt
    int vocab_size = 4096;
    int n_layers = 2;      // transformer tier only
    int max_context = 4096;
    uint64_t seed = 1234;  // frozen parameters are generated from this

    bool operator==(const TextBackendConfig&) const = default;
};

// Frozen text backend: deterministic tokenize/embed, plus a graph-building
// transform so gradient can flow through it into the soft prompt without
// ever accumulating on backend parameters.
class TextBackend {
public:
    explicit TextBackend(const TextBackendConfig& cfg);

    std::vector<int> tokenize(const std::string& text) const;
    Mat embed_tokens(const std::vector<int>& ids) const;  // [L, width]

    Graph::Id transform(Graph& g, Graph::Id seq) const;
    Graph::Id pool(Graph& g, Graph::Id seq) const;  // [1, width]
    Graph::Id encode_sequence(Graph& g, Graph::Id seq) const {
        return pool(g, transform(g, seq));
    }

    int width() const { return cfg_.width; }
    int max_context() const { return cfg_.max_context; }
    const TextBackendConfig& config() const { return cfg_; }
    std::string param_digest() const;

private:
    struct Layer {
        Mat wq, wk, wv, wo;
        Mat ln1_g, ln1_b, ln2_g, ln2_b;
        Mat w_up, b_up, w_down, b_down;
    };

    TextBackendConfig cfg_;
    Mat embedding_;  // vocab x width
    std::vector<Layer> layers_;
    Mat final_ln_g_, final_ln_b_;
    std::shared_ptr<const Tokenizer> tok_;

    friend struct BackendProbe;  // test-only access to frozen parameters
};

// ---- soft prompt and templates ----

struct SoftPrompt {
    Mat vectors;  // K x D_txt, trainable
    std::string init_phrase;

    int k() const { return vectors.rows; }
};

// K = token count of the phrase; rows are the backend embeddings of those
// tokens, row for row.
SoftPrompt init_soft_prompt_from_phrase(const TextBackend& backend, const std::string& phrase);

struct PromptTemplate {
    std::string prefix_1 = "Instruct:";
    std::string prefix_2 = "query:";
};

// Assembled order is fixed: prefix_1, soft prompt rows, prefix_2, caption.
struct AssembledPrompt {
    Graph::Id seq = -1;  // [L1+K+L2+Lc, D_txt]
    int len_prefix1 = 0;
    int len_prompt = 0;
    int len_prefix2 = 0;
    int len_caption = 0;

    int total() const { return len_prefix1 + len_prompt + len_prefix2 + len_caption; }
};

// prompt_node: graph leaf holding the soft prompt rows, or -1 to assemble
// without a soft prompt (K=0 / prompt-disabled ablation).
AssembledPrompt assemble_prompt(Graph& g, const TextBackend& backend,
                                const PromptTemplate& tpl, Graph::Id prompt_node,
                                const std::string& caption);

// ---- two-layer MLP (projection head and toy image encoder) ----

struct Mlp {
    Mat w1, b1, w2, b2;  // [d_in,h], [1,h], [h,d_out], [1,d_out]

    static Mlp init(Rng& rng, int d_in, int d_hidden, int d_out);
    int input_dim() const { return w1.rows; }
    int output_dim() const { return w2.cols; }
};

struct MlpNodes {
    Graph::Id w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

MlpNodes mlp_leaves(Graph& g, const Mlp& m, bool trainable);
Graph::Id mlp_apply(Graph& g, const MlpNodes& n, Graph::Id x);  // silu between layers

// ---- the full dual-encoder model ----

struct ModelConfig {
    TextBackendConfig backend;
    std::string prefix_1 = "Instruct:";
    std::string prefix_2 = "query:";
    std::string init_phrase =
        "Create a dense embedding that represents the medical meaning of this text "
        "for image retrieval.";
    bool use_learnable_prompt = true;
    int d_shared = 16;
    int head_hidden = 0;  // 0 => backend width
    int image_input_dim = 8;
    int image_hidden = 32;
    double tau_init = 0.07;
    uint64_t init_seed = 0;  // trainable parameter init

    bool operator==(const ModelConfig&) const = default;
};

// Frozen backend + soft prompt + projection head on the text tower, trainable
// MLP on the image tower, learnable log-space temperature. Embeddings from
// both towers are unit-normalized into the shared space.
class DualEncoder {
public:
    explicit DualEncoder(const ModelConfig& cfg);

    Mat encode_text(const std::string& caption) const;        // [1, d_shared], unit row
    Mat encode_image(const ImageRef& image) const;            // [1, d_shared], unit row
    Mat encode_images(const std::vector<ImageRef>& images) const;  // [N, d_shared]

    struct LossNodes {
        Graph::Id v = -1;  // [N, d_shared] image rows
        Graph::Id t = -1;  // [N, d_shared] text rows
        Graph::Id similarity = -1;
        Graph::Id loss_i2t = -1, loss_t2i = -1, loss = -1;
        MlpNodes head, image;
        Graph::Id prompt = -1;  // -1 when the prompt is disabled
        Graph::Id log_tau = -1;
    };
    LossNodes build_clip_loss(Graph& g, const std::vector<const PairRecord*>& batch) const;

    // Canonical parameter order: soft prompt, head w1/b1/w2/b2,
    // image w1/b1/w2/b2, log_tau. trainable_params honors the prompt
    // ablation; all_params always includes the prompt.
    std::vector<Mat*> trainable_params();
    std::vector<const Mat*> all_params() const;

    const TextBackend& backend() const { return *backend_; }
    const PromptTemplate& prompt_template() const { return template_; }
    const SoftPrompt& soft_prompt() const { return prompt_; }
    SoftPrompt& soft_prompt() { return prompt_; }
    const Mlp& head() const { return head_; }
    const Mlp& image_encoder() const { return image_; }
    Mat& log_tau_param() { return log_tau_; }
    double tau() const;
    const ModelConfig& config() const { return cfg_; }

    std::string prompt_digest() const { return hex_digest(prompt_.vectors); }
    std::string backend_digest() const { return backend_->param_digest(); }

private:
    Graph::Id encode_text_graph(Graph& g, Graph::Id prompt_node, const MlpNodes& head,
                                const std::string& caption) const;
    Graph::Id encode_image_graph(Graph& g, const MlpNodes& image, Graph::Id features) const;
    Mat image_features(const ImageRef& image) const;

    ModelConfig cfg_;
    std::unique_ptr<TextBackend> backend_;
    PromptTemplate template_;
    SoftPrompt prompt_;
    Mlp head_;
    Mlp image_;
    Mat log_tau_;  // 1x1

    friend struct CheckpointCodec;
};

}  // namespace pclip
