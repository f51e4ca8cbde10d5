#include "pclip/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace pclip {

std::string backend_tier_name(BackendTier t) {
    return t == BackendTier::Minimal ? "minimal" : "transformer";
}

BackendTier backend_tier_from_name(const std::string& name) {
    if (name == "minimal") return BackendTier::Minimal;
    if (name == "transformer") return BackendTier::Transformer;
    throw std::runtime_error("unknown backend tier '" + name + "'");
}

TextBackend::TextBackend(const TextBackendConfig& cfg) : cfg_(cfg), tok_(default_tokenizer()) {
    if (cfg_.width < 2 || cfg_.width % 2 != 0)
        throw std::runtime_error("text backend width must be even and >= 2");
    if (cfg_.vocab_size < 2) throw std::runtime_error("text backend vocab_size must be >= 2");
    if (cfg_.max_context < 4096)
        throw std::runtime_error("toy text backend max_context must be >= 4096");
    Rng rng(cfg_.seed);
    embedding_ = random_normal(rng, cfg_.vocab_size, cfg_.width, 0.5);
    if (cfg_.tier == BackendTier::Transformer) {
        double w_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.width));
        int d = cfg_.width;
        int d_up = 2 * d;
        for (int l = 0; l < cfg_.n_layers; ++l) {
            Layer layer;
            layer.wq = random_normal(rng, d, d, w_scale);
            layer.wk = random_normal(rng, d, d, w_scale);
            layer.wv = random_normal(rng, d, d, w_scale);
            layer.wo = random_normal(rng, d, d, w_scale);
            layer.ln1_g = Mat(1, d);
            layer.ln2_g = Mat(1, d);
            for (auto& x : layer.ln1_g.a) x = 1.0;
            for (auto& x : layer.ln2_g.a) x = 1.0;
            layer.ln1_b = Mat(1, d);
            layer.ln2_b = Mat(1, d);
            layer.w_up = random_normal(rng, d, d_up, w_scale);
            layer.b_up = Mat(1, d_up);
            layer.w_down = random_normal(rng, d_up, d, 1.0 / std::sqrt(static_cast<double>(d_up)));
            layer.b_down = Mat(1, d);
            layers_.push_back(std::move(layer));
        }
        final_ln_g_ = Mat(1, d);
        for (auto& x : final_ln_g_.a) x = 1.0;
        final_ln_b_ = Mat(1, d);
    }
}

std::vector<int> TextBackend::tokenize(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& tok : tok_->tokenize(text))
        ids.push_back(static_cast<int>(fnv1a64(tok) % static_cast<uint64_t>(cfg_.vocab_size)));
    return ids;
}

Mat TextBackend::embed_tokens(const std::vector<int>& ids) const {
    Mat out(static_cast<int>(ids.size()), cfg_.width);
    for (size_t r = 0; r < ids.size(); ++r) {
        int id = ids[r];
        if (id < 0 || id >= cfg_.vocab_size) throw std::runtime_error("token id out of range");
        for (int c = 0; c < cfg_.width; ++c) out.at(static_cast<int>(r), c) = embedding_.at(id, c);
    }
    return out;
}

static Mat sinusoidal_positions(int length, int width) {
    Mat pos(length, width);
    for (int p = 0; p < length; ++p)
        for (int i = 0; i < width / 2; ++i) {
            double rate = std::pow(10000.0, -2.0 * i / width);
            pos.at(p, 2 * i) = std::sin(p * rate);
            pos.at(p, 2 * i + 1) = std::cos(p * rate);
        }
    return pos;
}

Graph::Id TextBackend::transform(Graph& g, Graph::Id seq) const {
    if (cfg_.tier == BackendTier::Minimal) return seq;
    int length = g.val(seq).rows;
    int d = cfg_.width;
    Graph::Id x = g.add(seq, g.leaf(sinusoidal_positions(length, d), false));
    double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (const auto& layer : layers_) {
        Graph::Id h = g.layer_norm(x, g.leaf(layer.ln1_g, false), g.leaf(layer.ln1_b, false));
        Graph::Id q = g.matmul(h, g.leaf(layer.wq, false));
        Graph::Id k = g.matmul(h, g.leaf(layer.wk, false));
        Graph::Id v = g.matmul(h, g.leaf(layer.wv, false));
        Graph::Id att = g.row_softmax(g.scale(g.matmul_nt(q, k), att_scale));
        Graph::Id ctx = g.matmul(g.matmul(att, v), g.leaf(layer.wo, false));
        x = g.add(x, ctx);
        Graph::Id h2 = g.layer_norm(x, g.leaf(layer.ln2_g, false), g.leaf(layer.ln2_b, false));
        Graph::Id up = g.silu(g.add_rowvec(g.matmul(h2, g.leaf(layer.w_up, false)),
                                           g.leaf(layer.b_up, false)));
        Graph::Id down = g.add_rowvec(g.matmul(up, g.leaf(layer.w_down, false)),
                                      g.leaf(layer.b_down, false));
        x = g.add(x, down);
    }
    return g.layer_norm(x, g.leaf(final_ln_g_, false), g.leaf(final_ln_b_, false));
}

Graph::Id TextBackend::pool(Graph& g, Graph::Id seq) const {
    return cfg_.tier == BackendTier::Minimal ? g.mean_rows(seq) : g.last_row(seq);
}

std::string TextBackend::param_digest() const {
    std::vector<const Mat*> mats = {&embedding_};
    for (const auto& l : layers_) {
        for (const Mat* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b,
                             &l.w_up, &l.b_up, &l.w_down, &l.b_down})
            mats.push_back(m);
    }
    if (cfg_.tier == BackendTier::Transformer) {
        mats.push_back(&final_ln_g_);
        mats.push_back(&final_ln_b_);
    }
    return hex_digest(mats);
}

SoftPrompt init_soft_prompt_from_phrase(const TextBackend& backend, const std::string& phrase) {
    auto ids = backend.tokenize(phrase);
    if (ids.empty()) throw std::runtime_error("soft prompt init phrase produced no tokens");
    SoftPrompt prompt;
    prompt.vectors = backend.embed_tokens(ids);
    prompt.init_phrase = phrase;
    return prompt;
}

AssembledPrompt assemble_prompt(Graph& g, const TextBackend& backend, const PromptTemplate& tpl,
                                Graph::Id prompt_node, const std::string& caption) {
    auto caption_ids = backend.tokenize(caption);
    if (caption_ids.empty()) throw std::runtime_error("caption produced no tokens");

    AssembledPrompt out;
    std::vector<Graph::Id> parts;
    auto prefix1_ids = backend.tokenize(tpl.prefix_1);
    out.len_prefix1 = static_cast<int>(prefix1_ids.size());
    if (!prefix1_ids.empty()) parts.push_back(g.leaf(backend.embed_tokens(prefix1_ids), false));
    if (prompt_node >= 0) {
        out.len_prompt = g.val(prompt_node).rows;
        if (g.val(prompt_node).cols != backend.width())
            throw std::runtime_error("soft prompt width does not match backend width");
        parts.push_back(prompt_node);
    }
    auto prefix2_ids = backend.tokenize(tpl.prefix_2);
    out.len_prefix2 = static_cast<int>(prefix2_ids.size());
    if (!prefix2_ids.empty()) parts.push_back(g.leaf(backend.embed_tokens(prefix2_ids), false));
    out.len_caption = static_cast<int>(caption_ids.size());
    parts.push_back(g.leaf(backend.embed_tokens(caption_ids), false));

    if (out.total() > backend.max_context())
        throw std::runtime_error(
            "assembled prompt length " + std::to_string(out.total()) + " exceeds max context " +
            std::to_string(backend.max_context()) + " (prefix1 " + std::to_string(out.len_prefix1) +
            ", prompt " + std::to_string(out.len_prompt) + ", prefix2 " +
            std::to_string(out.len_prefix2) + ", caption " + std::to_string(out.len_caption) + ")");

    out.seq = g.concat_rows(parts);
    return out;
}

Mlp Mlp::init(Rng& rng, int d_in, int d_hidden, int d_out) {
    Mlp m;
    m.w1 = random_normal(rng, d_in, d_hidden, 1.0 / std::sqrt(static_cast<double>(d_in)));
    m.b1 = random_normal(rng, 1, d_hidden, 0.05);
    m.w2 = random_normal(rng, d_hidden, d_out, 1.0 / std::sqrt(static_cast<double>(d_hidden)));
    m.b2 = random_normal(rng, 1, d_out, 0.05);
    return m;
}

MlpNodes mlp_leaves(Graph& g, const Mlp& m, bool trainable) {
    MlpNodes n;
    n.w1 = g.leaf(m.w1, trainable);
    n.b1 = g.leaf(m.b1, trainable);
    n.w2 = g.leaf(m.w2, trainable);
    n.b2 = g.leaf(m.b2, trainable);
    return n;
}

Graph::Id mlp_apply(Graph& g, const MlpNodes& n, Graph::Id x) {
    Graph::Id h = g.silu(g.add_rowvec(g.matmul(x, n.w1), n.b1));
    return g.add_rowvec(g.matmul(h, n.w2), n.b2);
}

DualEncoder::DualEncoder(const ModelConfig& cfg) : cfg_(cfg) {
    backend_ = std::make_unique<TextBackend>(cfg.backend);
    template_.prefix_1 = cfg.prefix_1;
    template_.prefix_2 = cfg.prefix_2;
    prompt_ = init_soft_prompt_from_phrase(*backend_, cfg.init_phrase);
    Rng rng(cfg.init_seed + 0x5eedULL);
    int head_hidden = cfg.head_hidden > 0 ? cfg.head_hidden : cfg.backend.width;
    head_ = Mlp::init(rng, cfg.backend.width, head_hidden, cfg.d_shared);
    image_ = Mlp::init(rng, cfg.image_input_dim, cfg.image_hidden, cfg.d_shared);
    log_tau_ = Mat(1, 1);
    if (cfg.tau_init <= 0.0) throw std::runtime_error("tau_init must be positive");
    log_tau_.at(0, 0) = std::log(cfg.tau_init);
}

double DualEncoder::tau() const {
    return std::exp(log_tau_.at(0, 0));
}

Mat DualEncoder::image_features(const ImageRef& image) const {
    if (std::holds_alternative<std::string>(image))
        throw std::runtime_error(
            "image_ref '" + std::get<std::string>(image) +
            "' is a path; the toy image encoder needs inline feature vectors");
    const auto& feats = std::get<std::vector<double>>(image);
    if (static_cast<int>(feats.size()) != cfg_.image_input_dim)
        throw std::runtime_error("image feature width mismatch: got " +
                                 std::to_string(feats.size()) + ", expected " +
                                 std::to_string(cfg_.image_input_dim));
    Mat m(1, cfg_.image_input_dim);
    for (size_t i = 0; i < feats.size(); ++i) m.at(0, static_cast<int>(i)) = feats[i];
    return m;
}

Graph::Id DualEncoder::encode_text_graph(Graph& g, Graph::Id prompt_node, const MlpNodes& head,
                                         const std::string& caption) const {
    AssembledPrompt asm_prompt = assemble_prompt(g, *backend_, template_, prompt_node, caption);
    Graph::Id pooled = backend_->encode_sequence(g, asm_prompt.seq);
    return g.l2_normalize_rows(mlp_apply(g, head, pooled));
}

Graph::Id DualEncoder::encode_image_graph(Graph& g, const MlpNodes& image,
                                          Graph::Id features) const {
    return g.l2_normalize_rows(mlp_apply(g, image, features));
}

Mat DualEncoder::encode_text(const std::string& caption) const {
    Graph g;
    Graph::Id prompt_node =
        cfg_.use_learnable_prompt ? g.leaf(prompt_.vectors, false) : -1;
    MlpNodes head = mlp_leaves(g, head_, false);
    return g.val(encode_text_graph(g, prompt_node, head, caption));
}

Mat DualEncoder::encode_image(const ImageRef& image) const {
    Graph g;
    MlpNodes nodes = mlp_leaves(g, image_, false);
    Graph::Id feats = g.leaf(image_features(image), false);
    return g.val(encode_image_graph(g, nodes, feats));
}

Mat DualEncoder::encode_images(const std::vector<ImageRef>& images) const {
    Mat out(static_cast<int>(images.size()), cfg_.d_shared);
    for (size_t i = 0; i < images.size(); ++i) {
        Mat row = encode_image(images[i]);
        for (int c = 0; c < cfg_.d_shared; ++c) out.at(static_cast<int>(i), c) = row.at(0, c);
    }
    return out;
}

DualEncoder::LossNodes DualEncoder::build_clip_loss(
    Graph& g, const std::vector<const PairRecord*>& batch) const {
    if (batch.empty()) throw std::runtime_error("build_clip_loss: empty batch");
    LossNodes nodes;
    nodes.head = mlp_leaves(g, head_, true);
    nodes.image = mlp_leaves(g, image_, true);
    nodes.prompt = cfg_.use_learnable_prompt ? g.leaf(prompt_.vectors, true) : -1;
    nodes.log_tau = g.leaf(log_tau_, true);

    Mat feats(static_cast<int>(batch.size()), cfg_.image_input_dim);
    for (size_t i = 0; i < batch.size(); ++i) {
        Mat row = image_features(batch[i]->image_ref);
        for (int c = 0; c < cfg_.image_input_dim; ++c)
            feats.at(static_cast<int>(i), c) = row.at(0, c);
    }
    nodes.v = encode_image_graph(g, nodes.image, g.leaf(feats, false));

    std::vector<Graph::Id> text_rows;
    text_rows.reserve(batch.size());
    for (const PairRecord* rec : batch)
        text_rows.push_back(encode_text_graph(g, nodes.prompt, nodes.head, rec->caption));
    nodes.t = g.concat_rows(text_rows);

    nodes.similarity = g.matmul_nt(nodes.v, nodes.t);  // unit rows => cosine
    Graph::Id logits = g.temp_scale(nodes.similarity, nodes.log_tau);
    nodes.loss_i2t = g.info_nce_diag_rows(logits);
    nodes.loss_t2i = g.info_nce_diag_cols(logits);
    nodes.loss = g.add(nodes.loss_i2t, nodes.loss_t2i);
    return nodes;
}

std::vector<Mat*> DualEncoder::trainable_params() {
    std::vector<Mat*> params;
    if (cfg_.use_learnable_prompt) params.push_back(&prompt_.vectors);
    for (Mat* m : {&head_.w1, &head_.b1, &head_.w2, &head_.b2}) params.push_back(m);
    for (Mat* m : {&image_.w1, &image_.b1, &image_.w2, &image_.b2}) params.push_back(m);
    params.push_back(&log_tau_);
    return params;
}

std::vector<const Mat*> DualEncoder::all_params() const {
    return {&prompt_.vectors, &head_.w1, &head_.b1, &head_.w2, &head_.b2,
            &image_.w1, &image_.b1, &image_.w2, &image_.b2, &log_tau_};
}

}  // namespace pclip
