#pragma once

// Transformer encoder-decoder fed by memory responses.
//
//   base: encoder <- projected patches, decoder <- token embeddings
//   mem:  each modality queries its own memory; responses replace the inputs
//   cmn:  both modalities query one shared memory
//
// Layers are pre-norm with a final norm on each stack. Token embeddings are
// scaled by sqrt(d) and receive sinusoidal positions before memory querying.
// Visual positions are added to the encoder input after the memory path.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmn/memory.hpp"
#include "cmn/random.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

enum class Variant { Base, Mem, Cmn };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ModelConfig {
    Variant variant = Variant::Cmn;
    std::size_t layers = 3;
    std::size_t heads = 8;
    std::size_t d_model = 512;
    std::size_t d_ff = 2048;
    std::size_t vocab_size = 0;
    std::size_t max_positions = 100;
    std::size_t memory_slots = 2048;
    std::size_t topk = 32;
    std::size_t memory_heads = 8;
    Real dropout = 0.1;
    bool residual_response = false;
    bool visual_positional = true;
    /// Extent of each raw visual vector (P*P*C for patches, feature width for files).
    std::size_t input_dim = 16;

    void validate() const;
    bool uses_memory() const { return variant != Variant::Base; }

    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    static ModelConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

    bool operator==(const ModelConfig&) const = default;
};

struct NamedParameter {
    std::string name;
    Tensor tensor;
    /// Belongs to the visual-frontend learning-rate group.
    bool visual = false;
};

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // out
    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

struct Norm {
    Tensor gain;
    Tensor bias;
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct Attention {
    std::size_t heads = 1;
    Linear q, k, v, o;
    /// mask, when given, is added to every head's score matrix.
    Tensor operator()(const Tensor& query_src, const Tensor& kv_src, const Tensor* mask) const;
};

struct FeedForward {
    Linear in, out;
    Tensor operator()(const Tensor& x) const { return out(relu(in(x))); }
};

struct EncoderLayer {
    Norm norm1, norm2;
    Attention self_attn;
    FeedForward ffn;
};

struct DecoderLayer {
    Norm norm1, norm2, norm3;
    Attention self_attn, cross_attn;
    FeedForward ffn;
};

/// Memory keys/values computed once and shared by all queries of a pass.
struct MemoryProjections {
    std::optional<ProjectedMemory> visual;
    std::optional<ProjectedMemory> textual;
};

struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;
    const MemoryProjections* memory = nullptr;
};

struct TrainingPair {
    Tensor visual;            // S x input_dim
    std::vector<int> tokens;  // BOS ... EOS
};

struct EncodedImage {
    Tensor states;
    QueryTrace visual_trace;
    std::shared_ptr<const MemoryProjections> memory;
};

struct TokenAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
    double ratio() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// S x d sinusoidal table (sin on even columns, cos on odd).
Tensor positional_encoding(std::size_t length, std::size_t dim);
/// L x L additive mask with -inf above the diagonal.
Tensor causal_mask(std::size_t length);

class ReportModel {
public:
    ReportModel(ModelConfig config, std::uint64_t seed);
    ReportModel(ReportModel&&) = default;
    ReportModel& operator=(ReportModel&&) = default;
    ReportModel(const ReportModel&) = delete;
    ReportModel& operator=(const ReportModel&) = delete;

    const ModelConfig& config() const { return config_; }
    const std::vector<NamedParameter>& parameters() const { return params_; }
    std::size_t parameter_count() const;
    /// Parameters owned by memory modules (zero for the base variant).
    std::size_t memory_parameter_count() const;
    const Tensor& parameter(const std::string& name) const;

    /// When off, the memory path is skipped and the model behaves as base.
    void set_memory_enabled(bool enabled) { memory_enabled_ = enabled; }
    bool memory_enabled() const { return memory_enabled_ && config_.uses_memory(); }

    const MemoryMatrix* visual_memory() const;
    const MemoryHeads* visual_memory_heads() const;
    const MemoryMatrix* textual_memory() const;
    const MemoryHeads* textual_memory_heads() const;

    MemoryProjections project_memories() const;

    Tensor project_visual(const Tensor& raw) const;
    /// Memory responses for visual features (identity for base).
    Tensor visual_responses(const Tensor& features, const ForwardContext& ctx = {},
                            QueryTrace* trace = nullptr) const;
    /// Encoder stack over an S x d sequence.
    Tensor encode(const Tensor& visual_sequence, const ForwardContext& ctx = {}) const;
    EncodedImage encode_image(const Tensor& raw) const;

    /// Scaled embeddings plus positions, t x d.
    Tensor embed_tokens(std::span<const int> tokens) const;
    Tensor textual_responses(const Tensor& embedded, const ForwardContext& ctx = {},
                             QueryTrace* trace = nullptr) const;
    /// Decoder stack; returns t x V logits.
    Tensor decode(const Tensor& states, const Tensor& textual, const ForwardContext& ctx = {}) const;

    /// Logits for every prefix position given the raw visual input.
    Tensor logits(const Tensor& raw, std::span<const int> decoder_input, const ForwardContext& ctx = {}) const;
    /// Mean token cross-entropy of tokens[1..] given tokens[..n-1].
    Tensor loss(const Tensor& raw, std::span<const int> tokens, const ForwardContext& ctx = {}) const;
    /// Token-weighted mean loss over a batch, sharing one memory projection.
    Tensor batch_loss(std::span<const TrainingPair> batch, const ForwardContext& ctx = {}) const;

    std::vector<Real> next_log_probs(const EncodedImage& image, std::span<const int> prefix) const;
    TokenAccuracy teacher_forced_accuracy(const Tensor& raw, std::span<const int> tokens) const;

private:
    Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) const;

    ModelConfig config_;
    bool memory_enabled_ = true;
    std::vector<NamedParameter> params_;

    Linear visual_proj_;
    Tensor embedding_;
    std::vector<EncoderLayer> encoder_;
    Norm encoder_norm_;
    std::vector<DecoderLayer> decoder_;
    Norm decoder_norm_;
    Linear output_;

    std::optional<MemoryMatrix> memory_;
    std::optional<MemoryHeads> memory_heads_;
    std::optional<MemoryMatrix> text_memory_;
    std::optional<MemoryHeads> text_memory_heads_;

    Tensor positions_;
};

struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> vocab;
    std::unique_ptr<ReportModel> model;
};

void save_checkpoint(const std::filesystem::path& path, const ReportModel& model,
                     const std::vector<std::string>& vocab);
/// Throws StateMismatchError when `expected` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace cmn
