#include "cmn/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "cmn/errors.hpp"
#include "cmn/serialize.hpp"

namespace cmn {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'M', 'N', 'C', 'K', 'P', 'T', '1'};

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    const Real limit = std::sqrt(6.0 / static_cast<Real>(rows + cols));
    std::vector<Real> data(rows * cols);
    for (auto& v : data) v = rng.uniform(-limit, limit);
    return Tensor(Shape{rows, cols}, std::move(data), true);
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{xavier(in, out, rng), Tensor::zeros(Shape{out}, true)};
}

Norm make_norm(std::size_t dim) {
    return Norm{Tensor::full(Shape{dim}, 1.0, true), Tensor::zeros(Shape{dim}, true)};
}

Attention make_attention(std::size_t dim, std::size_t heads, Rng& rng) {
    Attention a;
    a.heads = heads;
    a.q = make_linear(dim, dim, rng);
    a.k = make_linear(dim, dim, rng);
    a.v = make_linear(dim, dim, rng);
    a.o = make_linear(dim, dim, rng);
    return a;
}

void push_linear(std::vector<NamedParameter>& out, const std::string& prefix, const Linear& l, bool visual = false) {
    out.push_back({prefix + ".weight", l.weight, visual});
    out.push_back({prefix + ".bias", l.bias, visual});
}

void push_norm(std::vector<NamedParameter>& out, const std::string& prefix, const Norm& n) {
    out.push_back({prefix + ".gain", n.gain});
    out.push_back({prefix + ".bias", n.bias});
}

void push_attention(std::vector<NamedParameter>& out, const std::string& prefix, const Attention& a) {
    push_linear(out, prefix + ".q", a.q);
    push_linear(out, prefix + ".k", a.k);
    push_linear(out, prefix + ".v", a.v);
    push_linear(out, prefix + ".o", a.o);
}

void push_memory(std::vector<NamedParameter>& out, const std::string& prefix, const MemoryMatrix& m,
                 const MemoryHeads& h) {
    out.push_back({prefix + ".matrix", m.rows});
    out.push_back({prefix + ".w_q", h.w_q});
    out.push_back({prefix + ".w_k", h.w_k});
    out.push_back({prefix + ".w_v", h.w_v});
    out.push_back({prefix + ".w_o", h.w_o});
}

std::size_t to_size(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw FormatError("model config key '" + key + "' expects an integer, got '" + value + "'");
    }
}

std::string real_to_string(Real v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::Mem: return "mem";
        case Variant::Cmn: return "cmn";
    }
    return "?";
}

Variant parse_variant(const std::string& text) {
    if (text == "base") return Variant::Base;
    if (text == "mem") return Variant::Mem;
    if (text == "cmn") return Variant::Cmn;
    throw ConfigError("variant must be one of base, mem, cmn; got '" + text + "'");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ArgumentError("model config: " + msg); };
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
        fail("heads=" + std::to_string(heads) + " must divide d_model=" + std::to_string(d_model));
    if (layers == 0) fail("layers must be at least 1");
    if (d_ff == 0) fail("d_ff must be positive");
    if (vocab_size < 4) fail("vocab_size must be at least 4 (pad/bos/eos + one token), got " + std::to_string(vocab_size));
    if (max_positions == 0) fail("max_positions must be positive");
    if (input_dim == 0) fail("input_dim must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
    if (uses_memory()) {
        if (memory_heads == 0 || d_model % memory_heads != 0)
            fail("memory_heads=" + std::to_string(memory_heads) + " must divide d_model=" + std::to_string(d_model));
        if (topk == 0 || topk > memory_slots)
            fail("topk=" + std::to_string(topk) + " must be in [1, memory_slots=" + std::to_string(memory_slots) + "]");
    }
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
    return {
        {"variant", to_string(variant)},
        {"layers", std::to_string(layers)},
        {"heads", std::to_string(heads)},
        {"d_model", std::to_string(d_model)},
        {"d_ff", std::to_string(d_ff)},
        {"vocab_size", std::to_string(vocab_size)},
        {"max_positions", std::to_string(max_positions)},
        {"memory_slots", std::to_string(memory_slots)},
        {"topk", std::to_string(topk)},
        {"memory_heads", std::to_string(memory_heads)},
        {"dropout", real_to_string(dropout)},
        {"residual_response", residual_response ? "1" : "0"},
        {"visual_positional", visual_positional ? "1" : "0"},
        {"input_dim", std::to_string(input_dim)},
    };
}

ModelConfig ModelConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
    ModelConfig c;
    for (const auto& [key, value] : pairs) {
        if (key == "variant") c.variant = parse_variant(value);
        else if (key == "layers") c.layers = to_size(key, value);
        else if (key == "heads") c.heads = to_size(key, value);
        else if (key == "d_model") c.d_model = to_size(key, value);
        else if (key == "d_ff") c.d_ff = to_size(key, value);
        else if (key == "vocab_size") c.vocab_size = to_size(key, value);
        else if (key == "max_positions") c.max_positions = to_size(key, value);
        else if (key == "memory_slots") c.memory_slots = to_size(key, value);
        else if (key == "topk") c.topk = to_size(key, value);
        else if (key == "memory_heads") c.memory_heads = to_size(key, value);
        else if (key == "dropout") c.dropout = std::stod(value);
        else if (key == "residual_response") c.residual_response = value == "1";
        else if (key == "visual_positional") c.visual_positional = value == "1";
        else if (key == "input_dim") c.input_dim = to_size(key, value);
        else throw FormatError("unknown model config key '" + key + "'");
    }
    return c;
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
    std::vector<Real> data(length * dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim; i += 2) {
            const Real freq = std::exp(-std::log(10000.0) * static_cast<Real>(i) / static_cast<Real>(dim));
            data[pos * dim + i] = std::sin(static_cast<Real>(pos) * freq);
            if (i + 1 < dim) data[pos * dim + i + 1] = std::cos(static_cast<Real>(pos) * freq);
        }
    }
    return Tensor(Shape{length, dim}, std::move(data));
}

Tensor causal_mask(std::size_t length) {
    std::vector<Real> data(length * length, 0.0);
    for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = i + 1; j < length; ++j) data[i * length + j] = -std::numeric_limits<Real>::infinity();
    return Tensor(Shape{length, length}, std::move(data));
}

Tensor Attention::operator()(const Tensor& query_src, const Tensor& kv_src, const Tensor* mask) const {
    const Tensor qa = q(query_src);
    const Tensor ka = k(kv_src);
    const Tensor va = v(kv_src);
    const std::size_t dim = qa.shape()[1];
    const std::size_t head_dim = dim / heads;
    const Real inv_scale = 1.0 / std::sqrt(static_cast<Real>(head_dim));
    std::vector<Tensor> parts;
    parts.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t b = h * head_dim, e = b + head_dim;
        const Tensor qh = heads == 1 ? qa : slice(qa, 1, b, e);
        const Tensor kh = heads == 1 ? ka : slice(ka, 1, b, e);
        const Tensor vh = heads == 1 ? va : slice(va, 1, b, e);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
        if (mask) scores = add(scores, *mask);
        parts.push_back(matmul(softmax(scores, -1), vh));
    }
    return o(parts.size() == 1 ? parts[0] : concat(parts, 1));
}

ReportModel::ReportModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d_model;
    Rng rng(derive_seed(seed, 0));

    visual_proj_ = Linear{xavier(config_.input_dim, d, rng), Tensor::zeros(Shape{d}, true)};
    push_linear(params_, "visual.proj", visual_proj_, true);

    embedding_ = xavier(config_.vocab_size, d, rng);
    params_.push_back({"embedding", embedding_});

    for (std::size_t l = 0; l < config_.layers; ++l) {
        EncoderLayer layer{make_norm(d), make_norm(d), make_attention(d, config_.heads, rng),
                           FeedForward{make_linear(d, config_.d_ff, rng), make_linear(config_.d_ff, d, rng)}};
        const std::string p = "encoder." + std::to_string(l);
        push_norm(params_, p + ".norm1", layer.norm1);
        push_attention(params_, p + ".self_attn", layer.self_attn);
        push_norm(params_, p + ".norm2", layer.norm2);
        push_linear(params_, p + ".ffn.in", layer.ffn.in);
        push_linear(params_, p + ".ffn.out", layer.ffn.out);
        encoder_.push_back(std::move(layer));
    }
    encoder_norm_ = make_norm(d);
    push_norm(params_, "encoder.norm", encoder_norm_);

    for (std::size_t l = 0; l < config_.layers; ++l) {
        DecoderLayer layer{make_norm(d),
                           make_norm(d),
                           make_norm(d),
                           make_attention(d, config_.heads, rng),
                           make_attention(d, config_.heads, rng),
                           FeedForward{make_linear(d, config_.d_ff, rng), make_linear(config_.d_ff, d, rng)}};
        const std::string p = "decoder." + std::to_string(l);
        push_norm(params_, p + ".norm1", layer.norm1);
        push_attention(params_, p + ".self_attn", layer.self_attn);
        push_norm(params_, p + ".norm2", layer.norm2);
        push_attention(params_, p + ".cross_attn", layer.cross_attn);
        push_norm(params_, p + ".norm3", layer.norm3);
        push_linear(params_, p + ".ffn.in", layer.ffn.in);
        push_linear(params_, p + ".ffn.out", layer.ffn.out);
        decoder_.push_back(std::move(layer));
    }
    decoder_norm_ = make_norm(d);
    push_norm(params_, "decoder.norm", decoder_norm_);

    output_ = make_linear(d, config_.vocab_size, rng);
    push_linear(params_, "output", output_);

    // Memory draws come from separate streams so the shared backbone is
    // initialised identically across variants with the same seed.
    if (config_.variant == Variant::Cmn) {
        Rng mrng(derive_seed(seed, 1));
        memory_ = MemoryMatrix::random(config_.memory_slots, d, mrng);
        memory_heads_ = MemoryHeads::random(d, config_.memory_heads, mrng);
        push_memory(params_, "memory", *memory_, *memory_heads_);
    } else if (config_.variant == Variant::Mem) {
        Rng vrng(derive_seed(seed, 1));
        memory_ = MemoryMatrix::random(config_.memory_slots, d, vrng);
        memory_heads_ = MemoryHeads::random(d, config_.memory_heads, vrng);
        push_memory(params_, "visual_memory", *memory_, *memory_heads_);
        Rng trng(derive_seed(seed, 2));
        text_memory_ = MemoryMatrix::random(config_.memory_slots, d, trng);
        text_memory_heads_ = MemoryHeads::random(d, config_.memory_heads, trng);
        push_memory(params_, "text_memory", *text_memory_, *text_memory_heads_);
    }

    positions_ = positional_encoding(config_.max_positions, d);
}

std::size_t ReportModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::size_t ReportModel::memory_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.name.starts_with("memory.") || p.name.starts_with("visual_memory.") ||
            p.name.starts_with("text_memory."))
            n += p.tensor.numel();
    }
    return n;
}

const Tensor& ReportModel::parameter(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    throw ArgumentError("no parameter named '" + name + "'");
}

const MemoryMatrix* ReportModel::visual_memory() const { return memory_ ? &*memory_ : nullptr; }
const MemoryHeads* ReportModel::visual_memory_heads() const { return memory_heads_ ? &*memory_heads_ : nullptr; }

const MemoryMatrix* ReportModel::textual_memory() const {
    if (text_memory_) return &*text_memory_;
    return memory_ ? &*memory_ : nullptr;
}

const MemoryHeads* ReportModel::textual_memory_heads() const {
    if (text_memory_heads_) return &*text_memory_heads_;
    return memory_heads_ ? &*memory_heads_ : nullptr;
}

MemoryProjections ReportModel::project_memories() const {
    MemoryProjections out;
    if (!memory_enabled()) return out;
    out.visual = project_memory(*visual_memory(), *visual_memory_heads());
    if (config_.variant == Variant::Cmn) {
        out.textual = out.visual;
    } else {
        out.textual = project_memory(*textual_memory(), *textual_memory_heads());
    }
    return out;
}

Tensor ReportModel::maybe_dropout(const Tensor& x, const ForwardContext& ctx) const {
    if (!ctx.training || config_.dropout <= 0.0 || ctx.rng == nullptr) return x;
    return dropout(x, config_.dropout, *ctx.rng);
}

Tensor ReportModel::project_visual(const Tensor& raw) const {
    if (raw.rank() != 2 || raw.shape()[1] != config_.input_dim) {
        throw DimensionError("visual input must be S x " + std::to_string(config_.input_dim) + ", got " +
                             shape_str(raw.shape()));
    }
    return visual_proj_(raw);
}

Tensor ReportModel::visual_responses(const Tensor& features, const ForwardContext& ctx, QueryTrace* trace) const {
    if (!memory_enabled()) return features;
    MemoryResponse r = ctx.memory && ctx.memory->visual
                           ? query_and_respond(features, *ctx.memory->visual, *visual_memory_heads(), config_.topk)
                           : query_and_respond(features, *visual_memory(), *visual_memory_heads(), config_.topk);
    if (trace) *trace = std::move(r.trace);
    return config_.residual_response ? add(features, r.response) : r.response;
}

Tensor ReportModel::textual_responses(const Tensor& embedded, const ForwardContext& ctx, QueryTrace* trace) const {
    if (!memory_enabled()) return embedded;
    MemoryResponse r =
        ctx.memory && ctx.memory->textual
            ? query_and_respond(embedded, *ctx.memory->textual, *textual_memory_heads(), config_.topk)
            : query_and_respond(embedded, *textual_memory(), *textual_memory_heads(), config_.topk);
    if (trace) *trace = std::move(r.trace);
    return config_.residual_response ? add(embedded, r.response) : r.response;
}

Tensor ReportModel::encode(const Tensor& visual_sequence, const ForwardContext& ctx) const {
    if (visual_sequence.rank() != 2 || visual_sequence.shape()[1] != config_.d_model) {
        throw DimensionError("encoder expects S x " + std::to_string(config_.d_model) + ", got " +
                             shape_str(visual_sequence.shape()));
    }
    Tensor x = visual_sequence;
    if (config_.visual_positional) {
        x = add(x, positional_encoding(x.shape()[0], config_.d_model));
    }
    x = maybe_dropout(x, ctx);
    for (const auto& layer : encoder_) {
        const Tensor h = layer.norm1(x);
        x = add(x, maybe_dropout(layer.self_attn(h, h, nullptr), ctx));
        x = add(x, maybe_dropout(layer.ffn(layer.norm2(x)), ctx));
    }
    return encoder_norm_(x);
}

EncodedImage ReportModel::encode_image(const Tensor& raw) const {
    NoGradGuard guard;
    auto memory = std::make_shared<MemoryProjections>(project_memories());
    ForwardContext ctx;
    ctx.memory = memory.get();
    EncodedImage out;
    const Tensor seq = visual_responses(project_visual(raw), ctx, &out.visual_trace);
    out.states = encode(seq, ctx);
    out.memory = std::move(memory);
    return out;
}

Tensor ReportModel::embed_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw ArgumentError("cannot embed an empty token sequence");
    if (tokens.size() > config_.max_positions) {
        throw ArgumentError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_positions=" +
                            std::to_string(config_.max_positions));
    }
    const Tensor e = scale(embedding_lookup(embedding_, tokens), std::sqrt(static_cast<Real>(config_.d_model)));
    return add(e, slice(positions_, 0, 0, tokens.size()));
}

Tensor ReportModel::decode(const Tensor& states, const Tensor& textual, const ForwardContext& ctx) const {
    const std::size_t t = textual.shape()[0];
    if (t > config_.max_positions) {
        throw ArgumentError("decoder input of " + std::to_string(t) + " positions exceeds max_positions=" +
                            std::to_string(config_.max_positions));
    }
    const Tensor mask = causal_mask(t);
    Tensor y = maybe_dropout(textual, ctx);
    for (const auto& layer : decoder_) {
        Tensor h = layer.norm1(y);
        y = add(y, maybe_dropout(layer.self_attn(h, h, &mask), ctx));
        h = layer.norm2(y);
        y = add(y, maybe_dropout(layer.cross_attn(h, states, nullptr), ctx));
        y = add(y, maybe_dropout(layer.ffn(layer.norm3(y)), ctx));
    }
    return output_(decoder_norm_(y));
}

Tensor ReportModel::logits(const Tensor& raw, std::span<const int> decoder_input, const ForwardContext& ctx) const {
    const Tensor states = encode(visual_responses(project_visual(raw), ctx), ctx);
    const Tensor textual = textual_responses(embed_tokens(decoder_input), ctx);
    return decode(states, textual, ctx);
}

Tensor ReportModel::loss(const Tensor& raw, std::span<const int> tokens, const ForwardContext& ctx) const {
    if (tokens.size() < 2) throw ArgumentError("report needs at least BOS and EOS");
    const auto input = tokens.first(tokens.size() - 1);
    const auto targets = tokens.subspan(1);
    return cross_entropy(logits(raw, input, ctx), targets, kPadId);
}

Tensor ReportModel::batch_loss(std::span<const TrainingPair> batch, const ForwardContext& ctx) const {
    if (batch.empty()) throw ArgumentError("empty batch");
    MemoryProjections local;
    ForwardContext inner = ctx;
    if (!inner.memory && memory_enabled()) {
        local = project_memories();
        inner.memory = &local;
    }
    std::vector<std::size_t> counts;
    std::size_t total = 0;
    for (const auto& pair : batch) {
        const auto n = static_cast<std::size_t>(
            std::count_if(pair.tokens.begin() + 1, pair.tokens.end(), [](int t) { return t != kPadId; }));
        counts.push_back(n);
        total += n;
    }
    Tensor acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor li = scale(loss(batch[i].visual, batch[i].tokens, inner),
                                static_cast<Real>(counts[i]) / static_cast<Real>(total));
        acc = acc.defined() ? add(acc, li) : li;
    }
    return acc;
}

std::vector<Real> ReportModel::next_log_probs(const EncodedImage& image, std::span<const int> prefix) const {
    NoGradGuard guard;
    ForwardContext ctx;
    ctx.memory = image.memory.get();
    const Tensor textual = textual_responses(embed_tokens(prefix), ctx);
    const Tensor all = decode(image.states, textual, ctx);
    const std::size_t v = config_.vocab_size;
    const auto row = all.data().subspan((prefix.size() - 1) * v, v);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real z = 0.0;
    for (Real x : row) z += std::exp(x - mx);
    const Real log_z = mx + std::log(z);
    std::vector<Real> out(v);
    for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - log_z;
    return out;
}

TokenAccuracy ReportModel::teacher_forced_accuracy(const Tensor& raw, std::span<const int> tokens) const {
    NoGradGuard guard;
    TokenAccuracy acc;
    if (tokens.size() < 2) return acc;
    const Tensor l = logits(raw, tokens.first(tokens.size() - 1));
    const std::size_t v = config_.vocab_size;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        const int target = tokens[i + 1];
        if (target == kPadId) continue;
        const auto row = l.data().subspan(i * v, v);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        acc.correct += best == target ? 1 : 0;
        acc.total += 1;
    }
    return acc;
}

void save_checkpoint(const std::filesystem::path& path, const ReportModel& model,
                     const std::vector<std::string>& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::ostringstream header;
    for (const auto& [k, v] : model.config().to_pairs()) header << k << '=' << v << '\n';
    write_string(out, header.str());
    write_u64(out, vocab.size());
    for (const auto& tok : vocab) write_string(out, tok);
    write_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
        write_string(out, p.name);
        write_tensor(out, p.tensor, DType::Float64);
    }
    if (!out) throw FileError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open checkpoint " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kCheckpointMagic)) {
        throw FormatError(path.string() + " is not a checkpoint");
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    {
        std::istringstream header(read_string(in));
        std::string line;
        while (std::getline(header, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError("bad checkpoint header line '" + line + "'");
            pairs.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        }
    }
    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_pairs(pairs);
    if (expected && !(*expected == ckpt.config)) {
        std::string diff;
        const auto want = expected->to_pairs();
        const auto have = ckpt.config.to_pairs();
        for (std::size_t i = 0; i < want.size(); ++i)
            if (want[i].second != have[i].second)
                diff += " " + want[i].first + " (config " + want[i].second + ", checkpoint " + have[i].second + ")";
        throw StateMismatchError("checkpoint " + path.string() + " does not match config:" + diff);
    }
    const auto vocab_count = read_u64(in);
    if (vocab_count > (1ULL << 24)) throw FormatError("implausible vocabulary size");
    ckpt.vocab.reserve(vocab_count);
    for (std::uint64_t i = 0; i < vocab_count; ++i) ckpt.vocab.push_back(read_string(in));

    ckpt.model = std::make_unique<ReportModel>(ckpt.config, 0);
    std::map<std::string, Tensor> by_name;
    for (const auto& p : ckpt.model->parameters()) by_name.emplace(p.name, p.tensor);
    const auto count = read_u32(in);
    if (count != by_name.size()) {
        throw StateMismatchError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                                 std::to_string(by_name.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(in);
        const Tensor stored = read_tensor(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw StateMismatchError("unexpected checkpoint tensor '" + name + "'");
        if (it->second.shape() != stored.shape()) {
            throw StateMismatchError("tensor '" + name + "' has shape " + shape_str(stored.shape()) +
                                     ", model expects " + shape_str(it->second.shape()));
        }
        auto dst = it->second.mutable_data();
        std::copy(stored.data().begin(), stored.data().end(), dst.begin());
    }
    return ckpt;
}

}  // namespace cmn
