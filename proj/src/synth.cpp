#include "cmn/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmn/errors.hpp"
#include "cmn/random.hpp"
#include "cmn/transformer.hpp"

namespace cmn {

namespace {

using Pattern = std::array<std::uint8_t, kGlyphPixels * kGlyphPixels>;

Pattern pattern(const char* rows) {
    Pattern p{};
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rows[i] == '1' ? 1 : 0;
    return p;
}

const char* const kSpecials[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
const char* const kSplits[] = {"train", "val", "test"};

}  // namespace

const std::vector<GlyphSpec>& glyph_table() {
    // Each pattern has at most 7 lit pixels, so no inverted glyph can equal a
    // normal one.
    static const std::vector<GlyphSpec> table = {
        {"ring", "mild", "opacity", "OPACITY", pattern("0110100110010000")},
        {"cross", "mild", "effusion", "EFFUSION", pattern("0100111001000000")},
        {"bar", "mild", "nodule", "NODULE", pattern("0000111100000000")},
        {"dot", "mild", "edema", "EDEMA", pattern("0000011001100000")},
        {"wedge", "mild", "fracture", "FRACTURE", pattern("1000110011100000")},
        {"arc", "mild", "mass", "MASS", pattern("0000000010010110")},
        {"knot", "severe", "opacity", "OPACITY", pattern("1001011000000000")},
        {"star", "severe", "effusion", "EFFUSION", pattern("1010010010100000")},
        {"band", "severe", "nodule", "NODULE", pattern("1000100010001000")},
        {"hook", "severe", "edema", "EDEMA", pattern("1100010001100000")},
        {"spot", "severe", "fracture", "FRACTURE", pattern("0000000000010001")},
        {"step", "severe", "mass", "MASS", pattern("1000110001100011")},
    };
    return table;
}

RasterImage render_grid(const GridWorld& grid) {
    const auto& table = glyph_table();
    RasterImage img = RasterImage::blank(grid.size * kGlyphPixels, grid.size * kGlyphPixels, 1);
    for (std::size_t r = 0; r < grid.size; ++r) {
        for (std::size_t c = 0; c < grid.size; ++c) {
            const std::size_t cell = r * grid.size + c;
            const auto& p = table.at(grid.glyphs[cell]).pattern;
            for (std::size_t y = 0; y < kGlyphPixels; ++y)
                for (std::size_t x = 0; x < kGlyphPixels; ++x) {
                    const Real lit = p[y * kGlyphPixels + x];
                    img.at(r * kGlyphPixels + y, c * kGlyphPixels + x) = grid.abnormal[cell] ? 1.0 - lit : lit;
                }
        }
    }
    return img;
}

Tokens compose_report(const GridWorld& grid) {
    const auto& table = glyph_table();
    Tokens out;
    bool any = false;
    for (std::size_t r = 0; r < grid.size; ++r) {
        for (std::size_t c = 0; c < grid.size; ++c) {
            const std::size_t cell = r * grid.size + c;
            const auto& g = table.at(grid.glyphs[cell]);
            out.push_back(g.word);
            if (grid.abnormal[cell]) {
                out.push_back(g.severity);
                out.push_back(g.finding);
                any = true;
            }
        }
        out.emplace_back(".");
    }
    if (!any) {
        for (const char* w : {"no", "acute", "findings", "."}) out.emplace_back(w);
    }
    return out;
}

LabelSet grid_labels(const GridWorld& grid) {
    LabelSet out;
    for (std::size_t i = 0; i < grid.glyphs.size(); ++i)
        if (grid.abnormal[i]) out.insert(glyph_table().at(grid.glyphs[i]).category);
    return out;
}

RuleTable synthetic_rule_table() {
    RuleTable table;
    std::set<std::string> seen;
    for (const auto& g : glyph_table()) {
        if (seen.insert(g.finding).second) table.rules.push_back({{g.finding}, g.category});
    }
    table.negations = {{"no"}, {"without"}, {"negative", "for"}};
    return table;
}

std::vector<const ManifestRecord*> Manifest::split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

const ManifestRecord& Manifest::find(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return r;
    throw ArgumentError("no manifest record with id '" + id + "'");
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw FormatError("manifest must be a JSON array of records");
    Manifest m;
    m.base_dir = path.parent_path();
    std::set<std::string> ids;
    for (const auto& item : doc) {
        ManifestRecord r;
        try {
            r.id = item.at("id").get<std::string>();
            r.report = item.at("report").get<std::string>();
            r.split = item.at("split").get<std::string>();
            if (item.contains("image_path")) r.image_paths.push_back(item["image_path"].get<std::string>());
            if (item.contains("image_paths")) {
                for (const auto& p : item["image_paths"]) r.image_paths.push_back(p.get<std::string>());
            }
            if (item.contains("feature_paths")) {
                for (const auto& p : item["feature_paths"]) r.feature_paths.push_back(p.get<std::string>());
            }
            if (item.contains("labels")) r.labels = item["labels"].get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("malformed manifest record: " + std::string(e.what()));
        }
        if (!ids.insert(r.id).second) throw FormatError("duplicate manifest id '" + r.id + "'");
        if (std::find(std::begin(kSplits), std::end(kSplits), r.split) == std::end(kSplits)) {
            throw FormatError("record '" + r.id + "' has unknown split '" + r.split + "'");
        }
        if (r.image_paths.empty() == r.feature_paths.empty()) {
            throw FormatError("record '" + r.id + "' needs exactly one of image_path(s) or feature_paths");
        }
        for (const auto& p : r.image_paths)
            if (!std::filesystem::exists(m.resolve(p))) throw FileError("missing image " + m.resolve(p).string());
        for (const auto& p : r.feature_paths)
            if (!std::filesystem::exists(m.resolve(p))) throw FileError("missing features " + m.resolve(p).string());
        m.records.push_back(std::move(r));
    }
    return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& r : manifest.records) {
        nlohmann::ordered_json item;
        item["id"] = r.id;
        if (r.image_paths.size() == 1) item["image_path"] = r.image_paths[0];
        else if (!r.image_paths.empty()) item["image_paths"] = r.image_paths;
        if (!r.feature_paths.empty()) item["feature_paths"] = r.feature_paths;
        item["report"] = r.report;
        item["labels"] = r.labels;
        item["split"] = r.split;
        doc.push_back(std::move(item));
    }
    std::ofstream out(path);
    if (!out) throw FileError("cannot write manifest " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw FileError("write failed for manifest " + path.string());
}

GridWorld sample_grid(Rng& rng, std::size_t grid, std::size_t glyphs, double abnormal_rate) {
    GridWorld g;
    g.size = grid;
    for (std::size_t i = 0; i < grid * grid; ++i) {
        g.glyphs.push_back(rng.below(glyphs));
        g.abnormal.push_back(rng.bernoulli(abnormal_rate));
    }
    return g;
}

Manifest generate_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir) {
    if (options.n_train == 0 || options.n_val == 0 || options.n_test == 0) {
        throw ArgumentError("corpus split sizes must be at least 1");
    }
    if (!(options.abnormal_rate >= 0.0 && options.abnormal_rate <= 1.0)) {
        throw ArgumentError("abnormal_rate must be in [0,1]");
    }
    if (options.grid == 0) throw ArgumentError("grid size must be positive");
    if (options.glyphs == 0 || options.glyphs > glyph_table().size()) {
        throw ArgumentError("glyph vocabulary must be in [1, " + std::to_string(glyph_table().size()) + "]");
    }
    std::error_code ec;
    const std::string sub = options.feature_patch ? "features" : "images";
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw FileError("cannot create " + (out_dir / sub).string() + ": " + ec.message());

    Rng rng(options.seed);
    Manifest m;
    m.base_dir = out_dir;
    const std::size_t total = options.n_train + options.n_val + options.n_test;
    for (std::size_t i = 0; i < total; ++i) {
        const GridWorld grid = sample_grid(rng, options.grid, options.glyphs, options.abnormal_rate);
        char id[32];
        std::snprintf(id, sizeof(id), "syn-%06zu", i);
        ManifestRecord r;
        r.id = id;
        if (options.feature_patch) {
            r.feature_paths.push_back("features/" + r.id + ".cmnt");
            save_features(out_dir / r.feature_paths[0], patchify(render_grid(grid), options.feature_patch));
        } else {
            r.image_paths.push_back("images/" + r.id + ".pgm");
            write_pgm(out_dir / r.image_paths[0], render_grid(grid));
        }
        const auto report = compose_report(grid);
        r.report = join_tokens(report);
        const auto labels = grid_labels(grid);
        r.labels.assign(labels.begin(), labels.end());
        r.split = i < options.n_train ? "train" : (i < options.n_train + options.n_val ? "val" : "test");
        m.records.push_back(std::move(r));
    }
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    for (const char* s : kSpecials) tokens_.emplace_back(s);
    // Accept lists that already carry the specials (e.g. from a checkpoint).
    std::size_t start = 0;
    if (tokens.size() >= 4 && std::equal(std::begin(kSpecials), std::end(kSpecials), tokens.begin())) start = 4;
    for (std::size_t i = start; i < tokens.size(); ++i) tokens_.push_back(tokens[i]);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw ArgumentError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

int Vocabulary::id(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw IndexError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

Tokens Vocabulary::decode(std::span<const int> ids) const {
    Tokens out;
    for (int i : ids) {
        if (i == kPadId || i == kBosId || i == kEosId) continue;
        out.push_back(token(i));
    }
    return out;
}

Vocabulary build_vocab(const Manifest& manifest, std::size_t min_count) {
    const auto train = manifest.split("train");
    if (train.empty()) throw ArgumentError("cannot build a vocabulary from an empty train split");
    std::map<std::string, std::size_t> counts;
    for (const auto* r : train)
        for (const auto& t : tokenize(r->report)) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (const auto& [tok, n] : counts) {
        if (n >= min_count && std::find(std::begin(kSpecials), std::end(kSpecials), tok) == std::end(kSpecials))
            ranked.emplace_back(tok, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
    return Vocabulary(std::move(tokens));
}

std::vector<SplitStats> corpus_stats(const Manifest& manifest) {
    std::vector<SplitStats> out;
    for (const char* name : kSplits) {
        SplitStats s;
        s.split = name;
        std::size_t tokens = 0;
        for (const auto* r : manifest.split(name)) {
            s.images += r->image_paths.size() + r->feature_paths.size();
            s.reports += 1;
            tokens += tokenize(r->report).size();
        }
        s.avg_length = s.reports ? static_cast<double>(tokens) / static_cast<double>(s.reports) : 0.0;
        out.push_back(s);
    }
    return out;
}

Tensor load_record_visual(const Manifest& manifest, const ManifestRecord& record, std::size_t patch,
                          std::size_t feature_dim) {
    std::vector<Tensor> views;
    for (const auto& p : record.image_paths) views.push_back(patchify(read_pgm(manifest.resolve(p)), patch));
    for (const auto& p : record.feature_paths) views.push_back(load_features(manifest.resolve(p), feature_dim));
    return concat_views(views);
}

std::vector<int> encode_report(const Vocabulary& vocab, const std::string& report, std::size_t max_positions) {
    if (max_positions < 1) throw ArgumentError("max_positions must be positive");
    auto ids = vocab.encode(tokenize(report));
    // Decoder input is BOS + content, so content is capped at max_positions - 1.
    if (ids.size() + 1 > max_positions) ids.resize(max_positions - 1);
    std::vector<int> out;
    out.reserve(ids.size() + 2);
    out.push_back(kBosId);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(kEosId);
    return out;
}

}  // namespace cmn
