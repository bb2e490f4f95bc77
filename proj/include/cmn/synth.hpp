#pragma once

// Synthetic cross-modal corpus.
//
// An image is a G x G grid of 4x4-pixel glyphs. An abnormal cell renders its
// glyph with inverted intensity. The report lists the cells in reading order:
// each cell contributes its glyph word, abnormal cells add "<severity>
// <finding>", and every grid row ends with ".". Reports without abnormal
// cells end in "no acute findings .". Labels are the finding categories of the
// abnormal cells, so text, labels and image all derive from the grid.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmn/metrics.hpp"
#include "cmn/random.hpp"
#include "cmn/tensor.hpp"
#include "cmn/visual.hpp"

namespace cmn {

inline constexpr std::size_t kGlyphPixels = 4;

struct GlyphSpec {
    std::string word;
    std::string severity;
    std::string finding;
    std::string category;
    std::array<std::uint8_t, kGlyphPixels * kGlyphPixels> pattern;
};

const std::vector<GlyphSpec>& glyph_table();

struct GridWorld {
    std::size_t size = 0;
    std::vector<std::size_t> glyphs;  // row-major
    std::vector<bool> abnormal;
};

RasterImage render_grid(const GridWorld& grid);
Tokens compose_report(const GridWorld& grid);
LabelSet grid_labels(const GridWorld& grid);
/// Rules mapping every finding word to its category, with negation cues.
RuleTable synthetic_rule_table();

struct ManifestRecord {
    std::string id;
    std::vector<std::string> image_paths;    // resolved against the manifest directory
    std::vector<std::string> feature_paths;  // alternative to images
    std::string report;
    std::vector<std::string> labels;
    std::string split;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRecord> records;

    std::vector<const ManifestRecord*> split(const std::string& name) const;
    const ManifestRecord& find(const std::string& id) const;
    std::filesystem::path resolve(const std::string& path) const;
};

/// Parses and validates a manifest: unique ids, known splits, existing files.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct CorpusOptions {
    std::uint64_t seed = 0;
    std::size_t n_train = 256;
    std::size_t n_val = 32;
    std::size_t n_test = 64;
    std::size_t grid = 4;
    std::size_t glyphs = 12;
    double abnormal_rate = 0.3;
    /// When nonzero, records point at features/<id>.cmnt holding the image
    /// patchified with this patch size instead of at the PGM.
    std::size_t feature_patch = 0;
};

GridWorld sample_grid(Rng& rng, std::size_t grid, std::size_t glyphs, double abnormal_rate);

/// Writes images/<id>.pgm (or features/<id>.cmnt) and manifest.json under out_dir.
Manifest generate_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir);

class Vocabulary {
public:
    Vocabulary();
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    int id(const std::string& token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(std::span<const std::string> tokens) const;
    /// Drops pad/bos/eos.
    Tokens decode(std::span<const int> ids) const;

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

/// Specials first (pad, bos, eos, unk), then training tokens by descending
/// frequency with lexicographic tie-break.
Vocabulary build_vocab(const Manifest& manifest, std::size_t min_count = 1);

struct SplitStats {
    std::string split;
    std::size_t images = 0;
    std::size_t reports = 0;
    double avg_length = 0.0;
};

std::vector<SplitStats> corpus_stats(const Manifest& manifest);

/// Visual input for a record: patchified images or loaded features, views concatenated.
Tensor load_record_visual(const Manifest& manifest, const ManifestRecord& record, std::size_t patch,
                          std::size_t feature_dim = 0);
/// BOS + report ids + EOS, truncated to fit max_positions decoder inputs.
std::vector<int> encode_report(const Vocabulary& vocab, const std::string& report, std::size_t max_positions);

}  // namespace cmn
