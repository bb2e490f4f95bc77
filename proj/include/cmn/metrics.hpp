#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace cmn {

using Tokens = std::vector<std::string>;
using LabelSet = std::set<std::string>;

/// Lowercases, splits on whitespace, and emits each punctuation character as its own token.
Tokens tokenize(const std::string& text);
std::string join_tokens(std::span<const std::string> tokens);

struct CorpusPair {
    Tokens candidate;
    Tokens reference;
};

struct BleuScores {
    std::array<double, 4> bleu{};  // BL-1..BL-4
    double brevity_penalty = 0.0;
    std::array<double, 4> precision{};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};

/// Corpus-level BLEU with clipped n-gram counts and no smoothing.
BleuScores bleu(std::span<const CorpusPair> corpus, std::size_t n_max = 4);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
/// LCS F-measure of one pair; 0 when either side is empty.
double rouge_l_pair(const Tokens& candidate, const Tokens& reference, double beta = 1.2);
/// Mean pairwise ROUGE-L over the corpus.
double rouge_l(std::span<const CorpusPair> corpus, double beta = 1.2);

struct LabelCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct PrfScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    LabelCounts counts;
};

/// Micro-averaged precision/recall/F1 over all (id, category) decisions.
/// Both maps must hold the same ids; every category must be in `universe`.
PrfScores label_prf(const std::map<std::string, LabelSet>& predicted, const std::map<std::string, LabelSet>& gold,
                    const std::set<std::string>& universe);

struct LabelRule {
    Tokens phrase;
    std::string category;
};

struct RuleTable {
    std::vector<LabelRule> rules;
    std::vector<Tokens> negations;
    std::size_t negation_window = 3;

    std::set<std::string> categories() const;
    /// Parses lines "phrase words = CATEGORY" and "!negation words"; '#' starts a comment.
    static RuleTable parse(const std::string& text);
};

/// A category is present when one of its phrases occurs without a negation
/// cue ending within the `negation_window` tokens before it.
LabelSet rule_labeler(std::span<const std::string> tokens, const RuleTable& table);

}  // namespace cmn
