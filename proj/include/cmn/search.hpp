#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cmn/transformer.hpp"

namespace cmn {

/// Log-probabilities of the next token given a prefix that starts with BOS.
using NextTokenScorer = std::function<std::vector<Real>(std::span<const int> prefix)>;

struct Hypothesis {
    std::vector<int> tokens;  // BOS first; EOS last when finished
    Real log_prob = 0.0;
    bool finished = false;

    /// Generated length: tokens after BOS, EOS included.
    std::size_t length() const { return tokens.size() - 1; }
    Real score(Real alpha) const;
    /// Report tokens with BOS and EOS stripped.
    std::vector<int> content() const;
};

struct SearchOptions {
    std::size_t beam_size = 3;
    std::size_t max_len = 60;
    /// Length normalisation exponent: score = log_prob / length^alpha.
    Real alpha = 0.0;
    int bos = kBosId;
    int eos = kEosId;
};

/// Argmax decoding; ties go to the lowest token id.
Hypothesis greedy(const NextTokenScorer& scorer, std::size_t max_len, int bos = kBosId, int eos = kEosId);

/// Beam search. Finished hypotheses are set aside and compete, together with
/// whatever is still alive at max_len, for the best normalised score.
/// Expansion stops at max_len or once B hypotheses have finished; with
/// alpha = 0 it goes on while a live hypothesis still outscores them all.
Hypothesis beam_search(const NextTokenScorer& scorer, const SearchOptions& options);

NextTokenScorer model_scorer(const ReportModel& model, const EncodedImage& image);

}  // namespace cmn
