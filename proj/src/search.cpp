#include "cmn/search.hpp"

#include <algorithm>
#include <cmath>

#include "cmn/errors.hpp"

namespace cmn {

Real Hypothesis::score(Real alpha) const {
    if (alpha == 0.0) return log_prob;
    return log_prob / std::pow(static_cast<Real>(std::max<std::size_t>(length(), 1)), alpha);
}

std::vector<int> Hypothesis::content() const {
    std::vector<int> out(tokens.begin() + 1, tokens.end());
    if (finished && !out.empty()) out.pop_back();
    return out;
}

Hypothesis greedy(const NextTokenScorer& scorer, std::size_t max_len, int bos, int eos) {
    if (max_len == 0) throw ArgumentError("max_len must be at least 1");
    Hypothesis h{{bos}, 0.0, false};
    while (h.length() < max_len) {
        const auto logp = scorer(h.tokens);
        const auto best = static_cast<int>(std::max_element(logp.begin(), logp.end()) - logp.begin());
        h.tokens.push_back(best);
        h.log_prob += logp[static_cast<std::size_t>(best)];
        if (best == eos) {
            h.finished = true;
            break;
        }
    }
    return h;
}

namespace {

// With alpha = 0 extending a hypothesis never raises its score, so search may
// stop once no live hypothesis beats the best finished one. Otherwise the
// finished count alone decides.
bool alive_can_win(const std::vector<Hypothesis>& alive, const std::vector<Hypothesis>& finished, Real alpha) {
    if (alpha != 0.0 || alive.empty()) return false;
    Real best_finished = -INFINITY, best_alive = -INFINITY;
    for (const auto& h : finished) best_finished = std::max(best_finished, h.log_prob);
    for (const auto& h : alive) best_alive = std::max(best_alive, h.log_prob);
    return best_alive > best_finished;
}

}  // namespace

Hypothesis beam_search(const NextTokenScorer& scorer, const SearchOptions& options) {
    if (options.beam_size == 0) throw ArgumentError("beam size must be at least 1");
    if (options.max_len == 0) throw ArgumentError("max_len must be at least 1");

    struct Candidate {
        std::size_t parent;
        int token;
        Real log_prob;
    };

    std::vector<Hypothesis> alive{Hypothesis{{options.bos}, 0.0, false}};
    std::vector<Hypothesis> finished;
    std::vector<Candidate> candidates;
    for (std::size_t step = 0; step < options.max_len && !alive.empty(); ++step) {
        candidates.clear();
        for (std::size_t i = 0; i < alive.size(); ++i) {
            const auto logp = scorer(alive[i].tokens);
            for (std::size_t v = 0; v < logp.size(); ++v)
                candidates.push_back({i, static_cast<int>(v), alive[i].log_prob + logp[v]});
        }
        // Same-length candidates: raw log-prob order equals normalised order.
        // Ties keep parent rank, then token id.
        const std::size_t keep = std::min(options.beam_size, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Hypothesis> next;
        for (std::size_t c = 0; c < keep; ++c) {
            Hypothesis h = alive[candidates[c].parent];
            h.tokens.push_back(candidates[c].token);
            h.log_prob = candidates[c].log_prob;
            if (candidates[c].token == options.eos) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        alive = std::move(next);
        if (finished.size() >= options.beam_size && !alive_can_win(alive, finished, options.alpha)) break;
    }

    std::vector<Hypothesis> pool = std::move(finished);
    for (auto& h : alive) {
        if (h.length() >= options.max_len) pool.push_back(std::move(h));
    }
    if (pool.empty()) throw ArgumentError("beam search produced no hypotheses");
    // Stable: earlier-finished hypotheses win ties.
    const auto best = std::max_element(pool.begin(), pool.end(), [&](const Hypothesis& a, const Hypothesis& b) {
        return a.score(options.alpha) < b.score(options.alpha);
    });
    return *best;
}

NextTokenScorer model_scorer(const ReportModel& model, const EncodedImage& image) {
    return [&model, &image](std::span<const int> prefix) { return model.next_log_probs(image, prefix); };
}

}  // namespace cmn
