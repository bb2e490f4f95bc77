#include "cmn/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "cmn/errors.hpp"

namespace cmn {

Tokens tokenize(const std::string& text) {
    Tokens out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            flush();
        } else if (std::ispunct(ch)) {
            flush();
            out.emplace_back(1, static_cast<char>(ch));
        } else {
            current.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    flush();
    return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace

BleuScores bleu(std::span<const CorpusPair> corpus, std::size_t n_max) {
    if (corpus.empty()) throw ArgumentError("BLEU needs a non-empty corpus");
    if (n_max == 0 || n_max > 4) throw ArgumentError("BLEU order must be in [1,4]");
    std::array<std::size_t, 4> matched{}, total{};
    BleuScores s;
    for (const auto& pair : corpus) {
        s.candidate_length += pair.candidate.size();
        s.reference_length += pair.reference.size();
        for (std::size_t n = 1; n <= n_max; ++n) {
            const auto cand = ngrams(pair.candidate, n);
            const auto ref = ngrams(pair.reference, n);
            for (const auto& [gram, count] : cand) {
                total[n - 1] += count;
                const auto it = ref.find(gram);
                if (it != ref.end()) matched[n - 1] += std::min(count, it->second);
            }
        }
    }
    const double c = static_cast<double>(s.candidate_length);
    const double r = static_cast<double>(s.reference_length);
    s.brevity_penalty = c == 0.0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= n_max; ++n) {
        const double p = total[n - 1] ? static_cast<double>(matched[n - 1]) / static_cast<double>(total[n - 1]) : 0.0;
        s.precision[n - 1] = p;
        if (p == 0.0) zero = true;
        else log_sum += std::log(p);
        s.bleu[n - 1] = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
    }
    return s;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l_pair(const Tokens& candidate, const Tokens& reference, double beta) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const auto lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(std::span<const CorpusPair> corpus, double beta) {
    if (corpus.empty()) throw ArgumentError("ROUGE-L needs a non-empty corpus");
    double total = 0.0;
    for (const auto& pair : corpus) total += rouge_l_pair(pair.candidate, pair.reference, beta);
    return total / static_cast<double>(corpus.size());
}

PrfScores label_prf(const std::map<std::string, LabelSet>& predicted, const std::map<std::string, LabelSet>& gold,
                    const std::set<std::string>& universe) {
    auto check = [&](const LabelSet& labels, const std::string& id) {
        for (const auto& c : labels)
            if (!universe.count(c)) throw ArgumentError("unknown category '" + c + "' for report '" + id + "'");
    };
    if (predicted.size() != gold.size()) throw ArgumentError("predicted and gold label maps hold different ids");
    PrfScores s;
    for (const auto& [id, gold_labels] : gold) {
        const auto it = predicted.find(id);
        if (it == predicted.end()) throw ArgumentError("no predicted labels for report '" + id + "'");
        check(gold_labels, id);
        check(it->second, id);
        for (const auto& c : it->second) (gold_labels.count(c) ? s.counts.tp : s.counts.fp) += 1;
        for (const auto& c : gold_labels)
            if (!it->second.count(c)) s.counts.fn += 1;
    }
    const auto tp = static_cast<double>(s.counts.tp);
    if (s.counts.tp + s.counts.fp) s.precision = tp / static_cast<double>(s.counts.tp + s.counts.fp);
    if (s.counts.tp + s.counts.fn) s.recall = tp / static_cast<double>(s.counts.tp + s.counts.fn);
    if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

std::set<std::string> RuleTable::categories() const {
    std::set<std::string> out;
    for (const auto& r : rules) out.insert(r.category);
    return out;
}

RuleTable RuleTable::parse(const std::string& text) {
    RuleTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        line = line.substr(first);
        if (line[0] == '!') {
            auto cue = tokenize(line.substr(1));
            if (cue.empty()) throw FormatError("empty negation cue on rule line " + std::to_string(lineno));
            table.negations.push_back(std::move(cue));
            continue;
        }
        const auto eq = line.rfind('=');
        if (eq == std::string::npos) throw FormatError("rule line " + std::to_string(lineno) + " lacks '='");
        auto phrase = tokenize(line.substr(0, eq));
        std::string category = line.substr(eq + 1);
        category.erase(0, category.find_first_not_of(" \t"));
        category.erase(category.find_last_not_of(" \t\r") + 1);
        if (phrase.empty() || category.empty()) {
            throw FormatError("rule line " + std::to_string(lineno) + " needs a phrase and a category");
        }
        table.rules.push_back({std::move(phrase), std::move(category)});
    }
    return table;
}

namespace {

bool matches_at(std::span<const std::string> tokens, std::size_t pos, const Tokens& phrase) {
    if (pos + phrase.size() > tokens.size()) return false;
    return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos));
}

bool negated(std::span<const std::string> tokens, std::size_t start, const RuleTable& table) {
    for (const auto& cue : table.negations) {
        // A cue counts when its last token is one of the `window` tokens before the phrase.
        for (std::size_t back = 0; back < table.negation_window && back < start; ++back) {
            const std::size_t end = start - back;  // one past the cue's last token
            if (end >= cue.size() && matches_at(tokens, end - cue.size(), cue)) return true;
        }
    }
    return false;
}

}  // namespace

LabelSet rule_labeler(std::span<const std::string> tokens, const RuleTable& table) {
    LabelSet out;
    for (const auto& rule : table.rules) {
        if (out.count(rule.category)) continue;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (matches_at(tokens, i, rule.phrase) && !negated(tokens, i, table)) {
                out.insert(rule.category);
                break;
            }
        }
    }
    return out;
}

}  // namespace cmn
