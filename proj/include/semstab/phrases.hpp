#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semstab/error.hpp"

namespace semstab {

inline constexpr char kPhraseJoiner = '_';

struct PhraseParams {
  std::size_t min_count = 5;   // count discount and frequency floor
  double threshold = 10.0;     // strict cutoff on the collocation score
  int passes = 2;
};

// Learned bigram merges. Keys are the two surface tokens being joined; a token
// may itself be a phrase from an earlier pass ("new_york", "city").
class PhraseModel {
 public:
  using Pair = std::pair<std::string, std::string>;

  PhraseModel() = default;
  explicit PhraseModel(PhraseParams params) : params_(params) {}

  const PhraseParams& params() const { return params_; }
  const std::map<Pair, double>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }

  void add(std::string a, std::string b, double score) {
    require(score > params_.threshold, "corpus", "phrase merge score must exceed the threshold");
    merges_[{std::move(a), std::move(b)}] = score;
  }

  bool contains(const std::string& a, const std::string& b) const {
    return merges_.find(Pair{a, b}) != merges_.end();
  }

  // Phrases never grow beyond passes + 1 parts (trigrams for two passes).
  std::size_t max_parts() const { return static_cast<std::size_t>(params_.passes) + 1; }

 private:
  PhraseParams params_;
  std::map<Pair, double> merges_;
};

inline std::size_t phrase_parts(std::string_view token) {
  return 1 + static_cast<std::size_t>(std::count(token.begin(), token.end(), kPhraseJoiner));
}

// Collocation score with count discount:
//   (count(ab) - delta) * total / (count(a) * count(b)).
inline double phrase_score(std::uint64_t count_ab, std::uint64_t count_a, std::uint64_t count_b,
                           std::uint64_t total, std::size_t delta) {
  return (static_cast<double>(count_ab) - static_cast<double>(delta)) * static_cast<double>(total) /
         (static_cast<double>(count_a) * static_cast<double>(count_b));
}

namespace detail {

// One greedy left-to-right pass; returns the merged stream.
inline std::vector<std::string> merge_once(const std::vector<std::string>& tokens, const PhraseModel& model) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (i + 1 < tokens.size() && model.contains(tokens[i], tokens[i + 1]) &&
        phrase_parts(tokens[i]) + phrase_parts(tokens[i + 1]) <= model.max_parts()) {
      out.push_back(tokens[i] + kPhraseJoiner + tokens[i + 1]);
      i += 2;
    } else {
      out.push_back(tokens[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace detail

inline std::vector<std::string> apply_phrases(const std::vector<std::string>& tokens, const PhraseModel& model) {
  if (model.empty()) return tokens;
  std::vector<std::string> current = tokens;
  for (int pass = 0; pass < model.params().passes; ++pass) {
    std::vector<std::string> next = detail::merge_once(current, model);
    if (next.size() == current.size()) break;
    current = std::move(next);
  }
  return current;
}

// Learns merges over `passes` rounds. Each round counts unigrams and adjacent
// pairs within every sequence of the current (already merged) streams, keeps
// pairs with count >= min_count and score > threshold, and re-merges the
// streams before the next round.
inline PhraseModel learn_phrases(const std::vector<std::vector<std::string>>& sequences,
                                 PhraseParams params = {}) {
  require(params.min_count >= 1, "corpus", "phrase min_count must be >= 1");
  require(params.threshold > 0.0, "corpus", "phrase threshold must be positive");
  require(params.passes >= 1, "corpus", "phrase passes must be >= 1");
  PhraseModel model(params);

  std::vector<std::vector<std::string>> streams = sequences;
  for (int pass = 0; pass < params.passes; ++pass) {
    std::unordered_map<std::string, std::uint32_t> ids;
    std::vector<std::uint64_t> unigram;
    std::vector<const std::string*> names;
    std::unordered_map<std::uint64_t, std::uint64_t> bigram;
    std::uint64_t total = 0;

    auto intern = [&](const std::string& tok) {
      auto [it, inserted] = ids.try_emplace(tok, static_cast<std::uint32_t>(unigram.size()));
      if (inserted) {
        unigram.push_back(0);
        names.push_back(&it->first);
      }
      return it->second;
    };

    for (const auto& seq : streams) {
      std::uint32_t prev = 0;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const std::uint32_t id = intern(seq[i]);
        ++unigram[id];
        ++total;
        if (i > 0) ++bigram[(static_cast<std::uint64_t>(prev) << 32) | id];
        prev = id;
      }
    }
    if (total == 0) break;

    std::size_t added = 0;
    for (const auto& [key, count] : bigram) {
      if (count < params.min_count) continue;
      const auto a = static_cast<std::uint32_t>(key >> 32);
      const auto b = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
      if (phrase_parts(*names[a]) + phrase_parts(*names[b]) > model.max_parts()) continue;
      const double score = phrase_score(count, unigram[a], unigram[b], total, params.min_count);
      if (score > params.threshold && !model.contains(*names[a], *names[b])) {
        model.add(*names[a], *names[b], score);
        ++added;
      }
    }
    if (added == 0 || pass + 1 == params.passes) break;
    for (auto& seq : streams) seq = detail::merge_once(seq, model);
  }
  return model;
}

}  // namespace semstab
