#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/corpus.hpp"
#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/model.hpp"
#include "semstab/timeutil.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

struct PrevalenceEstimate {
  std::string period;
  std::size_t eligible = 0;
  std::size_t positive = 0;
  double prevalence = 0.0;
};

// Share of probabilities strictly above 0.5.
inline PrevalenceEstimate prevalence_from_probabilities(const std::vector<double>& proba, std::string period = "") {
  require(!proba.empty(), "monitor", "no eligible users");
  PrevalenceEstimate e;
  e.period = std::move(period);
  e.eligible = proba.size();
  for (double p : proba) e.positive += p > 0.5 ? 1 : 0;
  e.prevalence = static_cast<double>(e.positive) / static_cast<double>(e.eligible);
  return e;
}

// Rows with at least `min_posts` posts are eligible.
inline PrevalenceEstimate estimate_prevalence(const ClassifierModel& model, const DocumentTermMatrix& m,
                                              std::size_t min_posts, std::string period = "") {
  std::set<std::string> seen;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    require(seen.insert(m.row_id(r)).second, "monitor", "duplicate user row '" + m.row_id(r) + "'");
    if (m.post_count(r) >= min_posts) rows.push_back(r);
  }
  require(!rows.empty(), "monitor", "no user meets min_posts=" + std::to_string(min_posts) + " in period " + period);
  return prevalence_from_probabilities(predict_proba(model, m.select_rows(rows)), std::move(period));
}

struct PrevalenceChange {
  double absolute = 0.0;             // during - pre, as a proportion (0.05 = 5pp)
  std::optional<double> relative;    // (during - pre) / pre; absent when pre == 0
  bool relative_undefined = false;

  double absolute_pp() const { return 100.0 * absolute; }
};

inline PrevalenceChange prevalence_change(const PrevalenceEstimate& pre, const PrevalenceEstimate& during) {
  PrevalenceChange c;
  c.absolute = during.prevalence - pre.prevalence;
  if (pre.prevalence > 0.0) c.relative = c.absolute / pre.prevalence;
  else c.relative_undefined = true;
  return c;
}

// ---- keyword series ------------------------------------------------------------

struct KeywordBucket {
  std::int64_t month = 0;  // months since 1970-01
  std::size_t posts = 0;
  std::optional<double> proportion;  // absent for a bucket with no posts
};

struct KeywordSeries {
  std::string term;
  std::vector<KeywordBucket> buckets;  // contiguous months
};

namespace detail {

inline bool contains_sequence(const std::vector<std::string>& tokens, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > tokens.size()) return false;
  return std::search(tokens.begin(), tokens.end(), needle.begin(), needle.end()) != tokens.end();
}

}  // namespace detail

// Per month, the fraction of posts whose token stream contains the term. A term
// that tokenizes to several tokens matches as a contiguous run; a phrase token
// such as "feel_sad" matches only when `phrases` merges it.
inline std::vector<KeywordSeries> keyword_series(const TokenizedStore& store, const std::vector<std::string>& terms,
                                                 const PhraseModel* phrases = nullptr) {
  std::vector<std::vector<std::string>> needles;
  for (const auto& t : terms) {
    auto toks = tokenize(t);
    require(!toks.empty(), "monitor", "term '" + t + "' has no tokens");
    needles.push_back(std::move(toks));
  }
  std::map<std::int64_t, std::size_t> posts;
  std::map<std::int64_t, std::vector<std::size_t>> hits;
  for (const auto& u : store) {
    for (const auto& p : u.posts) {
      const auto m = month_index(p.timestamp);
      ++posts[m];
      auto& h = hits[m];
      h.resize(terms.size(), 0);
      const auto toks = phrases ? apply_phrases(p.tokens, *phrases) : p.tokens;
      for (std::size_t k = 0; k < needles.size(); ++k) h[k] += detail::contains_sequence(toks, needles[k]) ? 1 : 0;
    }
  }
  std::vector<KeywordSeries> out;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    KeywordSeries s{terms[k], {}};
    if (!posts.empty()) {
      for (auto m = posts.begin()->first; m <= posts.rbegin()->first; ++m) {
        KeywordBucket b{m, 0, std::nullopt};
        if (auto it = posts.find(m); it != posts.end()) {
          b.posts = it->second;
          b.proportion = static_cast<double>(hits[m][k]) / static_cast<double>(it->second);
        }
        s.buckets.push_back(b);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<KeywordSeries> keyword_series(const PostStore& store, const std::vector<std::string>& terms,
                                                 const PhraseModel* phrases = nullptr) {
  return keyword_series(tokenize_store(store), terms, phrases);
}

// ln(P(t | positive) / P(t)) over token counts, add-one smoothed.
inline std::map<std::string, double> pmi_class(const DocumentTermMatrix& labeled) {
  require(labeled.rows() > 0 && labeled.has_labels(), "monitor", "PMI needs a labeled matrix");
  std::vector<double> pos(labeled.cols(), 0.0), all(labeled.cols(), 0.0);
  double n_pos = 0, n_all = 0;
  for (std::size_t r = 0; r < labeled.rows(); ++r) {
    for (const auto& e : labeled.row(r)) {
      all[e.col] += e.count;
      n_all += e.count;
      if (labeled.label(r) == 1) {
        pos[e.col] += e.count;
        n_pos += e.count;
      }
    }
  }
  const double V = static_cast<double>(labeled.cols());
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < labeled.cols(); ++j)
    out[labeled.vocabulary().term(j)] = std::log(((pos[j] + 1.0) / (n_pos + V)) / ((all[j] + 1.0) / (n_all + V)));
  return out;
}

// Highest-PMI terms among those with at least `min_count` occurrences.
inline std::vector<std::string> top_pmi_terms(const DocumentTermMatrix& labeled, std::size_t n,
                                              std::uint64_t min_count = 5) {
  const auto pmi = pmi_class(labeled);
  const auto totals = labeled.column_totals();
  std::vector<std::pair<double, std::string>> ranked;
  for (std::size_t j = 0; j < labeled.cols(); ++j)
    if (totals[j] >= min_count) ranked.emplace_back(pmi.at(labeled.vocabulary().term(j)), labeled.vocabulary().term(j));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) out.push_back(ranked[i].second);
  return out;
}

// ---- exports -------------------------------------------------------------------------

struct PrevalenceRow {
  std::string method;
  int p = 100;
  PrevalenceEstimate estimate;
};

inline void save_prevalence_csv(const std::filesystem::path& path, const std::vector<PrevalenceRow>& rows) {
  auto out = open_output(path);
  out << "method,p,period,eligible,positive,prevalence\n";
  for (const auto& r : rows)
    out << csv_field(r.method) << ',' << r.p << ',' << csv_field(r.estimate.period) << ',' << r.estimate.eligible
        << ',' << r.estimate.positive << ',' << format_real(r.estimate.prevalence) << '\n';
}

inline void save_keyword_series_csv(const std::filesystem::path& path, const std::vector<KeywordSeries>& series) {
  auto out = open_output(path);
  out << "term,bucket,proportion\n";
  for (const auto& s : series)
    for (const auto& b : s.buckets)
      out << csv_field(s.term) << ',' << month_label(b.month) << ','
          << (b.proportion ? format_real(*b.proportion) : std::string()) << '\n';
}

inline nlohmann::json to_json(const PrevalenceEstimate& e) {
  return {{"period", e.period}, {"eligible", e.eligible}, {"positive", e.positive}, {"prevalence", e.prevalence}};
}

inline nlohmann::json to_json(const PrevalenceChange& c) {
  nlohmann::json j{{"absolute", c.absolute}, {"absolute_pp", c.absolute_pp()}};
  j["relative"] = c.relative ? nlohmann::json(*c.relative) : nlohmann::json(nullptr);
  j["relative_undefined"] = c.relative_undefined;
  return j;
}

}  // namespace semstab
