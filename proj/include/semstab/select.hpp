#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/model.hpp"
#include "semstab/rng.hpp"
#include "semstab/shift.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

enum class Method { Cumulative, Intersection, Frequency, Random, Chi2, Coefficient, Overlap, Weighted };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m = {Method::Cumulative, Method::Intersection, Method::Frequency,
                                        Method::Random,     Method::Chi2,         Method::Coefficient,
                                        Method::Overlap,    Method::Weighted};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Cumulative: return "cumulative";
    case Method::Intersection: return "intersection";
    case Method::Frequency: return "frequency";
    case Method::Random: return "random";
    case Method::Chi2: return "chi2";
    case Method::Coefficient: return "coefficient";
    case Method::Overlap: return "overlap";
    case Method::Weighted: return "weighted";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : all_methods())
    if (to_string(m) == s) return m;
  fail("select", "unknown selection method '" + s + "'");
}

// Baselines select a fixed set; every other method ranks the Intersection set.
inline bool is_score_based(Method m) { return m != Method::Cumulative && m != Method::Intersection; }

inline std::vector<int> default_percentiles() { return {10, 20, 30, 40, 50, 60, 70, 80, 90, 100}; }

// ---- frequency gates ----------------------------------------------------------

// Terms whose source count is strictly above `min_freq`, sorted.
inline std::vector<std::string> select_cumulative(const TermCounts& source, std::uint64_t min_freq = 50) {
  std::vector<std::string> out;
  for (const auto& [t, c] : source)
    if (c > min_freq) out.push_back(t);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> select_intersection(const TermCounts& source, const TermCounts& target,
                                                    std::uint64_t min_freq = 50) {
  std::vector<std::string> out;
  for (const auto& [t, c] : source) {
    if (c <= min_freq) continue;
    auto it = target.find(t);
    if (it != target.end() && it->second > min_freq) out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- scores ---------------------------------------------------------------------

struct SelectionScore {
  Method method = Method::Frequency;
  std::map<std::string, double> scores;
  std::vector<std::string> provenance;  // inputs the scores were derived from
};

inline SelectionScore score_frequency(const TermCounts& source, const std::vector<std::string>& base) {
  SelectionScore s{Method::Frequency, {}, {"source_counts"}};
  for (const auto& t : base) {
    auto it = source.find(t);
    s.scores[t] = it == source.end() ? 0.0 : static_cast<double>(it->second);
  }
  return s;
}

// One uniform draw per term from a stream keyed by (seed, term), so a term's
// score does not depend on which other terms are present.
inline SelectionScore score_random(const std::vector<std::string>& base, std::uint64_t seed) {
  SelectionScore s{Method::Random, {}, {"seed=" + std::to_string(seed)}};
  for (const auto& t : base) s.scores[t] = Rng(derive_seed(seed, t)).uniform();
  return s;
}

// Count-based chi-squared: O_cf is the summed count of f in class c and
// E_cf = (share of rows in class c) * (total count of f).
inline SelectionScore score_chi2(const DocumentTermMatrix& source, const std::vector<std::string>& base) {
  require(source.rows() > 0 && source.has_labels(), "select", "chi2 needs a labeled source matrix");
  std::vector<double> obs0(source.cols(), 0.0), obs1(source.cols(), 0.0);
  double n1 = 0;
  for (std::size_t r = 0; r < source.rows(); ++r) {
    const bool pos = source.label(r) == 1;
    n1 += pos;
    auto& o = pos ? obs1 : obs0;
    for (const auto& e : source.row(r)) o[e.col] += e.count;
  }
  const double share1 = n1 / static_cast<double>(source.rows()), share0 = 1.0 - share1;
  SelectionScore s{Method::Chi2, {}, {"labeled_source_matrix"}};
  for (const auto& t : base) {
    double chi = 0.0;
    if (auto j = source.vocabulary().find(t)) {
      const double total = obs0[*j] + obs1[*j];
      for (auto [o, share] : {std::pair{obs0[*j], share0}, std::pair{obs1[*j], share1}}) {
        const double e = share * total;
        if (e > 0) chi += (o - e) * (o - e) / e;
      }
    }
    s.scores[t] = chi;
  }
  return s;
}

inline SelectionScore score_coefficient(const ClassifierModel& model, const std::vector<std::string>& base) {
  SelectionScore s{Method::Coefficient, {}, {"model:C=" + format_real(model.C)}};
  for (const auto& t : base) {
    auto j = model.vocab->find(t);
    require(j.has_value(), "select", "coefficient: model has no weight for base term '" + t + "'");
    s.scores[t] = std::abs(model.w[*j]);
  }
  return s;
}

inline SelectionScore score_overlap(const StabilityTable& table, const std::vector<std::string>& base) {
  std::map<std::string, double> by_term;
  for (const auto& r : table.records) by_term[r.term] = r.S;
  SelectionScore s{Method::Overlap, {}, {"stability:" + table.period_P + "|" + table.period_Q}};
  for (const auto& t : base) {
    auto it = by_term.find(t);
    require(it != by_term.end(), "select", "overlap: stability table has no score for base term '" + t + "'");
    s.scores[t] = it->second;
  }
  return s;
}

// Ascending rank scaled to [0, 1]; tied scores share the highest rank of
// their group, so the top scorer always maps to 1.
inline std::map<std::string, double> rank_normalize(const std::map<std::string, double>& scores) {
  std::vector<double> sorted;
  sorted.reserve(scores.size());
  for (const auto& [t, v] : scores) sorted.push_back(v);
  std::sort(sorted.begin(), sorted.end());
  std::map<std::string, double> out;
  const double n = static_cast<double>(sorted.size());
  for (const auto& [t, v] : scores) {
    const double le = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
    out[t] = n > 1 ? (le - 1.0) / (n - 1.0) : 1.0;
  }
  return out;
}

inline SelectionScore score_weighted(const SelectionScore& coefficient, const SelectionScore& overlap) {
  require(coefficient.method == Method::Coefficient && overlap.method == Method::Overlap, "select",
          "weighted: needs a coefficient score and an overlap score");
  require(coefficient.scores.size() == overlap.scores.size(), "select", "weighted: inputs cover different terms");
  const auto rc = rank_normalize(coefficient.scores), ro = rank_normalize(overlap.scores);
  SelectionScore s{Method::Weighted, {}, {}};
  s.provenance = coefficient.provenance;
  s.provenance.insert(s.provenance.end(), overlap.provenance.begin(), overlap.provenance.end());
  for (const auto& [t, v] : rc) {
    auto it = ro.find(t);
    require(it != ro.end(), "select", "weighted: inputs cover different terms");
    s.scores[t] = 0.5 * v + 0.5 * it->second;
  }
  return s;
}

// ---- percentile selection ---------------------------------------------------------

struct SelectedVocabulary {
  Method method = Method::Frequency;
  int p = 100;
  std::vector<std::string> terms;  // best first for score-based methods, sorted otherwise
  std::shared_ptr<const std::vector<std::string>> base;  // the Intersection set
};

inline std::size_t top_count(std::size_t base_size, int p) {
  return (static_cast<std::size_t>(p) * base_size + 99) / 100;
}

inline void check_percentile(int p) { require(p >= 1 && p <= 100, "select", "percentile must be in 1..100"); }

// Top ceil(p% * |base|) base terms by (score desc, term asc).
inline SelectedVocabulary take_top(const SelectionScore& scores, int p,
                                   std::shared_ptr<const std::vector<std::string>> base) {
  check_percentile(p);
  require(base != nullptr, "select", "missing base vocabulary");
  std::vector<std::pair<double, const std::string*>> ranked;
  ranked.reserve(base->size());
  for (const auto& t : *base) {
    auto it = scores.scores.find(t);
    require(it != scores.scores.end(), "select", to_string(scores.method) + ": no score for base term '" + t + "'");
    require(std::isfinite(it->second), "select", to_string(scores.method) + ": non-finite score for '" + t + "'");
    ranked.emplace_back(it->second, &t);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  });
  SelectedVocabulary sel{scores.method, p, {}, base};
  const std::size_t n = top_count(base->size(), p);
  for (std::size_t i = 0; i < n; ++i) sel.terms.push_back(*ranked[i].second);
  return sel;
}

// Everything a selection can depend on. Methods only touch what they need and
// fail with their own name when it is absent.
struct SelectionInputs {
  const TermCounts* source = nullptr;
  const TermCounts* target = nullptr;
  const DocumentTermMatrix* labeled_source = nullptr;
  const ClassifierModel* model = nullptr;  // trained on the Intersection vocabulary
  const StabilityTable* stability = nullptr;
  std::uint64_t seed = 0;
  std::uint64_t min_freq = 50;
};

// Computes each method's scores once and answers (method, p) queries.
class Selector {
 public:
  explicit Selector(SelectionInputs in) : in_(in) {
    require(in_.source != nullptr, "select", "source counts are required");
    cumulative_ = select_cumulative(*in_.source, in_.min_freq);
    if (in_.target)
      base_ = std::make_shared<const std::vector<std::string>>(
          select_intersection(*in_.source, *in_.target, in_.min_freq));
  }

  const std::vector<std::string>& cumulative() const { return cumulative_; }
  std::shared_ptr<const std::vector<std::string>> base() const {
    require(base_ != nullptr, "select", "intersection: target counts are required");
    return base_;
  }

  const SelectionScore& scores(Method m) {
    require(is_score_based(m), "select", to_string(m) + " is a fixed baseline and has no scores");
    auto it = cache_.find(m);
    if (it != cache_.end()) return it->second;
    const auto& b = *base();
    SelectionScore s;
    switch (m) {
      case Method::Frequency: s = score_frequency(*in_.source, b); break;
      case Method::Random: s = score_random(b, in_.seed); break;
      case Method::Chi2:
        require(in_.labeled_source != nullptr, "select", "chi2: labeled source matrix is required");
        s = score_chi2(*in_.labeled_source, b);
        break;
      case Method::Coefficient:
        require(in_.model != nullptr, "select", "coefficient: trained model is required");
        s = score_coefficient(*in_.model, b);
        break;
      case Method::Overlap:
        require(in_.stability != nullptr, "select", "overlap: stability table is required");
        s = score_overlap(*in_.stability, b);
        break;
      case Method::Weighted:
        require(in_.model != nullptr, "select", "weighted: trained model is required");
        require(in_.stability != nullptr, "select", "weighted: stability table is required");
        s = score_weighted(scores(Method::Coefficient), scores(Method::Overlap));
        break;
      default: break;
    }
    return cache_.emplace(m, std::move(s)).first->second;
  }

  // Baselines ignore p and return their whole (sorted) set.
  SelectedVocabulary select(Method m, int p) {
    check_percentile(p);
    if (m == Method::Cumulative) return {m, p, cumulative_, base_};
    if (m == Method::Intersection) return {m, p, *base(), base_};
    return take_top(scores(m), p, base());
  }

 private:
  SelectionInputs in_;
  std::vector<std::string> cumulative_;
  std::shared_ptr<const std::vector<std::string>> base_;
  std::map<Method, SelectionScore> cache_;
};

inline nlohmann::json to_json(const SelectedVocabulary& s) {
  return {{"method", to_string(s.method)}, {"p", s.p}, {"terms", s.terms}};
}

inline void save_selection_json(const std::filesystem::path& path, const std::vector<SelectedVocabulary>& sels) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : sels) arr.push_back(to_json(s));
  auto out = open_output(path);
  out << arr.dump(2) << '\n';
}

inline std::vector<SelectedVocabulary> load_selection_json(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  require(j.is_array(), "select", "selection file must hold a JSON array");
  std::vector<SelectedVocabulary> out;
  for (const auto& e : j)
    out.push_back({method_from_string(e.at("method").get<std::string>()), e.at("p").get<int>(),
                   e.at("terms").get<std::vector<std::string>>(), nullptr});
  return out;
}

inline void save_scores_csv(const std::filesystem::path& path, const SelectionScore& s) {
  auto out = open_output(path);
  out << "term,score\n";
  for (const auto& [t, v] : s.scores) out << csv_field(t) << ',' << format_real(v) << '\n';
}

}  // namespace semstab
