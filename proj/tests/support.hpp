#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semstab.hpp"

namespace testsupport {

namespace fs = std::filesystem;

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            ("semstab_" + tag + "_" + std::to_string(semstab::splitmix64(reinterpret_cast<std::uintptr_t>(this))));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& f) const { return path_ / f; }

 private:
  fs::path path_;
};

inline std::shared_ptr<const semstab::Vocabulary> vocab_of(const std::vector<std::string>& terms,
                                                           const std::vector<std::uint64_t>& freqs) {
  return std::make_shared<const semstab::Vocabulary>(terms, freqs);
}

// Space whose rows are given in the order of `terms` (reordered to canonical
// vocabulary order internally).
inline semstab::EmbeddingSpace space_of(const std::vector<std::string>& terms, const std::vector<std::uint64_t>& freqs,
                                        const std::vector<std::vector<float>>& rows) {
  auto v = vocab_of(terms, freqs);
  const std::size_t d = rows.at(0).size();
  std::vector<float> m(v->size() * d);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto j = *v->find(terms[i]);
    std::copy(rows[i].begin(), rows[i].end(), m.begin() + static_cast<std::ptrdiff_t>(j * d));
  }
  return semstab::EmbeddingSpace(v, d, std::move(m));
}

// Random space over terms "t000".. with random frequencies in [lo, hi].
inline semstab::EmbeddingSpace random_space(std::size_t V, std::size_t d, std::uint64_t seed, std::uint64_t lo = 1,
                                            std::uint64_t hi = 200, const std::vector<std::string>* names = nullptr) {
  semstab::Rng rng(seed);
  std::vector<std::string> terms;
  std::vector<std::uint64_t> freqs;
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < V; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%04zu", i);
    terms.push_back(names ? (*names)[i] : buf);
    freqs.push_back(lo + rng.next() % (hi - lo + 1));
    std::vector<float> r(d);
    for (auto& x : r) x = static_cast<float>(rng.uniform(-1, 1));
    rows.push_back(std::move(r));
  }
  return space_of(terms, freqs, rows);
}

// Brute-force neighbours: full sort of every candidate by (distance, term).
inline std::vector<std::string> brute_neighbors(const semstab::EmbeddingSpace& s, const std::string& w, std::size_t k,
                                                std::uint64_t cf_nb) {
  const auto& v = s.vocabulary();
  const auto vw = *s.vector_of(w);
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v.term(i) == w || v.frequency(i) < cf_nb) continue;
    const auto vc = s.vector(i);
    double uv = 0, uu = 0, cc = 0;
    for (std::size_t j = 0; j < s.dim(); ++j) {
      uv += static_cast<double>(vw[j]) * vc[j];
      uu += static_cast<double>(vw[j]) * vw[j];
      cc += static_cast<double>(vc[j]) * vc[j];
    }
    all.emplace_back(1.0 - uv / (std::sqrt(uu) * std::sqrt(cc)), v.term(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

inline semstab::Post post(std::string user, semstab::EpochSeconds t, std::string text,
                          std::optional<int> label = std::nullopt, std::string community = "") {
  return semstab::Post{std::move(user), t, std::move(text), label, std::move(community)};
}

// Random inputs for every selection method: source/target counts, a labeled
// source matrix, a fixed-C model over the Intersection set and a stability
// table with quantized scores.
struct SelectionWorld {
  semstab::TermCounts source, target;
  std::optional<semstab::DocumentTermMatrix> dtm;
  semstab::ClassifierModel model;
  semstab::StabilityTable table;
  std::uint64_t seed = 0;

  semstab::SelectionInputs inputs() const {
    semstab::SelectionInputs in;
    in.source = &source;
    in.target = &target;
    in.labeled_source = &*dtm;
    in.model = &model;
    in.stability = &table;
    in.seed = seed;
    return in;
  }
};

inline SelectionWorld random_selection_world(std::uint64_t seed) {
  semstab::Rng rng(seed);
  SelectionWorld w;
  w.seed = seed;
  const std::size_t V = 40 + rng.next() % 160;
  std::vector<std::string> terms;
  std::vector<std::uint64_t> freqs;
  for (std::size_t i = 0; i < V; ++i) {
    terms.push_back("w" + std::to_string(rng.next() % 100000) + "_" + std::to_string(i));
    // First three terms always clear both gates so the base is never empty.
    const std::uint64_t s = i < 3 ? 51 + rng.next() % 100 : rng.next() % 150;
    w.source[terms.back()] = s;
    freqs.push_back(std::max<std::uint64_t>(s, 1));
    if (i < 3 || rng.bernoulli(0.8)) w.target[terms.back()] = i < 3 ? 51 + rng.next() % 100 : rng.next() % 150;
  }
  auto vocab = vocab_of(terms, freqs);
  semstab::DocumentTermMatrix m(vocab);
  const std::size_t rows = 20 + rng.next() % 40;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<semstab::DocumentTermMatrix::Entry> e;
    for (std::uint32_t j = 0; j < V; ++j)
      if (rng.bernoulli(0.2)) e.push_back({j, static_cast<std::uint32_t>(1 + rng.next() % 5)});
    m.add_row("u" + std::to_string(r), e, 1, static_cast<int>(r % 2));
  }
  w.dtm = std::move(m);
  const auto base = semstab::select_intersection(w.source, w.target);
  semstab::FitOptions fo;
  fo.fixed_C = 1.0;
  w.model = semstab::fit_classifier(*w.dtm, base, fo, "intersection", 100);
  const std::size_t k = 20;
  for (const auto& t : base) {
    semstab::StabilityRecord r;
    r.term = t;
    r.overlap = rng.next() % (k + 1);
    r.k_used = k;
    r.S = static_cast<double>(r.overlap) / static_cast<double>(k);
    r.freq_P = w.source.at(t);
    r.freq_Q = w.target.at(t);
    w.table.records.push_back(r);
  }
  return w;
}

}  // namespace testsupport
