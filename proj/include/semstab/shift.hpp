#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/embed.hpp"
#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/parallel.hpp"

namespace semstab {

struct StabilityParams {
  std::size_t k = 500;
  std::uint64_t cf_nb = 50;
  std::uint64_t cf_shift = 50;
  bool retain_neighborhoods = true;
  std::size_t workers = 1;
};

struct StabilityRecord {
  std::string term;
  double S = 0.0;
  std::uint64_t freq_P = 0;
  std::uint64_t freq_Q = 0;
  std::size_t overlap = 0;  // |nb_P ∩ nb_Q|
  std::size_t k_used = 0;   // k, or the smaller pool size when flagged
  bool flagged = false;     // a candidate pool was smaller than k
  std::vector<std::uint32_t> nb_P;  // indices into StabilityTable::vocab_P
  std::vector<std::uint32_t> nb_Q;  // indices into StabilityTable::vocab_Q
};

// Per-term stability between two periods, ascending by S (ties by term).
struct StabilityTable {
  std::string period_P = "P";
  std::string period_Q = "Q";
  StabilityParams params;
  std::shared_ptr<const Vocabulary> vocab_P;
  std::shared_ptr<const Vocabulary> vocab_Q;
  std::vector<StabilityRecord> records;

  const StabilityRecord* find(const std::string& term) const {
    for (const auto& r : records)
      if (r.term == term) return &r;
    return nullptr;
  }

  std::vector<std::string> neighbors_P(const StabilityRecord& r) const {
    std::vector<std::string> out;
    for (auto i : r.nb_P) out.push_back(vocab_P->term(i));
    return out;
  }
  std::vector<std::string> neighbors_Q(const StabilityRecord& r) const {
    std::vector<std::string> out;
    for (auto i : r.nb_Q) out.push_back(vocab_Q->term(i));
    return out;
  }
};

namespace detail {

inline void check_side(const EmbeddingSpace& space, const std::string& w, std::uint64_t cf_shift, const char* side) {
  auto i = space.vocabulary().find(w);
  require(i.has_value(), "shift", std::string("term '") + w + "' is missing from space " + side);
  require(space.vocabulary().frequency(*i) >= cf_shift, "shift",
          std::string("term '") + w + "' is below cf_shift in space " + side);
}

// Maps every index of `from` to the index of the same term in `to`, or -1.
inline std::vector<std::int64_t> index_map(const Vocabulary& from, const Vocabulary& to) {
  std::vector<std::int64_t> m(from.size(), -1);
  for (std::size_t i = 0; i < from.size(); ++i)
    if (auto j = to.find(from.term(i))) m[i] = static_cast<std::int64_t>(*j);
  return m;
}

struct PairedQuery {
  Neighborhood p, q;
  std::size_t k_used = 0;
  std::size_t overlap = 0;
  bool flagged = false;
};

inline PairedQuery paired_query(const NeighborIndex& ip, const NeighborIndex& iq, std::uint32_t wp, std::uint32_t wq,
                                std::size_t k, const std::vector<std::int64_t>& q_to_p) {
  PairedQuery r;
  const std::size_t pool = std::min(ip.pool_size_for(wp), iq.pool_size_for(wq));
  r.k_used = std::min(k, pool);
  r.flagged = r.k_used < k;
  require(r.k_used > 0, "shift", "empty neighbour pool");
  r.p = ip.query(wp, r.k_used);
  r.q = iq.query(wq, r.k_used);
  std::vector<std::int64_t> mapped;
  mapped.reserve(r.q.indices.size());
  for (auto i : r.q.indices) mapped.push_back(q_to_p[i]);
  std::sort(mapped.begin(), mapped.end());
  for (auto i : r.p.indices) r.overlap += std::binary_search(mapped.begin(), mapped.end(), std::int64_t{i}) ? 1 : 0;
  return r;
}

}  // namespace detail

// S(w) = |nb_P(w) ∩ nb_Q(w)| / k.
inline double stability(const EmbeddingSpace& P, const EmbeddingSpace& Q, const std::string& w, std::size_t k = 500,
                        std::uint64_t cf_nb = 50, std::uint64_t cf_shift = 50) {
  require(k > 0, "shift", "k must be positive");
  detail::check_side(P, w, cf_shift, "P");
  detail::check_side(Q, w, cf_shift, "Q");
  NeighborIndex ip(P, cf_nb), iq(Q, cf_nb);
  const auto q_to_p = detail::index_map(Q.vocabulary(), P.vocabulary());
  const auto r = detail::paired_query(ip, iq, static_cast<std::uint32_t>(*P.vocabulary().find(w)),
                                      static_cast<std::uint32_t>(*Q.vocabulary().find(w)), k, q_to_p);
  return static_cast<double>(r.overlap) / static_cast<double>(r.k_used);
}

// Scores every term with frequency >= cf_shift in both spaces. Terms
// ineligible on either side are absent rather than scored.
inline StabilityTable stability_table(const EmbeddingSpace& P, const EmbeddingSpace& Q, StabilityParams params = {},
                                      std::string name_P = "P", std::string name_Q = "Q") {
  require(params.k > 0, "shift", "k must be positive");
  StabilityTable table;
  table.period_P = std::move(name_P);
  table.period_Q = std::move(name_Q);
  table.params = params;
  table.vocab_P = P.vocabulary_ptr();
  table.vocab_Q = Q.vocabulary_ptr();

  const auto& vp = P.vocabulary();
  const auto& vq = Q.vocabulary();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> eligible;
  for (std::uint32_t i = 0; i < vp.size(); ++i) {
    if (vp.frequency(i) < params.cf_shift || P.vector_norm(i) == 0.0) continue;
    auto j = vq.find(vp.term(i));
    if (!j || vq.frequency(*j) < params.cf_shift || Q.vector_norm(*j) == 0.0) continue;
    eligible.emplace_back(i, static_cast<std::uint32_t>(*j));
  }
  require(!eligible.empty(), "shift", "no term meets cf_shift in both spaces (parameterization too strict)");

  NeighborIndex ip(P, params.cf_nb), iq(Q, params.cf_nb);
  require(!ip.pool().empty() && !iq.pool().empty(), "shift", "no neighbour candidates meet cf_nb");
  const auto q_to_p = detail::index_map(vq, vp);

  table.records.resize(eligible.size());
  parallel_for(eligible.size(), params.workers, [&](std::size_t e) {
    const auto [wp, wq] = eligible[e];
    auto r = detail::paired_query(ip, iq, wp, wq, params.k, q_to_p);
    auto& rec = table.records[e];
    rec.term = vp.term(wp);
    rec.freq_P = vp.frequency(wp);
    rec.freq_Q = vq.frequency(wq);
    rec.overlap = r.overlap;
    rec.k_used = r.k_used;
    rec.flagged = r.flagged;
    rec.S = static_cast<double>(r.overlap) / static_cast<double>(r.k_used);
    if (params.retain_neighborhoods) {
      rec.nb_P = std::move(r.p.indices);
      rec.nb_Q = std::move(r.q.indices);
    }
  });
  std::sort(table.records.begin(), table.records.end(), [](const StabilityRecord& a, const StabilityRecord& b) {
    if (a.S != b.S) return a.S < b.S;
    return a.term < b.term;
  });
  return table;
}

struct NeighborDiff {
  std::string term;
  std::vector<std::string> p_only;
  std::vector<std::string> q_only;
  std::vector<std::string> shared;  // in P-rank order
};

// Partitions the top_m neighbours of w in each space into exclusive and shared
// sets, the raw material for explaining a low stability score.
inline NeighborDiff neighbor_diff(const EmbeddingSpace& P, const EmbeddingSpace& Q, const std::string& w,
                                  std::size_t top_m = 15, std::uint64_t cf_nb = 50, std::uint64_t cf_shift = 50) {
  detail::check_side(P, w, cf_shift, "P");
  detail::check_side(Q, w, cf_shift, "Q");
  const auto np = neighborhood_terms(P, neighborhood(P, w, top_m, cf_nb));
  const auto nq = neighborhood_terms(Q, neighborhood(Q, w, top_m, cf_nb));
  NeighborDiff d{w, {}, {}, {}};
  for (const auto& t : np) {
    if (std::find(nq.begin(), nq.end(), t) != nq.end()) d.shared.push_back(t);
    else d.p_only.push_back(t);
  }
  for (const auto& t : nq)
    if (std::find(np.begin(), np.end(), t) == np.end()) d.q_only.push_back(t);
  return d;
}

inline nlohmann::json to_json(const NeighborDiff& d) {
  return {{"term", d.term}, {"p_only", d.p_only}, {"q_only", d.q_only}, {"shared", d.shared}};
}

inline void save_stability_csv(const std::filesystem::path& path, const StabilityTable& table) {
  auto out = open_output(path);
  out << "term,S,freq_P,freq_Q\n";
  for (const auto& r : table.records)
    out << csv_field(r.term) << ',' << format_real(r.S) << ',' << r.freq_P << ',' << r.freq_Q << '\n';
}

// Reads the CSV export back; neighbourhoods are not part of the format.
inline StabilityTable load_stability_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  require(line == "term,S,freq_P,freq_Q", "shift", "stability CSV must start with 'term,S,freq_P,freq_Q'");
  StabilityTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = parse_csv_line(line);
    require(f.size() == 4, "shift", "bad stability line: " + line);
    StabilityRecord r;
    r.term = f[0];
    r.S = std::stod(f[1]);
    r.freq_P = std::stoull(f[2]);
    r.freq_Q = std::stoull(f[3]);
    t.records.push_back(std::move(r));
  }
  return t;
}

inline void save_neighbor_diffs(const std::filesystem::path& path, const std::vector<NeighborDiff>& diffs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : diffs) arr.push_back(to_json(d));
  auto out = open_output(path);
  out << arr.dump(2) << '\n';
}

}  // namespace semstab
