#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/rng.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

struct EmbedConfig {
  std::size_t dim = 100;
  std::size_t epochs = 20;
  std::size_t window = 5;
  std::size_t negatives = 5;
  double alpha_start = 0.025;
  double alpha_end = 0.0001;
  double subsample = 0.0;  // 0 disables frequent-word subsampling; 1e-3 is the usual setting
  double ns_exponent = 0.75;
  std::uint64_t seed = 1;
  std::size_t workers = 1;  // > 1 selects lock-free parallel updates (not bitwise reproducible)

  void validate() const {
    require(dim > 0, "embed", "dimension must be positive");
    require(window > 0 && negatives > 0, "embed", "window and negatives must be positive");
    require(alpha_start > alpha_end && alpha_end > 0.0, "embed", "learning rate must decay from start > end > 0");
    require(subsample >= 0.0, "embed", "subsample threshold must be non-negative");
    require(workers >= 1, "embed", "workers must be >= 1");
  }
};

inline nlohmann::json to_json(const EmbedConfig& c) {
  return {{"dim", c.dim},         {"epochs", c.epochs},           {"window", c.window},
          {"negatives", c.negatives}, {"alpha_start", c.alpha_start}, {"alpha_end", c.alpha_end},
          {"subsample", c.subsample}, {"ns_exponent", c.ns_exponent}, {"seed", c.seed},
          {"workers", c.workers}};
}

inline EmbedConfig embed_config_from_json(const nlohmann::json& j) {
  EmbedConfig c;
  c.dim = j.value("dim", c.dim);
  c.epochs = j.value("epochs", c.epochs);
  c.window = j.value("window", c.window);
  c.negatives = j.value("negatives", c.negatives);
  c.alpha_start = j.value("alpha_start", c.alpha_start);
  c.alpha_end = j.value("alpha_end", c.alpha_end);
  c.subsample = j.value("subsample", c.subsample);
  c.ns_exponent = j.value("ns_exponent", c.ns_exponent);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  return c;
}

// Dot product with a fixed summation order; every distance in the library
// goes through here so that independent scans agree bit for bit.
inline double dot(std::span<const float> u, std::span<const float> v) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
  const std::size_t n = u.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += static_cast<double>(u[i]) * v[i];
    a1 += static_cast<double>(u[i + 1]) * v[i + 1];
    a2 += static_cast<double>(u[i + 2]) * v[i + 2];
    a3 += static_cast<double>(u[i + 3]) * v[i + 3];
  }
  for (; i < n; ++i) a0 += static_cast<double>(u[i]) * v[i];
  return (a0 + a1) + (a2 + a3);
}

inline double norm(std::span<const float> u) { return std::sqrt(dot(u, u)); }

// 1 - cos(u, v), in [0, 2].
inline double cosine_distance(std::span<const float> u, std::span<const float> v) {
  require(u.size() == v.size(), "embed", "vectors differ in dimension");
  const double nu = norm(u), nv = norm(v);
  require(nu > 0.0 && nv > 0.0, "embed", "zero-norm vector (untrained term)");
  return 1.0 - dot(u, v) / (nu * nv);
}

// Per-period dense vectors aligned with a vocabulary.
class EmbeddingSpace {
 public:
  EmbeddingSpace() = default;
  EmbeddingSpace(std::shared_ptr<const Vocabulary> vocab, std::size_t dim, std::vector<float> vectors,
                 EmbedConfig config = {}, std::vector<std::uint8_t> untrained = {})
      : vocab_(std::move(vocab)), dim_(dim), vectors_(std::move(vectors)), config_(config),
        untrained_(std::move(untrained)) {
    require(dim_ > 0, "embed", "dimension must be positive");
    require(vectors_.size() == vocab_->size() * dim_, "embed", "matrix rows must align with the vocabulary");
    if (untrained_.empty()) untrained_.assign(vocab_->size(), 0);
    require(untrained_.size() == vocab_->size(), "embed", "untrained flags must align with the vocabulary");
    for (float x : vectors_) require(std::isfinite(x), "embed", "non-finite vector component");
    norms_.resize(vocab_->size());
    for (std::size_t i = 0; i < vocab_->size(); ++i) norms_[i] = norm(vector(i));
  }

  const Vocabulary& vocabulary() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocabulary_ptr() const { return vocab_; }
  std::size_t size() const { return vocab_->size(); }
  std::size_t dim() const { return dim_; }
  const EmbedConfig& config() const { return config_; }
  const std::vector<float>& matrix() const { return vectors_; }
  std::span<const float> vector(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }
  double vector_norm(std::size_t i) const { return norms_[i]; }
  bool untrained(std::size_t i) const { return untrained_[i] != 0; }
  const std::vector<std::uint8_t>& untrained_flags() const { return untrained_; }
  const std::vector<double>& epoch_losses() const { return losses_; }
  void set_epoch_losses(std::vector<double> l) { losses_ = std::move(l); }

  std::optional<std::span<const float>> vector_of(const std::string& term) const {
    auto i = vocab_->find(term);
    if (!i) return std::nullopt;
    return vector(*i);
  }

 private:
  std::shared_ptr<const Vocabulary> vocab_ = std::make_shared<Vocabulary>();
  std::size_t dim_ = 1;
  std::vector<float> vectors_;
  EmbedConfig config_;
  std::vector<std::uint8_t> untrained_;
  std::vector<double> norms_;
  std::vector<double> losses_;
};

namespace detail {

// Walker alias table over counts^exponent: O(1) draws from O(|V|) memory.
struct AliasTable {
  std::vector<float> prob;
  std::vector<std::uint32_t> alias;

  std::uint32_t draw(std::uint64_t r) const {
    const auto n = static_cast<std::uint64_t>(prob.size());
    // High bits only: the low bits of the LCG driving this have short periods.
    const auto i = static_cast<std::uint32_t>(((r >> 16) & 0xFFFFFFu) % n);
    const float u = static_cast<float>(r >> 40) / 16777216.0f;
    return u < prob[i] ? i : alias[i];
  }
};

inline AliasTable build_alias_table(const std::vector<std::uint64_t>& counts, double exponent) {
  const std::size_t n = counts.size();
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += w[i] = counts[i] ? std::pow(static_cast<double>(counts[i]), exponent) : 0.0;
  for (auto& x : w) x = x * static_cast<double>(n) / total;
  AliasTable t{std::vector<float>(n, 1.0f), std::vector<std::uint32_t>(n)};
  std::vector<std::uint32_t> small, large;
  for (std::uint32_t i = 0; i < n; ++i) {
    t.alias[i] = i;
    (w[i] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const auto s = small.back();
    small.pop_back();
    const auto l = large.back();
    t.prob[s] = static_cast<float>(w[s]);
    t.alias[s] = l;
    w[l] = (w[l] + w[s]) - 1.0;
    if (w[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // Leftovers are 1 up to rounding; zero-count terms never become leftovers
  // with positive mass because their weight is exactly 0.
  std::uint32_t heaviest = 0;
  for (std::uint32_t i = 0; i < n; ++i)
    if (counts[i] > counts[heaviest]) heaviest = i;
  for (auto i : small) {
    t.prob[i] = w[i] > 0.0 ? 1.0f : 0.0f;
    if (w[i] <= 0.0) t.alias[i] = heaviest;
  }
  for (auto i : large) t.prob[i] = 1.0f;
  return t;
}

struct CbowState {
  std::size_t dim;
  std::vector<float> in;
  std::vector<float> out;
  AliasTable negatives;
};

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline float dotf(const float* a, const float* b, std::size_t d) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  for (; i < d; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline void axpy(float* __restrict y, float a, const float* __restrict x, std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) y[i] += a * x[i];
}

// Row access for the shared-weight mode goes through relaxed atomics, which
// gives the lock-free update scheme defined behavior without imposing order.
template <bool Shared>
inline const float* read_row(const float* row, float* scratch, std::size_t d) {
  if constexpr (Shared) {
    for (std::size_t j = 0; j < d; ++j)
      scratch[j] = std::atomic_ref<float>(const_cast<float&>(row[j])).load(std::memory_order_relaxed);
    return scratch;
  } else {
    (void)scratch;
    (void)d;
    return row;
  }
}

template <bool Shared>
inline void update_row(float* row, float a, const float* x, std::size_t d) {
  if constexpr (Shared) {
    for (std::size_t j = 0; j < d; ++j) {
      std::atomic_ref<float> r(row[j]);
      r.store(r.load(std::memory_order_relaxed) + a * x[j], std::memory_order_relaxed);
    }
  } else {
    axpy(row, a, x, d);
  }
}

// Trains on sequences [begin, end) for one epoch, accumulating the summed loss
// and the number of predicted centers.
template <bool Shared>
void cbow_epoch(CbowState& st, const std::vector<std::vector<std::uint32_t>>& seqs, std::size_t begin,
                std::size_t end, const EmbedConfig& cfg, const std::vector<double>& keep_prob,
                std::uint64_t& lcg, std::atomic<std::uint64_t>& words_done, double total_work, double& loss_sum,
                std::uint64_t& centers) {
  const std::size_t d = st.dim;
  std::vector<float> h(d), grad(d), scratch(d), ones(d, 1.0f);
  std::vector<std::uint32_t> sent;
  std::vector<std::uint32_t> ctx;
  auto next = [&] {
    lcg = lcg * 25214903917ULL + 11ULL;
    return lcg;
  };
  for (std::size_t s = begin; s < end; ++s) {
    const auto& raw = seqs[s];
    const std::uint64_t done = words_done.fetch_add(raw.size(), std::memory_order_relaxed);
    const double progress = std::min(1.0, static_cast<double>(done) / total_work);
    const float alpha = static_cast<float>(cfg.alpha_start - (cfg.alpha_start - cfg.alpha_end) * progress);

    const std::vector<std::uint32_t>* seq = &raw;
    if (cfg.subsample > 0.0) {
      sent.clear();
      for (auto w : raw) {
        const double r = static_cast<double>(next() & 0xFFFF) / 65536.0;
        if (keep_prob[w] >= 1.0 || r < keep_prob[w]) sent.push_back(w);
      }
      seq = &sent;
    }
    const std::size_t n = seq->size();
    for (std::size_t pos = 0; pos < n; ++pos) {
      const std::uint32_t word = (*seq)[pos];
      const std::size_t b = static_cast<std::size_t>(next() % cfg.window);
      const std::size_t span = cfg.window - b;
      ctx.clear();
      const std::size_t lo = pos >= span ? pos - span : 0;
      const std::size_t hi = std::min(n - 1, pos + span);
      for (std::size_t c = lo; c <= hi; ++c)
        if (c != pos) ctx.push_back((*seq)[c]);
      if (ctx.empty()) continue;

      std::fill(h.begin(), h.end(), 0.0f);
      for (auto c : ctx) axpy(h.data(), 1.0f, read_row<Shared>(st.in.data() + std::size_t{c} * d, scratch.data(), d), d);
      const float inv = 1.0f / static_cast<float>(ctx.size());
      for (auto& x : h) x *= inv;
      std::fill(grad.begin(), grad.end(), 0.0f);

      for (std::size_t k = 0; k <= cfg.negatives; ++k) {
        std::uint32_t target;
        bool positive;
        if (k == 0) {
          target = word;
          positive = true;
        } else {
          target = st.negatives.draw(next());
          if (target == word) continue;
          positive = false;
        }
        float* o = st.out.data() + std::size_t{target} * d;
        const float* orow = read_row<Shared>(o, scratch.data(), d);
        const double f = dotf(h.data(), orow, d);
        // -log sigma(f) for the positive, -log sigma(-f) for negatives.
        const double e = std::exp(-std::abs(f));
        const double lse = std::log1p(e);
        loss_sum += positive ? (f >= 0 ? lse : lse - f) : (f >= 0 ? lse + f : lse);
        const double sig = f >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
        const float g = static_cast<float>(((positive ? 1.0 : 0.0) - sig) * alpha);
        axpy(grad.data(), g, orow, d);
        update_row<Shared>(o, g, h.data(), d);
      }
      ++centers;
      // Mean-of-context model: the error is shared out over the context words.
      for (auto c : ctx) update_row<Shared>(st.in.data() + std::size_t{c} * d, inv, grad.data(), d);
    }
  }
}

}  // namespace detail

// CBOW with negative sampling over already-indexed sequences. Terms that never
// occur keep their initialization and are flagged untrained.
inline EmbeddingSpace train_cbow_indexed(std::shared_ptr<const Vocabulary> vocab,
                                         const std::vector<std::vector<std::uint32_t>>& seqs,
                                         const EmbedConfig& cfg) {
  cfg.validate();
  const std::size_t V = vocab->size();
  require(V > 0, "embed", "vocabulary is empty");
  const std::size_t d = cfg.dim;

  detail::CbowState st{d, std::vector<float>(V * d), std::vector<float>(V * d, 0.0f), {}};
  Rng init(derive_seed(cfg.seed, "cbow-init"));
  const double half = 0.5 / static_cast<double>(d);
  for (auto& x : st.in) x = static_cast<float>(init.uniform(-half, half));

  std::vector<std::uint64_t> counts(V, 0);
  std::uint64_t total_words = 0;
  for (const auto& s : seqs) {
    for (auto w : s) {
      require(w < V, "embed", "token index outside the vocabulary");
      ++counts[w];
    }
    total_words += s.size();
  }
  std::vector<std::uint8_t> untrained(V, 0);
  for (std::size_t i = 0; i < V; ++i) untrained[i] = counts[i] == 0 ? 1 : 0;

  std::vector<double> losses;
  if (cfg.epochs > 0 && total_words > 0) {
    st.negatives = detail::build_alias_table(counts, cfg.ns_exponent);
    std::vector<double> keep(V, 1.0);
    if (cfg.subsample > 0.0) {
      for (std::size_t i = 0; i < V; ++i) {
        if (counts[i] == 0) continue;
        const double f = static_cast<double>(counts[i]);
        const double t = cfg.subsample * static_cast<double>(total_words);
        keep[i] = (std::sqrt(f / t) + 1.0) * t / f;
      }
    }
    const double total_work = static_cast<double>(cfg.epochs) * static_cast<double>(total_words) + 1.0;
    std::atomic<std::uint64_t> words_done{0};
    const std::size_t workers = std::min(cfg.workers, std::max<std::size_t>(1, seqs.size()));
    std::vector<std::uint64_t> lcgs(workers);
    for (std::size_t t = 0; t < workers; ++t) lcgs[t] = derive_seed(cfg.seed, {0xC0B0ULL, t});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      double loss = 0.0;
      std::uint64_t centers = 0;
      if (workers == 1) {
        detail::cbow_epoch<false>(st, seqs, 0, seqs.size(), cfg, keep, lcgs[0], words_done, total_work, loss,
                                  centers);
      } else {
        std::vector<double> part_loss(workers, 0.0);
        std::vector<std::uint64_t> part_centers(workers, 0);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
          const std::size_t b = seqs.size() * t / workers, e = seqs.size() * (t + 1) / workers;
          pool.emplace_back([&, t, b, e] {
            detail::cbow_epoch<true>(st, seqs, b, e, cfg, keep, lcgs[t], words_done, total_work, part_loss[t],
                                     part_centers[t]);
          });
        }
        for (auto& th : pool) th.join();
        for (std::size_t t = 0; t < workers; ++t) {
          loss += part_loss[t];
          centers += part_centers[t];
        }
      }
      losses.push_back(centers ? loss / static_cast<double>(centers) : 0.0);
    }
  }
  EmbeddingSpace space(std::move(vocab), d, std::move(st.in), cfg, std::move(untrained));
  space.set_epoch_losses(std::move(losses));
  return space;
}

inline std::vector<std::vector<std::uint32_t>> index_sequences(const Vocabulary& vocab,
                                                               const std::vector<std::vector<std::string>>& seqs) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    std::vector<std::uint32_t> ix;
    ix.reserve(s.size());
    for (const auto& t : s)
      if (auto i = vocab.find(t)) ix.push_back(static_cast<std::uint32_t>(*i));
    if (!ix.empty()) out.push_back(std::move(ix));
  }
  return out;
}

// Trains on token sequences (one per post); out-of-vocabulary tokens are
// dropped before windows are formed.
inline EmbeddingSpace train_cbow(std::shared_ptr<const Vocabulary> vocab,
                                 const std::vector<std::vector<std::string>>& seqs, const EmbedConfig& cfg) {
  require(!seqs.empty(), "embed", "no token streams to train on");
  auto indexed = index_sequences(*vocab, seqs);
  return train_cbow_indexed(std::move(vocab), indexed, cfg);
}

// ---- exact nearest neighbours ---------------------------------------------

struct Neighborhood {
  std::vector<std::uint32_t> indices;  // into the space's vocabulary, nearest first
  std::vector<double> distances;
  bool truncated = false;  // candidate pool was smaller than k
};

// Candidate pool (terms with frequency >= cf_nb) plus lexicographic ranks for
// deterministic tie-breaking. Built once per space, queried many times.
class NeighborIndex {
 public:
  NeighborIndex(const EmbeddingSpace& space, std::uint64_t cf_nb) : space_(&space), cf_nb_(cf_nb) {
    const auto& vocab = space.vocabulary();
    std::vector<std::uint32_t> order(vocab.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vocab.term(a) < vocab.term(b); });
    lex_rank_.resize(vocab.size());
    for (std::uint32_t r = 0; r < order.size(); ++r) lex_rank_[order[r]] = r;
    for (std::uint32_t i = 0; i < vocab.size(); ++i)
      if (vocab.frequency(i) >= cf_nb && !space.untrained(i) && space.vector_norm(i) > 0.0) pool_.push_back(i);
  }

  const EmbeddingSpace& space() const { return *space_; }
  std::uint64_t cf_nb() const { return cf_nb_; }
  const std::vector<std::uint32_t>& pool() const { return pool_; }
  // Pool size as seen from a query term (the query itself never counts).
  std::size_t pool_size_for(std::uint32_t w) const {
    return pool_.size() - (std::binary_search(pool_.begin(), pool_.end(), w) ? 1 : 0);
  }

  Neighborhood query(std::uint32_t w, std::size_t k) const {
    const auto& sp = *space_;
    const double nw = sp.vector_norm(w);
    require(nw > 0.0, "embed", "zero-norm vector (untrained term): " + sp.vocabulary().term(w));
    const auto vw = sp.vector(w);
    std::vector<std::pair<double, std::uint32_t>> cand;
    cand.reserve(pool_.size());
    for (std::uint32_t c : pool_) {
      if (c == w) continue;
      const double nc = sp.vector_norm(c);
      cand.emplace_back(1.0 - dot(vw, sp.vector(c)) / (nw * nc), c);
    }
    require(!cand.empty(), "embed", "empty neighbour pool for '" + sp.vocabulary().term(w) + "'");
    auto less = [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return lex_rank_[a.second] < lex_rank_[b.second];
    };
    Neighborhood nb;
    nb.truncated = cand.size() < k;
    const std::size_t take = std::min(k, cand.size());
    if (take < cand.size()) {
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), less);
      cand.resize(take);
    }
    std::sort(cand.begin(), cand.end(), less);
    for (const auto& [dist, c] : cand) {
      nb.indices.push_back(c);
      nb.distances.push_back(dist);
    }
    return nb;
  }

 private:
  const EmbeddingSpace* space_;
  std::uint64_t cf_nb_;
  std::vector<std::uint32_t> lex_rank_;
  std::vector<std::uint32_t> pool_;  // ascending indices
};

// Top-k nearest terms to w among terms with frequency >= cf_nb (w excluded).
// `query_floor` is the minimum frequency w itself must have.
inline Neighborhood neighborhood(const EmbeddingSpace& space, const std::string& w, std::size_t k = 500,
                                 std::uint64_t cf_nb = 50, std::uint64_t query_floor = 0) {
  auto i = space.vocabulary().find(w);
  require(i.has_value(), "embed", "term not in vocabulary: " + w);
  require(space.vocabulary().frequency(*i) >= query_floor, "embed", "term below frequency floor: " + w);
  return NeighborIndex(space, cf_nb).query(static_cast<std::uint32_t>(*i), k);
}

inline std::vector<std::string> neighborhood_terms(const EmbeddingSpace& space, const Neighborhood& nb) {
  std::vector<std::string> out;
  out.reserve(nb.indices.size());
  for (auto i : nb.indices) out.push_back(space.vocabulary().term(i));
  return out;
}

// ---- persistence ------------------------------------------------------------
//
// Binary layout (little-endian):
//   char[8]  magic "SEMSTEMB"
//   u32      version (1)
//   u64      |V|
//   u32      d
//   u32      config JSON length, then that many bytes of JSON
//   |V| x { u32 term byte length, term bytes, u64 frequency, u8 flags (bit 0: untrained) }
//   |V| x d  f32 row-major matrix

inline constexpr char kEmbeddingMagic[8] = {'S', 'E', 'M', 'S', 'T', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

namespace detail {
static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(in), "io", "truncated binary file");
  return v;
}
}  // namespace detail

inline void save_embedding(const std::filesystem::path& path, const EmbeddingSpace& space) {
  auto out = open_output(path, true);
  out.write(kEmbeddingMagic, 8);
  detail::put<std::uint32_t>(out, kEmbeddingVersion);
  detail::put<std::uint64_t>(out, space.size());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(space.dim()));
  const std::string cfg = to_json(space.config()).dump();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& vocab = space.vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& t = vocab.term(i);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
    out.write(t.data(), static_cast<std::streamsize>(t.size()));
    detail::put<std::uint64_t>(out, vocab.frequency(i));
    detail::put<std::uint8_t>(out, space.untrained(i) ? 1 : 0);
  }
  out.write(reinterpret_cast<const char*>(space.matrix().data()),
            static_cast<std::streamsize>(space.matrix().size() * sizeof(float)));
  require(static_cast<bool>(out), "io", "failed writing " + path.string());
}

inline EmbeddingSpace load_embedding(const std::filesystem::path& path) {
  auto in = open_input(path, true);
  char magic[8];
  in.read(magic, 8);
  require(in && std::memcmp(magic, kEmbeddingMagic, 8) == 0, "embed", "not a semstab embedding: " + path.string());
  const auto version = detail::get<std::uint32_t>(in);
  require(version == kEmbeddingVersion, "embed", "unsupported embedding version " + std::to_string(version));
  const auto V = detail::get<std::uint64_t>(in);
  const auto d = detail::get<std::uint32_t>(in);
  const auto cfg_len = detail::get<std::uint32_t>(in);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  EmbedConfig config = embed_config_from_json(nlohmann::json::parse(cfg));
  std::vector<std::string> terms(V);
  std::vector<std::uint64_t> freqs(V);
  std::vector<std::uint8_t> flags(V);
  for (std::uint64_t i = 0; i < V; ++i) {
    const auto len = detail::get<std::uint32_t>(in);
    terms[i].resize(len);
    in.read(terms[i].data(), len);
    freqs[i] = detail::get<std::uint64_t>(in);
    flags[i] = detail::get<std::uint8_t>(in);
  }
  std::vector<float> matrix(V * d);
  in.read(reinterpret_cast<char*>(matrix.data()), static_cast<std::streamsize>(matrix.size() * sizeof(float)));
  require(static_cast<bool>(in), "io", "truncated embedding matrix");
  // Rows are stored in vocabulary order, which the Vocabulary constructor
  // reproduces from (frequency desc, term asc).
  auto vocab = std::make_shared<Vocabulary>(terms, freqs);
  for (std::uint64_t i = 0; i < V; ++i)
    require(vocab->term(i) == terms[i], "embed", "embedding rows are not in canonical vocabulary order");
  return EmbeddingSpace(std::move(vocab), d, std::move(matrix), config, std::move(flags));
}

// word2vec text format: "<|V|> <d>" then "<term> <f1> ... <fd>" per line.
// Frequencies are not part of the format; they are taken from `freqs` when
// given, else set to zero.
inline void save_embedding_text(const std::filesystem::path& path, const EmbeddingSpace& space) {
  auto out = open_output(path);
  out << space.size() << ' ' << space.dim() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < space.size(); ++i) {
    out << space.vocabulary().term(i);
    for (float x : space.vector(i)) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
      out << buf;
    }
    out << '\n';
  }
}

inline EmbeddingSpace load_embedding_text(const std::filesystem::path& path, const Vocabulary* freqs = nullptr) {
  auto in = open_input(path);
  std::size_t V = 0, d = 0;
  in >> V >> d;
  require(static_cast<bool>(in) && d > 0, "embed", "bad text embedding header");
  std::vector<std::string> terms(V);
  std::vector<std::uint64_t> counts(V, 0);
  std::vector<std::vector<float>> rows(V, std::vector<float>(d));
  for (std::size_t i = 0; i < V; ++i) {
    in >> terms[i];
    for (std::size_t j = 0; j < d; ++j) in >> rows[i][j];
    require(static_cast<bool>(in), "embed", "truncated text embedding");
    if (freqs) counts[i] = freqs->frequency_of(terms[i]);
  }
  auto vocab = std::make_shared<Vocabulary>(terms, counts);
  std::vector<float> matrix(V * d);
  for (std::size_t i = 0; i < V; ++i) {
    const auto r = *vocab->find(terms[i]);
    std::copy(rows[i].begin(), rows[i].end(), matrix.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return EmbeddingSpace(std::move(vocab), d, std::move(matrix));
}

}  // namespace semstab
