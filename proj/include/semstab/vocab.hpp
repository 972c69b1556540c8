#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "semstab/corpus.hpp"
#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/parallel.hpp"

namespace semstab {

using TermCounts = std::unordered_map<std::string, std::uint64_t>;

inline void count_into(TermCounts& counts, const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) ++counts[t];
}

// Associative merge; used when counting in shards.
inline void merge_counts(TermCounts& into, const TermCounts& from) {
  for (const auto& [t, c] : from) into[t] += c;
}

// Ordered term list with a bijective index. Terms are ordered by descending
// frequency, ties lexicographically ascending.
class Vocabulary {
 public:
  Vocabulary() = default;

  // `terms` and `freqs` must align; order is normalized.
  Vocabulary(std::vector<std::string> terms, std::vector<std::uint64_t> freqs) {
    require(terms.size() == freqs.size(), "corpus", "vocabulary terms and frequencies differ in length");
    std::vector<std::size_t> order(terms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (freqs[a] != freqs[b]) return freqs[a] > freqs[b];
      return terms[a] < terms[b];
    });
    terms_.reserve(terms.size());
    freqs_.reserve(terms.size());
    for (std::size_t i : order) {
      require(index_.emplace(terms[i], terms_.size()).second, "corpus", "duplicate vocabulary term: " + terms[i]);
      terms_.push_back(std::move(terms[i]));
      freqs_.push_back(freqs[i]);
    }
  }

  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<std::uint64_t>& frequencies() const { return freqs_; }
  const std::string& term(std::size_t i) const { return terms_.at(i); }
  std::uint64_t frequency(std::size_t i) const { return freqs_.at(i); }

  std::optional<std::size_t> find(const std::string& term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& term) const { return index_.count(term) > 0; }

  std::uint64_t frequency_of(const std::string& term) const {
    auto i = find(term);
    return i ? freqs_[*i] : 0;
  }

 private:
  std::vector<std::string> terms_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Keeps terms with count >= min_count; when more than max_size remain, keeps
// the most frequent (ties lexicographic).
inline Vocabulary build_vocabulary(const TermCounts& counts, std::uint64_t min_count = 5,
                                   std::size_t max_size = 500000) {
  std::vector<std::string> terms;
  std::vector<std::uint64_t> freqs;
  for (const auto& [t, c] : counts) {
    if (c >= min_count) {
      terms.push_back(t);
      freqs.push_back(c);
    }
  }
  Vocabulary v(std::move(terms), std::move(freqs));
  if (v.size() <= max_size) return v;
  std::vector<std::string> keep(v.terms().begin(), v.terms().begin() + static_cast<std::ptrdiff_t>(max_size));
  std::vector<std::uint64_t> kf(v.frequencies().begin(), v.frequencies().begin() + static_cast<std::ptrdiff_t>(max_size));
  return Vocabulary(std::move(keep), std::move(kf));
}

inline void save_vocabulary_csv(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto out = open_output(path);
  out << "term,frequency\n";
  for (std::size_t i = 0; i < vocab.size(); ++i) out << csv_field(vocab.term(i)) << ',' << vocab.frequency(i) << '\n';
}

inline Vocabulary load_vocabulary_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  require(line == "term,frequency", "corpus", "vocabulary CSV must start with 'term,frequency'");
  std::vector<std::string> terms;
  std::vector<std::uint64_t> freqs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = parse_csv_line(line);
    require(f.size() == 2, "corpus", "bad vocabulary line: " + line);
    terms.push_back(f[0]);
    freqs.push_back(std::stoull(f[1]));
  }
  return Vocabulary(std::move(terms), std::move(freqs));
}

// Sparse user-by-term count matrix in compressed-row form.
class DocumentTermMatrix {
 public:
  struct Entry {
    std::uint32_t col;
    std::uint32_t count;
  };

  DocumentTermMatrix() : vocab_(std::make_shared<Vocabulary>()) { row_ptr_.push_back(0); }
  explicit DocumentTermMatrix(std::shared_ptr<const Vocabulary> vocab) : vocab_(std::move(vocab)) {
    row_ptr_.push_back(0);
  }

  // Appends a row; entries need not be sorted and may repeat columns.
  void add_row(std::string id, std::vector<Entry> entries, std::uint32_t posts = 0,
               std::optional<int> label = std::nullopt) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.col < b.col; });
    for (const auto& e : entries) {
      require(e.col < vocab_->size(), "corpus", "column index outside the vocabulary");
      if (e.count == 0) continue;
      if (entries_.size() > row_ptr_.back() && entries_.back().col == e.col) entries_.back().count += e.count;
      else entries_.push_back(e);
    }
    row_ptr_.push_back(entries_.size());
    ids_.push_back(std::move(id));
    posts_.push_back(posts);
    if (label) {
      require(labels_.size() + 1 == ids_.size(), "corpus", "labels must be given for every row or none");
      labels_.push_back(*label);
    } else {
      require(labels_.empty(), "corpus", "labels must be given for every row or none");
    }
  }

  // Row built by counting tokens that exist in the vocabulary.
  void add_tokens(std::string id, const std::vector<std::string>& tokens, std::uint32_t posts = 0,
                  std::optional<int> label = std::nullopt) {
    std::unordered_map<std::uint32_t, std::uint32_t> counts;
    for (const auto& t : tokens)
      if (auto i = vocab_->find(t)) ++counts[static_cast<std::uint32_t>(*i)];
    std::vector<Entry> entries;
    entries.reserve(counts.size());
    for (auto [c, n] : counts) entries.push_back({c, n});
    add_row(std::move(id), std::move(entries), posts, label);
  }

  std::size_t rows() const { return ids_.size(); }
  std::size_t cols() const { return vocab_->size(); }
  std::size_t nnz() const { return entries_.size(); }
  const Vocabulary& vocabulary() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocabulary_ptr() const { return vocab_; }
  const std::vector<std::string>& row_ids() const { return ids_; }
  const std::string& row_id(std::size_t r) const { return ids_.at(r); }
  std::uint32_t post_count(std::size_t r) const { return posts_.at(r); }
  bool has_labels() const { return !labels_.empty() || ids_.empty(); }
  const std::vector<int>& labels() const { return labels_; }
  int label(std::size_t r) const { return labels_.at(r); }

  std::span<const Entry> row(std::size_t r) const {
    return {entries_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  std::uint64_t row_sum(std::size_t r) const {
    std::uint64_t s = 0;
    for (const auto& e : row(r)) s += e.count;
    return s;
  }

  std::vector<std::uint64_t> column_totals() const {
    std::vector<std::uint64_t> t(cols(), 0);
    for (const auto& e : entries_) t[e.col] += e.count;
    return t;
  }

  DocumentTermMatrix select_rows(std::span<const std::size_t> rows_wanted) const {
    DocumentTermMatrix out(vocab_);
    for (std::size_t r : rows_wanted) {
      auto span = row(r);
      out.add_row(ids_.at(r), std::vector<Entry>(span.begin(), span.end()), posts_[r],
                  labels_.empty() ? std::nullopt : std::optional<int>(labels_[r]));
    }
    return out;
  }

  // Same rows re-expressed over another vocabulary; counts of terms missing
  // from `target` are dropped.
  DocumentTermMatrix project(std::shared_ptr<const Vocabulary> target) const {
    std::vector<std::int64_t> map(cols(), -1);
    for (std::size_t c = 0; c < cols(); ++c)
      if (auto j = target->find(vocab_->term(c))) map[c] = static_cast<std::int64_t>(*j);
    DocumentTermMatrix out(std::move(target));
    for (std::size_t r = 0; r < rows(); ++r) {
      std::vector<Entry> entries;
      for (const auto& e : row(r))
        if (map[e.col] >= 0) entries.push_back({static_cast<std::uint32_t>(map[e.col]), e.count});
      out.add_row(ids_[r], std::move(entries), posts_[r],
                  labels_.empty() ? std::nullopt : std::optional<int>(labels_[r]));
    }
    return out;
  }

  void set_labels(std::vector<int> labels) {
    require(labels.size() == rows(), "corpus", "labels must align with rows");
    labels_ = std::move(labels);
  }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<std::string> ids_;
  std::vector<std::uint32_t> posts_;
  std::vector<int> labels_;
  std::vector<std::size_t> row_ptr_;
  std::vector<Entry> entries_;
};

// Triplet text format:
//   # semstab dtm v1
//   # rows=R cols=C nnz=N
//   #row,<index>,<user id>,<label or empty>,<posts>     (one per row)
//   <row>,<col>,<count>                                  (one per nonzero)
// Indices are zero-based; columns index the companion vocabulary CSV.
inline void save_dtm(const std::filesystem::path& path, const DocumentTermMatrix& m) {
  auto out = open_output(path);
  out << "# semstab dtm v1\n";
  out << "# rows=" << m.rows() << " cols=" << m.cols() << " nnz=" << m.nnz() << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << "#row," << r << ',' << csv_field(m.row_id(r)) << ',';
    if (!m.labels().empty()) out << m.label(r);
    out << ',' << m.post_count(r) << '\n';
  }
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (const auto& e : m.row(r)) out << r << ',' << e.col << ',' << e.count << '\n';
}

inline DocumentTermMatrix load_dtm(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  require(line == "# semstab dtm v1", "corpus", "not a semstab matrix file: " + path.string());
  std::getline(in, line);
  unsigned long long rows = 0, cols = 0, nnz = 0;
  require(std::sscanf(line.c_str(), "# rows=%llu cols=%llu nnz=%llu", &rows, &cols, &nnz) == 3, "corpus",
          "bad matrix header");
  require(cols == vocab->size(), "corpus", "matrix column count does not match the vocabulary");
  std::vector<std::string> ids(rows);
  std::vector<std::uint32_t> posts(rows, 0);
  std::vector<int> labels;
  bool any_label = false;
  std::vector<std::vector<DocumentTermMatrix::Entry>> entries(rows);
  std::vector<std::optional<int>> row_labels(rows);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("#row,", 0) == 0) {
      auto f = parse_csv_line(line);
      require(f.size() == 5, "corpus", "bad row line: " + line);
      const auto r = std::stoull(f[1]);
      require(r < rows, "corpus", "row index out of range");
      ids[r] = f[2];
      if (!f[3].empty()) {
        row_labels[r] = std::stoi(f[3]);
        any_label = true;
      }
      posts[r] = static_cast<std::uint32_t>(std::stoul(f[4]));
      continue;
    }
    if (line[0] == '#') continue;
    auto f = parse_csv_line(line);
    require(f.size() == 3, "corpus", "bad triplet line: " + line);
    const auto r = std::stoull(f[0]);
    require(r < rows, "corpus", "row index out of range");
    entries[r].push_back({static_cast<std::uint32_t>(std::stoul(f[1])), static_cast<std::uint32_t>(std::stoul(f[2]))});
  }
  DocumentTermMatrix m(std::move(vocab));
  for (std::size_t r = 0; r < rows; ++r)
    m.add_row(ids[r], std::move(entries[r]), posts[r], any_label ? row_labels[r].value_or(0) : std::optional<int>{});
  return m;
}

// ---- time slicing ---------------------------------------------------------

struct Period {
  std::string name;
  EpochSeconds start = 0;  // inclusive
  EpochSeconds end = 0;    // exclusive

  bool contains(EpochSeconds t) const { return t >= start && t < end; }
};

inline void validate_periods(const std::vector<Period>& periods) {
  for (const auto& p : periods) require(p.start < p.end, "corpus", "period '" + p.name + "' is empty or inverted");
  for (std::size_t i = 0; i < periods.size(); ++i)
    for (std::size_t j = i + 1; j < periods.size(); ++j)
      require(periods[i].end <= periods[j].start || periods[j].end <= periods[i].start, "corpus",
              "periods '" + periods[i].name + "' and '" + periods[j].name + "' overlap");
}

struct TokenizedPost {
  EpochSeconds timestamp = 0;
  std::vector<std::string> tokens;
};

struct TokenizedTimeline {
  std::string user_id;
  std::optional<int> label;
  std::vector<TokenizedPost> posts;
};

using TokenizedStore = std::vector<TokenizedTimeline>;

inline TokenizedStore tokenize_store(const PostStore& store, std::size_t workers = 1) {
  TokenizedStore out(store.user_count());
  parallel_for(store.user_count(), workers, [&](std::size_t i) {
    const auto& u = store.users()[i];
    auto& t = out[i];
    t.user_id = u.user_id;
    t.label = u.label;
    t.posts.reserve(u.posts.size());
    for (const auto& p : u.posts) t.posts.push_back({p.timestamp, tokenize(p.text)});
  });
  return out;
}

struct UserSlice {
  std::string user_id;
  std::optional<int> label;
  std::vector<std::vector<std::string>> posts;  // phrased token sequences

  std::size_t post_count() const { return posts.size(); }
  std::vector<std::string> stream() const {
    std::vector<std::string> s;
    for (const auto& p : posts) s.insert(s.end(), p.begin(), p.end());
    return s;
  }
};

struct PeriodSlice {
  Period period;
  std::vector<UserSlice> users;  // every user with at least one post in the period
  TermCounts term_counts;        // over all tokens of the period

  std::vector<std::vector<std::string>> sequences() const {
    std::vector<std::vector<std::string>> out;
    for (const auto& u : users) out.insert(out.end(), u.posts.begin(), u.posts.end());
    return out;
  }
};

struct TimeSlicedCorpus {
  std::vector<PeriodSlice> slices;

  const PeriodSlice& slice(const std::string& name) const {
    for (const auto& s : slices)
      if (s.period.name == name) return s;
    fail("corpus", "no period named '" + name + "'");
  }
};

// Partitions each user's posts into periods, applying the period's phrase
// model when one is given (`phrases` empty or one model per period).
inline TimeSlicedCorpus slice_corpus(const TokenizedStore& store, const std::vector<Period>& periods,
                                     const std::vector<PhraseModel>& phrases = {}) {
  validate_periods(periods);
  require(phrases.empty() || phrases.size() == periods.size(), "corpus", "need one phrase model per period");
  TimeSlicedCorpus corpus;
  for (std::size_t pi = 0; pi < periods.size(); ++pi) {
    PeriodSlice slice;
    slice.period = periods[pi];
    for (const auto& u : store) {
      UserSlice us{u.user_id, u.label, {}};
      for (const auto& p : u.posts) {
        if (!periods[pi].contains(p.timestamp)) continue;
        us.posts.push_back(phrases.empty() ? p.tokens : apply_phrases(p.tokens, phrases[pi]));
        count_into(slice.term_counts, us.posts.back());
      }
      if (!us.posts.empty()) slice.users.push_back(std::move(us));
    }
    corpus.slices.push_back(std::move(slice));
  }
  return corpus;
}

// Users with at least `min_posts` posts in the slice, one row each.
inline DocumentTermMatrix aggregate_slice(const PeriodSlice& slice, std::shared_ptr<const Vocabulary> vocab,
                                          std::size_t min_posts) {
  require(min_posts >= 1, "corpus", "min_posts must be >= 1");
  DocumentTermMatrix m(std::move(vocab));
  bool labeled = !slice.users.empty();
  for (const auto& u : slice.users) labeled = labeled && u.label.has_value();
  for (const auto& u : slice.users) {
    if (u.post_count() < min_posts) continue;
    m.add_tokens(u.user_id, u.stream(), static_cast<std::uint32_t>(u.post_count()),
                 labeled ? u.label : std::nullopt);
  }
  return m;
}

struct SlicedMatrices {
  TimeSlicedCorpus corpus;
  std::vector<DocumentTermMatrix> matrices;  // one per period
};

inline SlicedMatrices slice_and_aggregate(const TokenizedStore& store, const std::vector<Period>& periods,
                                          std::size_t min_posts, std::shared_ptr<const Vocabulary> vocab,
                                          const std::vector<PhraseModel>& phrases = {}) {
  SlicedMatrices out;
  out.corpus = slice_corpus(store, periods, phrases);
  for (const auto& s : out.corpus.slices) out.matrices.push_back(aggregate_slice(s, vocab, min_posts));
  return out;
}

inline SlicedMatrices slice_and_aggregate(const PostStore& store, const std::vector<Period>& periods,
                                          std::size_t min_posts, std::shared_ptr<const Vocabulary> vocab,
                                          const std::vector<PhraseModel>& phrases = {}) {
  return slice_and_aggregate(tokenize_store(store), periods, min_posts, std::move(vocab), phrases);
}

}  // namespace semstab
