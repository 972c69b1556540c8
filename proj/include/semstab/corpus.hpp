#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/phrases.hpp"
#include "semstab/timeutil.hpp"
#include "semstab/tokenize.hpp"

namespace semstab {

struct Post {
  std::string user_id;
  EpochSeconds timestamp = 0;
  std::string text;
  std::optional<int> label;  // 0 or 1
  std::string community;     // source community / subreddit, may be empty
};

struct UserTimeline {
  std::string user_id;
  std::optional<int> label;
  std::vector<Post> posts;  // ascending by timestamp
};

// Posts grouped by user. Users are ordered by id, posts by time. Immutable
// once built.
class PostStore {
 public:
  PostStore() = default;

  static PostStore from_posts(std::vector<Post> posts, std::vector<std::string>* warnings = nullptr) {
    std::stable_sort(posts.begin(), posts.end(), [](const Post& a, const Post& b) {
      if (a.user_id != b.user_id) return a.user_id < b.user_id;
      return a.timestamp < b.timestamp;
    });
    PostStore store;
    for (auto& p : posts) {
      if (store.users_.empty() || store.users_.back().user_id != p.user_id) {
        store.users_.push_back(UserTimeline{p.user_id, p.label, {}});
      }
      auto& tl = store.users_.back();
      if (p.label && tl.label && *p.label != *tl.label && warnings)
        warnings->push_back("user " + p.user_id + " has conflicting labels; keeping the first");
      if (!tl.label) tl.label = p.label;
      tl.posts.push_back(std::move(p));
    }
    return store;
  }

  const std::vector<UserTimeline>& users() const { return users_; }
  std::size_t user_count() const { return users_.size(); }

  std::size_t post_count() const {
    std::size_t n = 0;
    for (const auto& u : users_) n += u.posts.size();
    return n;
  }

  std::vector<Post> all_posts() const {
    std::vector<Post> out;
    out.reserve(post_count());
    for (const auto& u : users_) out.insert(out.end(), u.posts.begin(), u.posts.end());
    return out;
  }

  // Store restricted to users accepted by `keep`.
  template <typename Pred>
  PostStore subset_users(Pred keep) const {
    PostStore out;
    for (const auto& u : users_)
      if (keep(u)) out.users_.push_back(u);
    return out;
  }

 private:
  std::vector<UserTimeline> users_;
};

struct PostSchema {
  std::string user = "user_id";
  std::string timestamp = "timestamp";
  std::string text = "text";
  std::string label = "label";
  std::string community = "community";
};

struct IngestReport {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // capped at the first 100 messages
};

namespace detail {

inline void warn(IngestReport& report, std::size_t line, const std::string& msg) {
  if (report.warnings.size() < 100) report.warnings.push_back("line " + std::to_string(line) + ": " + msg);
}

inline std::optional<EpochSeconds> json_timestamp(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<EpochSeconds>();
  if (v.is_number_float()) return static_cast<EpochSeconds>(v.get<double>());
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (auto t = parse_utc(s)) return t;
    try {
      std::size_t used = 0;
      const long long t = std::stoll(s, &used);
      if (used == s.size()) return t;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

inline std::optional<int> json_label(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number_integer()) {
    const auto x = v.get<long long>();
    if (x == 0 || x == 1) return static_cast<int>(x);
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "1" || s == "true") return 1;
    if (s == "0" || s == "false") return 0;
  }
  return std::nullopt;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return detail::is_space(c); });
}

}  // namespace detail

// Parses one line of line-delimited JSON into a post; nullopt and a warning on
// anything malformed.
inline std::optional<Post> parse_post_line(const std::string& line, const PostSchema& schema, IngestReport& report,
                                           std::size_t line_no) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    detail::warn(report, line_no, "not a JSON object");
    return std::nullopt;
  }
  auto field = [&](const std::string& name) -> const nlohmann::json* {
    auto it = j.find(name);
    return it == j.end() || it->is_null() ? nullptr : &*it;
  };
  const auto* user = field(schema.user);
  const auto* ts = field(schema.timestamp);
  const auto* text = field(schema.text);
  if (!user || !ts || !text) {
    detail::warn(report, line_no, "missing mandatory field");
    return std::nullopt;
  }
  Post p;
  if (user->is_string()) p.user_id = user->get<std::string>();
  else if (user->is_number_integer()) p.user_id = std::to_string(user->get<long long>());
  else {
    detail::warn(report, line_no, "user field is not a string");
    return std::nullopt;
  }
  auto t = detail::json_timestamp(*ts);
  if (!t) {
    detail::warn(report, line_no, "unparseable timestamp");
    return std::nullopt;
  }
  p.timestamp = *t;
  if (!text->is_string() || detail::blank(text->get<std::string>())) {
    detail::warn(report, line_no, "empty or non-string text");
    return std::nullopt;
  }
  p.text = text->get<std::string>();
  if (const auto* lab = field(schema.label)) {
    p.label = detail::json_label(*lab);
    if (!p.label) {
      detail::warn(report, line_no, "label is not binary");
      return std::nullopt;
    }
  }
  if (const auto* com = field(schema.community); com && com->is_string()) p.community = com->get<std::string>();
  return p;
}

inline PostStore ingest_posts(const std::filesystem::path& path, const PostSchema& schema = {},
                              IngestReport* report_out = nullptr) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "corpus", "cannot read post archive: " + path.string());
  IngestReport report;
  std::vector<Post> posts;
  std::string line;
  while (std::getline(in, line)) {
    ++report.lines;
    if (detail::blank(line)) {
      ++report.skipped;
      detail::warn(report, report.lines, "blank line");
      continue;
    }
    if (auto p = parse_post_line(line, schema, report, report.lines)) {
      posts.push_back(std::move(*p));
      ++report.accepted;
    } else {
      ++report.skipped;
    }
  }
  PostStore store = PostStore::from_posts(std::move(posts), &report.warnings);
  if (report_out) *report_out = std::move(report);
  return store;
}

inline nlohmann::json post_to_json(const Post& p, const PostSchema& schema = {}) {
  nlohmann::json j;
  j[schema.user] = p.user_id;
  j[schema.timestamp] = p.timestamp;
  j[schema.text] = p.text;
  if (p.label) j[schema.label] = *p.label;
  if (!p.community.empty()) j[schema.community] = p.community;
  return j;
}

inline void write_posts(const std::filesystem::path& path, const PostStore& store, const PostSchema& schema = {}) {
  auto out = open_output(path);
  for (const auto& u : store.users())
    for (const auto& p : u.posts) out << post_to_json(p, schema).dump() << '\n';
}

// ---- filtering ----------------------------------------------------------

struct FilterSet {
  std::set<std::string> blocked_terms;        // matched against phrased tokens
  std::set<std::string> blocked_communities;  // matched against Post::community
  std::function<bool(const Post&)> custom;    // return true to drop the post
  const PhraseModel* phrases = nullptr;       // applied before term matching

  bool empty() const { return blocked_terms.empty() && blocked_communities.empty() && !custom; }
};

struct FilterReport {
  std::size_t kept = 0;
  std::map<std::string, std::size_t> removed;  // "community", "terms", "custom"
};

// Each removed post is attributed to the first filter that matches, checked in
// the order community, terms, custom.
inline PostStore filter_posts(const PostStore& store, const FilterSet& filters, FilterReport* report_out = nullptr) {
  FilterReport report;
  report.removed = {{"community", 0}, {"terms", 0}, {"custom", 0}};
  std::vector<Post> kept;
  for (const auto& u : store.users()) {
    for (const auto& p : u.posts) {
      if (!filters.blocked_communities.empty() && filters.blocked_communities.count(p.community)) {
        ++report.removed["community"];
        continue;
      }
      if (!filters.blocked_terms.empty()) {
        auto toks = tokenize(p.text);
        if (filters.phrases) toks = apply_phrases(toks, *filters.phrases);
        const bool hit = std::any_of(toks.begin(), toks.end(),
                                     [&](const std::string& t) { return filters.blocked_terms.count(t) > 0; });
        if (hit) {
          ++report.removed["terms"];
          continue;
        }
      }
      if (filters.custom && filters.custom(p)) {
        ++report.removed["custom"];
        continue;
      }
      kept.push_back(p);
    }
  }
  report.kept = kept.size();
  // Users whose posts were all removed disappear; labels carry over.
  PostStore out = PostStore::from_posts(std::move(kept));
  if (report_out) *report_out = std::move(report);
  return out;
}

// ---- phrase model persistence ---------------------------------------------

inline void save_phrases(const std::filesystem::path& path, const PhraseModel& model) {
  auto out = open_output(path);
  const auto& p = model.params();
  out << "# semstab phrases v1\n";
  out << "# min_count=" << p.min_count << " threshold=" << format_real(p.threshold) << " passes=" << p.passes << '\n';
  for (const auto& [pair, score] : model.merges())
    out << pair.first << '\t' << pair.second << '\t' << format_real(score) << '\n';
}

inline PhraseModel load_phrases(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  require(line == "# semstab phrases v1", "corpus", "not a phrase model file: " + path.string());
  std::getline(in, line);
  PhraseParams params;
  double threshold = 0;
  unsigned long long min_count = 0;
  int passes = 0;
  require(std::sscanf(line.c_str(), "# min_count=%llu threshold=%lf passes=%d", &min_count, &threshold, &passes) == 3,
          "corpus", "bad phrase model header");
  params.min_count = min_count;
  params.threshold = threshold;
  params.passes = passes;
  PhraseModel model(params);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    require(t1 != std::string::npos && t2 != std::string::npos, "corpus", "bad phrase model line");
    model.add(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), std::stod(line.substr(t2 + 1)));
  }
  return model;
}

}  // namespace semstab
