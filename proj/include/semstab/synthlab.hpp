#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/corpus.hpp"
#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/rng.hpp"
#include "semstab/shift.hpp"
#include "semstab/timeutil.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

// Two-period corpus with planted topic shift and planted class signal.
//
// Every post picks one topic from `topic_mixture` and then draws each token
// either from a small background topic (probability `background_rate`) or
// from the chosen topic. In period 2 each shifted term moves to a different
// topic, loses any class boost and has its weight multiplied by `shift_surge`.
struct SynthSpec {
  std::size_t vocab_size = 10000;  // including background terms
  std::size_t topics = 20;
  std::size_t background_terms = 100;
  double background_rate = 0.1;
  std::vector<double> topic_mixture;  // empty means uniform
  double weight_spread = 0.2;         // term weights uniform in [1 - spread, 1 + spread]

  std::size_t users_per_class = 250;  // labeled users, each posting in both periods
  std::size_t posts_per_user = 200;   // per period
  std::size_t tokens_per_post = 10;

  double shift_fraction = 0.05;   // of topic terms
  double signal_fraction = 0.05;  // of topic terms
  double signal_boost = 3.0;      // positive-class weight multiplier
  double overlap = 0.0;           // fraction of signal terms drawn from the shift set
  double shift_surge = 1.0;       // period-2 weight multiplier for shifted terms

  std::size_t deployment_users = 0;  // unlabeled users, latent class drawn per period
  double prevalence_pre = 0.2;
  double prevalence_during = 0.25;

  Period period1{"pre", *parse_utc("2019-03-01"), *parse_utc("2019-07-01")};
  Period period2{"during", *parse_utc("2020-03-01"), *parse_utc("2020-07-01")};

  std::uint64_t seed = 1;

  std::size_t topic_terms() const { return vocab_size - background_terms; }
  std::size_t shift_count() const {
    return static_cast<std::size_t>(std::llround(shift_fraction * static_cast<double>(topic_terms())));
  }
  std::size_t signal_count() const {
    return static_cast<std::size_t>(std::llround(signal_fraction * static_cast<double>(topic_terms())));
  }
  std::size_t overlap_count() const {
    return static_cast<std::size_t>(std::llround(overlap * static_cast<double>(signal_count())));
  }

  void validate() const {
    auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
    require(topics >= 2, "synthlab", "need at least two topics");
    require(background_terms < vocab_size, "synthlab", "background terms must leave room for topic terms");
    require(topic_terms() >= topics, "synthlab", "fewer topic terms than topics");
    require(background_terms > 0 || background_rate == 0.0, "synthlab", "background_rate needs background terms");
    require(frac(background_rate) && background_rate < 1.0, "synthlab", "background_rate must be in [0,1)");
    require(frac(shift_fraction) && frac(signal_fraction) && frac(overlap), "synthlab", "fractions must be in [0,1]");
    require(frac(prevalence_pre) && frac(prevalence_during), "synthlab", "prevalences must be in [0,1]");
    require(weight_spread >= 0.0 && weight_spread < 1.0, "synthlab", "weight_spread must be in [0,1)");
    require(signal_boost > 0.0 && shift_surge > 0.0, "synthlab", "boost and surge must be positive");
    require(users_per_class >= 1 && posts_per_user >= 1 && tokens_per_post >= 1, "synthlab",
            "users, posts and tokens must be positive");
    require(topic_mixture.empty() || topic_mixture.size() == topics, "synthlab", "topic_mixture needs one weight per topic");
    for (double w : topic_mixture) require(w >= 0.0 && std::isfinite(w), "synthlab", "topic weights must be >= 0");
    require(overlap_count() <= shift_count(), "synthlab", "overlap asks for more shifted signal terms than shifted terms");
    require(signal_count() - overlap_count() <= topic_terms() - shift_count(), "synthlab",
            "not enough unshifted terms for the signal set");
    require(period1.start < period1.end && period2.start < period2.end && period1.end <= period2.start, "synthlab",
            "periods must be non-empty and ordered");
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"topics", s.topics},
          {"background_terms", s.background_terms},
          {"background_rate", s.background_rate},
          {"topic_mixture", s.topic_mixture},
          {"weight_spread", s.weight_spread},
          {"users_per_class", s.users_per_class},
          {"posts_per_user", s.posts_per_user},
          {"tokens_per_post", s.tokens_per_post},
          {"shift_fraction", s.shift_fraction},
          {"signal_fraction", s.signal_fraction},
          {"signal_boost", s.signal_boost},
          {"overlap", s.overlap},
          {"shift_surge", s.shift_surge},
          {"deployment_users", s.deployment_users},
          {"prevalence_pre", s.prevalence_pre},
          {"prevalence_during", s.prevalence_during},
          {"period1", {{"name", s.period1.name}, {"start", format_utc(s.period1.start)}, {"end", format_utc(s.period1.end)}}},
          {"period2", {{"name", s.period2.name}, {"start", format_utc(s.period2.start)}, {"end", format_utc(s.period2.end)}}},
          {"seed", s.seed}};
}

namespace detail {

inline Period period_from_json(const nlohmann::json& j) {
  Period p;
  p.name = j.at("name").get<std::string>();
  auto s = parse_utc(j.at("start").get<std::string>());
  auto e = parse_utc(j.at("end").get<std::string>());
  require(s && e, "synthlab", "bad period timestamps");
  p.start = *s;
  p.end = *e;
  return p;
}

}  // namespace detail

// Unknown keys are rejected; missing keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  require(j.is_object(), "synthlab", "spec must be a JSON object");
  SynthSpec s;
  const std::set<std::string> known = {"vocab_size",   "topics",          "background_terms", "background_rate",
                                       "topic_mixture", "weight_spread",  "users_per_class",  "posts_per_user",
                                       "tokens_per_post", "shift_fraction", "signal_fraction", "signal_boost",
                                       "overlap",      "shift_surge",     "deployment_users", "prevalence_pre",
                                       "prevalence_during", "period1",    "period2",          "seed"};
  for (const auto& [k, v] : j.items()) require(known.count(k) > 0, "synthlab", "unknown spec key '" + k + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("vocab_size", s.vocab_size);
  get("topics", s.topics);
  get("background_terms", s.background_terms);
  get("background_rate", s.background_rate);
  get("topic_mixture", s.topic_mixture);
  get("weight_spread", s.weight_spread);
  get("users_per_class", s.users_per_class);
  get("posts_per_user", s.posts_per_user);
  get("tokens_per_post", s.tokens_per_post);
  get("shift_fraction", s.shift_fraction);
  get("signal_fraction", s.signal_fraction);
  get("signal_boost", s.signal_boost);
  get("overlap", s.overlap);
  get("shift_surge", s.shift_surge);
  get("deployment_users", s.deployment_users);
  get("prevalence_pre", s.prevalence_pre);
  get("prevalence_during", s.prevalence_during);
  get("seed", s.seed);
  if (j.contains("period1")) s.period1 = detail::period_from_json(j.at("period1"));
  if (j.contains("period2")) s.period2 = detail::period_from_json(j.at("period2"));
  return s;
}

// Ground truth for one generated corpus.
struct SynthManifest {
  SynthSpec spec;
  std::vector<std::string> terms;   // index = term id; background terms first
  std::vector<double> weights;      // base weight per term
  std::vector<int> topic_p1;        // -1 for background terms
  std::vector<int> topic_p2;
  std::vector<std::string> shifted;  // sorted
  std::vector<std::string> signal;   // sorted
  std::vector<std::string> background;
  std::map<std::string, int> labels;                      // labeled users
  std::map<std::string, std::pair<int, int>> latent;      // deployment users: class in period 1, period 2
  double realized_prevalence_pre = 0.0;
  double realized_prevalence_during = 0.0;

  bool is_shifted(const std::string& t) const { return std::binary_search(shifted.begin(), shifted.end(), t); }
  bool is_signal(const std::string& t) const { return std::binary_search(signal.begin(), signal.end(), t); }
};

struct SynthCorpus {
  PostStore posts;  // labeled users ("l…") and deployment users ("d…")
  SynthManifest manifest;

  PostStore labeled() const {
    return posts.subset_users([](const UserTimeline& u) { return u.label.has_value(); });
  }
  PostStore deployment() const {
    return posts.subset_users([](const UserTimeline& u) { return !u.label.has_value(); });
  }
};

namespace detail {

// Pronounceable pseudo-word for an index: at least two consonant-vowel
// syllables, little-endian in base 100.
inline std::string pseudo_word(std::size_t i) {
  static constexpr char consonants[] = "bdfghjklmnprstvwzcyq";
  static constexpr char vowels[] = "aeiou";
  std::string out;
  std::size_t x = i;
  int syllables = 0;
  do {
    const std::size_t s = x % 100;
    out += consonants[s / 5];
    out += vowels[s % 5];
    x /= 100;
    ++syllables;
  } while (x > 0 || syllables < 2);
  return out;
}

// Per-term weight inside topic `topic` for the given period and class; zero
// for terms outside the topic.
inline double topic_weight(const SynthManifest& m, std::size_t term, std::size_t topic, int period, int cls,
                           const std::vector<std::uint8_t>& shifted, const std::vector<std::uint8_t>& signal) {
  const int z = period == 1 ? m.topic_p1[term] : m.topic_p2[term];
  if (z != static_cast<int>(topic)) return 0.0;
  double w = m.weights[term];
  const bool moved = period == 2 && shifted[term];
  if (moved) w *= m.spec.shift_surge;
  if (cls == 1 && signal[term] && !moved) w *= m.spec.signal_boost;
  return w;
}

struct TermFlags {
  std::vector<std::uint8_t> shifted, signal;
};

inline TermFlags term_flags(const SynthManifest& m) {
  TermFlags f{std::vector<std::uint8_t>(m.terms.size(), 0), std::vector<std::uint8_t>(m.terms.size(), 0)};
  for (std::size_t i = 0; i < m.terms.size(); ++i) {
    f.shifted[i] = m.is_shifted(m.terms[i]);
    f.signal[i] = m.is_signal(m.terms[i]);
  }
  return f;
}

inline std::vector<double> topic_mixture(const SynthSpec& s) {
  std::vector<double> mix = s.topic_mixture.empty() ? std::vector<double>(s.topics, 1.0) : s.topic_mixture;
  double total = 0;
  for (double w : mix) total += w;
  require(total > 0.0, "synthlab", "topic mixture sums to zero");
  for (auto& w : mix) w /= total;
  return mix;
}

// Term ids and cumulative weights of one topic's distribution.
struct TopicTable {
  std::vector<std::uint32_t> ids;
  DiscreteSampler sampler;
};

inline TopicTable topic_table(const SynthManifest& m, std::size_t topic, int period, int cls, const TermFlags& f) {
  TopicTable t;
  std::vector<double> w;
  for (std::size_t i = 0; i < m.terms.size(); ++i) {
    const double v = topic_weight(m, i, topic, period, cls, f.shifted, f.signal);
    if (v > 0.0) {
      t.ids.push_back(static_cast<std::uint32_t>(i));
      w.push_back(v);
    }
  }
  if (!w.empty()) t.sampler = DiscreteSampler(w);
  return t;
}

}  // namespace detail

// Expected token distribution (indexed like manifest.terms) for a user of
// class `cls` posting in `period` (1 or 2).
inline std::vector<double> expected_marginals(const SynthManifest& m, int period, int cls) {
  require(period == 1 || period == 2, "synthlab", "period must be 1 or 2");
  const auto& s = m.spec;
  const auto f = detail::term_flags(m);
  const auto mix = detail::topic_mixture(s);
  std::vector<double> p(m.terms.size(), 0.0);
  std::vector<double> topic_mass(s.topics, 0.0);
  for (std::size_t i = 0; i < m.terms.size(); ++i)
    for (std::size_t k = 0; k < s.topics; ++k)
      topic_mass[k] += detail::topic_weight(m, i, k, period, cls, f.shifted, f.signal);
  double bg_total = 0;
  for (std::size_t i = 0; i < s.background_terms; ++i) bg_total += m.weights[i];
  for (std::size_t i = 0; i < m.terms.size(); ++i) {
    if (i < s.background_terms) {
      p[i] = s.background_rate * m.weights[i] / bg_total;
      continue;
    }
    for (std::size_t k = 0; k < s.topics; ++k) {
      const double w = detail::topic_weight(m, i, k, period, cls, f.shifted, f.signal);
      if (w > 0.0) p[i] += (1.0 - s.background_rate) * mix[k] * w / topic_mass[k];
    }
  }
  return p;
}

namespace detail {

inline std::vector<std::string> sorted_terms(const std::vector<std::string>& terms, const std::vector<std::size_t>& ids) {
  std::vector<std::string> out;
  for (auto i : ids) out.push_back(terms[i]);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synthlab"));
  SynthManifest m;
  m.spec = spec;
  const std::size_t V = spec.vocab_size, B = spec.background_terms, T = spec.topics;

  // Terms, weights and period-1 topics (balanced: topic sizes differ by <= 1).
  for (std::size_t i = 0; i < V; ++i) m.terms.push_back(detail::pseudo_word(i));
  for (std::size_t i = 0; i < V; ++i) m.weights.push_back(rng.uniform(1.0 - spec.weight_spread, 1.0 + spec.weight_spread));
  std::vector<std::size_t> topic_ids;
  for (std::size_t i = B; i < V; ++i) topic_ids.push_back(i);
  rng.shuffle(topic_ids);
  m.topic_p1.assign(V, -1);
  for (std::size_t r = 0; r < topic_ids.size(); ++r) m.topic_p1[topic_ids[r]] = static_cast<int>(r % T);

  // Shift set, then signal set with the requested overlap.
  std::vector<std::size_t> order = topic_ids;
  rng.shuffle(order);
  const std::size_t n_shift = spec.shift_count(), n_signal = spec.signal_count(), n_both = spec.overlap_count();
  std::vector<std::size_t> shifted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_shift));
  std::vector<std::size_t> signal(shifted.begin(), shifted.begin() + static_cast<std::ptrdiff_t>(n_both));
  for (std::size_t r = n_shift; signal.size() < n_signal; ++r) signal.push_back(order[r]);
  m.topic_p2 = m.topic_p1;
  for (auto i : shifted) m.topic_p2[i] = static_cast<int>((m.topic_p1[i] + 1 + rng.below(T - 1)) % T);
  m.shifted = detail::sorted_terms(m.terms, shifted);
  m.signal = detail::sorted_terms(m.terms, signal);
  for (std::size_t i = 0; i < B; ++i) m.background.push_back(m.terms[i]);
  std::sort(m.background.begin(), m.background.end());

  // Sampling tables per (period, class, topic).
  const auto flags = detail::term_flags(m);
  std::vector<detail::TopicTable> tables;  // [(period-1)*2*T + cls*T + topic]
  for (int period : {1, 2})
    for (int cls : {0, 1})
      for (std::size_t k = 0; k < T; ++k) tables.push_back(detail::topic_table(m, k, period, cls, flags));
  const auto mix = detail::topic_mixture(spec);
  const DiscreteSampler topic_sampler(mix);
  DiscreteSampler background;
  if (B > 0) background = DiscreteSampler(std::span<const double>(m.weights.data(), B));

  std::vector<Post> posts;
  std::string text;
  auto emit = [&](const std::string& user, std::optional<int> label, int period, int cls, const std::string& community) {
    const Period& pr = period == 1 ? spec.period1 : spec.period2;
    const auto span = static_cast<std::uint64_t>(pr.end - pr.start);
    for (std::size_t n = 0; n < spec.posts_per_user; ++n) {
      const std::size_t k = topic_sampler(rng);
      const auto& tab = tables[static_cast<std::size_t>(period - 1) * 2 * T + static_cast<std::size_t>(cls) * T + k];
      text.clear();
      for (std::size_t t = 0; t < spec.tokens_per_post; ++t) {
        std::size_t id;
        if (B > 0 && (tab.ids.empty() || rng.uniform() < spec.background_rate)) id = background(rng);
        else id = tab.ids[tab.sampler(rng)];
        if (t) text += ' ';
        text += m.terms[id];
      }
      posts.push_back(Post{user, pr.start + static_cast<EpochSeconds>(rng.below(span)), text, label, community});
    }
  };

  char id[32];
  for (int cls : {0, 1}) {
    for (std::size_t u = 0; u < spec.users_per_class; ++u) {
      std::snprintf(id, sizeof id, "l%d%05zu", cls, u);
      m.labels[id] = cls;
      for (int period : {1, 2}) emit(id, cls, period, cls, "labeled");
    }
  }
  std::size_t pos_pre = 0, pos_during = 0;
  for (std::size_t u = 0; u < spec.deployment_users; ++u) {
    std::snprintf(id, sizeof id, "d%06zu", u);
    const int c1 = rng.bernoulli(spec.prevalence_pre) ? 1 : 0;
    const int c2 = rng.bernoulli(spec.prevalence_during) ? 1 : 0;
    m.latent[id] = {c1, c2};
    pos_pre += c1;
    pos_during += c2;
    emit(id, std::nullopt, 1, c1, "deployment");
    emit(id, std::nullopt, 2, c2, "deployment");
  }
  if (spec.deployment_users > 0) {
    m.realized_prevalence_pre = static_cast<double>(pos_pre) / static_cast<double>(spec.deployment_users);
    m.realized_prevalence_during = static_cast<double>(pos_during) / static_cast<double>(spec.deployment_users);
  }
  return SynthCorpus{PostStore::from_posts(std::move(posts)), std::move(m)};
}

inline nlohmann::json to_json(const SynthManifest& m) {
  nlohmann::json j;
  j["spec"] = to_json(m.spec);
  j["shifted_terms"] = m.shifted;
  j["signal_terms"] = m.signal;
  j["background_terms"] = m.background;
  nlohmann::json topics = nlohmann::json::object();
  for (std::size_t i = 0; i < m.terms.size(); ++i)
    topics[m.terms[i]] = {{"weight", m.weights[i]}, {"topic_p1", m.topic_p1[i]}, {"topic_p2", m.topic_p2[i]}};
  j["terms"] = topics;
  j["labels"] = m.labels;
  nlohmann::json latent = nlohmann::json::object();
  for (const auto& [u, c] : m.latent) latent[u] = {c.first, c.second};
  j["deployment_latent_class"] = latent;
  j["realized_prevalence"] = {{m.spec.period1.name, m.realized_prevalence_pre},
                              {m.spec.period2.name, m.realized_prevalence_during}};
  return j;
}

inline SynthManifest manifest_from_json(const nlohmann::json& j) {
  SynthManifest m;
  m.spec = synth_spec_from_json(j.at("spec"));
  m.shifted = j.at("shifted_terms").get<std::vector<std::string>>();
  m.signal = j.at("signal_terms").get<std::vector<std::string>>();
  m.background = j.at("background_terms").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < m.spec.vocab_size; ++i) {
    const auto t = detail::pseudo_word(i);
    const auto& e = j.at("terms").at(t);
    m.terms.push_back(t);
    m.weights.push_back(e.at("weight").get<double>());
    m.topic_p1.push_back(e.at("topic_p1").get<int>());
    m.topic_p2.push_back(e.at("topic_p2").get<int>());
  }
  m.labels = j.at("labels").get<std::map<std::string, int>>();
  for (const auto& [u, c] : j.at("deployment_latent_class").items()) m.latent[u] = {c.at(0).get<int>(), c.at(1).get<int>()};
  m.realized_prevalence_pre = j.at("realized_prevalence").at(m.spec.period1.name).get<double>();
  m.realized_prevalence_during = j.at("realized_prevalence").at(m.spec.period2.name).get<double>();
  return m;
}

// Writes <dir>/posts.jsonl and <dir>/manifest.json.
inline void write_synth(const std::filesystem::path& dir, const SynthCorpus& c) {
  write_posts(dir / "posts.jsonl", c.posts);
  if (const auto dep = c.deployment(); dep.user_count() > 0) {
    write_posts(dir / "posts_labeled.jsonl", c.labeled());
    write_posts(dir / "posts_deployment.jsonl", dep);
  }
  auto out = open_output(dir / "manifest.json");
  out << to_json(c.manifest).dump(1) << '\n';
}

// ---- detector evaluation ---------------------------------------------------------------

struct DetectorReport {
  double auc = 0.0;
  std::size_t shifted = 0;  // positives scored
  std::size_t stable = 0;   // negatives scored
  std::vector<std::string> missing;  // manifest terms absent from the table
};

// Mann-Whitney AUC of scores[positives] against scores[negatives]; ties count
// one half.
inline double rank_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  require(!pos.empty() && !neg.empty(), "synthlab", "AUC needs both positives and negatives");
  std::vector<std::pair<double, int>> all;
  for (double v : pos) all.emplace_back(v, 1);
  for (double v : neg) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += avg;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// AUC of (1 - S) as a detector of shift-set membership. With `require_all`
// every manifest term must be scored; otherwise missing terms are skipped and
// reported.
inline DetectorReport evaluate_detector(const SynthManifest& m, const StabilityTable& table, bool require_all = true) {
  std::map<std::string, double> S;
  for (const auto& r : table.records) S[r.term] = r.S;
  DetectorReport rep;
  std::vector<double> pos, neg;
  for (const auto& t : m.terms) {
    auto it = S.find(t);
    if (it == S.end()) {
      rep.missing.push_back(t);
      continue;
    }
    (m.is_shifted(t) ? pos : neg).push_back(1.0 - it->second);
  }
  if (require_all && !rep.missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(rep.missing.size(), 20); ++i) list += (i ? ", " : "") + rep.missing[i];
    if (rep.missing.size() > 20) list += ", ...";
    fail("synthlab", std::to_string(rep.missing.size()) + " manifest terms missing from the stability table: " + list);
  }
  rep.shifted = pos.size();
  rep.stable = neg.size();
  rep.auc = rank_auc(pos, neg);
  return rep;
}

}  // namespace semstab
