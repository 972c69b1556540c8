#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace semstab {

inline constexpr std::string_view kUrlToken = "<url>";
inline constexpr std::string_view kUserToken = "<user>";
inline constexpr std::string_view kNumToken = "<num>";

namespace detail {

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// ASCII alphanumerics, underscore, and every byte of a multi-byte UTF-8
// sequence count as word characters.
inline bool is_word(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
         c >= 0x80;
}

inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

inline bool starts_with_at(std::string_view s, std::size_t i, std::string_view prefix) {
  return s.substr(i, prefix.size()) == prefix;
}

inline std::size_t match_sentinel(std::string_view s, std::size_t i) {
  for (std::string_view tok : {kUrlToken, kUserToken, kNumToken})
    if (starts_with_at(s, i, tok)) return tok.size();
  return 0;
}

inline std::size_t match_url(std::string_view s, std::size_t i) {
  std::size_t prefix = 0;
  if (starts_with_at(s, i, "https://")) prefix = 8;
  else if (starts_with_at(s, i, "http://")) prefix = 7;
  else if (starts_with_at(s, i, "www.")) prefix = 4;
  if (prefix == 0) return 0;
  std::size_t j = i + prefix;
  while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
  // Trailing sentence punctuation is not part of the link.
  constexpr std::string_view trailing = ".,!?;:)\"']";
  while (j > i + prefix && trailing.find(s[j - 1]) != std::string_view::npos) --j;
  return j > i + prefix ? j - i : 0;
}

// Prefixed word: "@name" or "#tag".
inline std::size_t match_prefixed(std::string_view s, std::size_t i, char prefix) {
  if (s[i] != prefix || i + 1 >= s.size() || !is_word(static_cast<unsigned char>(s[i + 1]))) return 0;
  std::size_t j = i + 1;
  while (j < s.size() && is_word(static_cast<unsigned char>(s[j]))) ++j;
  return j - i;
}

// Matches on lowercased text: ":)", ";-(", ":ddd", ":'(", "=]", "<3", "</3",
// "^_^", "-_-", "^^".
inline std::size_t match_emoticon(std::string_view s, std::size_t i) {
  auto at = [&](std::size_t j) -> unsigned char { return j < s.size() ? s[j] : '\0'; };
  for (std::string_view fixed : {"^_^", "-_-", "^^", "</3"})
    if (starts_with_at(s, i, fixed)) return fixed.size();
  if (at(i) == '<' && at(i + 1) == '3') {
    std::size_t j = i + 1;
    while (at(j) == '3') ++j;
    return is_word(at(j)) ? 0 : j - i;
  }
  const unsigned char eyes = at(i);
  if (eyes != ':' && eyes != ';' && eyes != '=') return 0;
  std::size_t j = i + 1;
  if (at(j) == '-' || at(j) == '\'') ++j;
  constexpr std::string_view mouths = ")(][dpo3/\\|*x";
  const unsigned char mouth = at(j);
  if (mouth == '\0' || mouths.find(static_cast<char>(mouth)) == std::string_view::npos) return 0;
  while (at(j) == mouth) ++j;
  if (is_word(mouth) && is_word(at(j))) return 0;
  return j - i;
}

inline std::size_t match_special(std::string_view s, std::size_t i) {
  if (std::size_t n = match_sentinel(s, i)) return n;
  if (std::size_t n = match_url(s, i)) return n;
  if (std::size_t n = match_prefixed(s, i, '@')) return n;
  if (std::size_t n = match_prefixed(s, i, '#')) return n;
  return match_emoticon(s, i);
}

// digits ([.,:] digits)* not followed by a word character.
inline std::size_t match_number(std::string_view s, std::size_t i) {
  std::size_t j = i;
  auto digits = [&] {
    std::size_t start = j;
    while (j < s.size() && is_digit(static_cast<unsigned char>(s[j]))) ++j;
    return j > start;
  };
  if (!digits()) return 0;
  while (j + 1 < s.size() && (s[j] == '.' || s[j] == ',' || s[j] == ':') &&
         is_digit(static_cast<unsigned char>(s[j + 1]))) {
    ++j;
    digits();
  }
  if (j < s.size() && is_word(static_cast<unsigned char>(s[j]))) return 0;
  return j - i;
}

// Word characters with single internal apostrophes or hyphens: "don't", "well-known".
inline std::size_t match_word(std::string_view s, std::size_t i) {
  std::size_t j = i;
  while (j < s.size()) {
    if (is_word(static_cast<unsigned char>(s[j]))) {
      ++j;
    } else if ((s[j] == '\'' || s[j] == '-') && j > i && j + 1 < s.size() &&
               is_word(static_cast<unsigned char>(s[j + 1]))) {
      ++j;
    } else {
      break;
    }
  }
  return j - i;
}

}  // namespace detail

// Rule-based tweet-style tokenizer. Lowercases ASCII, replaces links, user
// mentions and numbers with sentinels, keeps hashtags, emoticons and runs of
// punctuation as single tokens. Joining the output with spaces and tokenizing
// again yields the same list.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::string s(text);
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');

  std::vector<std::string> out;
  std::size_t i = 0;
  const std::string_view view(s);
  while (i < view.size()) {
    const auto c = static_cast<unsigned char>(view[i]);
    if (detail::is_space(c)) {
      ++i;
      continue;
    }
    if (std::size_t n = detail::match_sentinel(view, i)) {
      out.emplace_back(view.substr(i, n));
      i += n;
    } else if (std::size_t n = detail::match_url(view, i)) {
      out.emplace_back(kUrlToken);
      i += n;
    } else if (std::size_t n = detail::match_prefixed(view, i, '@')) {
      out.emplace_back(kUserToken);
      i += n;
    } else if (std::size_t n = detail::match_prefixed(view, i, '#')) {
      out.emplace_back(view.substr(i, n));
      i += n;
    } else if (std::size_t n = detail::match_emoticon(view, i)) {
      out.emplace_back(view.substr(i, n));
      i += n;
    } else if (std::size_t n = detail::match_number(view, i)) {
      out.emplace_back(kNumToken);
      i += n;
    } else if (detail::is_word(c)) {
      const std::size_t n = detail::match_word(view, i);
      std::string_view word = view.substr(i, n);
      bool all_digits = true;
      for (unsigned char ch : word) all_digits = all_digits && detail::is_digit(ch);
      out.emplace_back(all_digits ? std::string(kNumToken) : std::string(word));
      i += n;
    } else {
      std::size_t j = i + 1;
      while (j < view.size()) {
        const auto d = static_cast<unsigned char>(view[j]);
        if (detail::is_space(d) || detail::is_word(d) || detail::match_special(view, j) != 0) break;
        ++j;
      }
      out.emplace_back(view.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, char sep = ' ') {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(sep);
    out += tokens[i];
  }
  return out;
}

}  // namespace semstab
