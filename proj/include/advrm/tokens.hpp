#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace advrm {

// Token ids live in [0, vocab). The end-of-sequence control symbol used by
// the policy head is id == vocab and never appears in stored tokens.
struct Prompt {
  int id = -1;
  std::vector<int> tokens;
};

struct Response {
  std::vector<int> tokens;
  // Position where the end marker was emitted, or -1 when generation ran to
  // the maximum length. Equal to tokens.size() for early-terminated samples.
  int end_marker = -1;

  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const Response& o) const { return tokens == o.tokens; }
};

inline std::uint64_t token_hash(int prompt_id, const std::vector<int>& tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(prompt_id);
  for (int t : tokens) {
    h ^= static_cast<std::uint64_t>(t) + 0x9e37;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string tokens_to_string(const std::vector<int>& tokens) {
  std::string s = "[";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(tokens[i]);
  }
  s += "]";
  return s;
}

}  // namespace advrm
