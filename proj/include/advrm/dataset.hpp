#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrm/errors.hpp"
#include "advrm/io.hpp"
#include "advrm/tokens.hpp"

namespace advrm {

enum class PairSource { kOriginal, kAdversarial, kRrmAugmented };

inline std::string source_name(PairSource s) {
  switch (s) {
    case PairSource::kOriginal: return "original";
    case PairSource::kAdversarial: return "adversarial";
    case PairSource::kRrmAugmented: return "rrm_augmented";
  }
  return "original";
}

inline PairSource source_from_name(const std::string& s) {
  if (s == "original") return PairSource::kOriginal;
  if (s == "adversarial") return PairSource::kAdversarial;
  if (s == "rrm_augmented") return PairSource::kRrmAugmented;
  throw StateError("unknown pair source: " + s);
}

struct PreferencePair {
  int prompt_id = -1;
  Response chosen;
  Response rejected;
  PairSource source = PairSource::kOriginal;
  double gold_chosen = 0.0;
  double gold_rejected = 0.0;
};

using PreferenceDataset = std::vector<PreferencePair>;

inline std::string pair_to_json_line(const PreferencePair& p) {
  std::string s = "{\"prompt_id\":" + std::to_string(p.prompt_id);
  s += ",\"chosen_tokens\":" + tokens_to_string(p.chosen.tokens);
  s += ",\"rejected_tokens\":" + tokens_to_string(p.rejected.tokens);
  s += ",\"source\":\"" + source_name(p.source) + "\"";
  s += ",\"gold_chosen\":" + fmt_double(p.gold_chosen);
  s += ",\"gold_rejected\":" + fmt_double(p.gold_rejected);
  s += "}";
  return s;
}

inline PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.prompt_id = j.at("prompt_id").get<int>();
  p.chosen.tokens = j.at("chosen_tokens").get<std::vector<int>>();
  p.rejected.tokens = j.at("rejected_tokens").get<std::vector<int>>();
  p.source = source_from_name(j.at("source").get<std::string>());
  p.gold_chosen = j.at("gold_chosen").get<double>();
  p.gold_rejected = j.at("gold_rejected").get<double>();
  return p;
}

inline void save_dataset(const std::filesystem::path& path, const PreferenceDataset& data) {
  std::string out;
  for (const auto& p : data) {
    out += pair_to_json_line(p);
    out += "\n";
  }
  write_file(path, out);
}

inline PreferenceDataset load_dataset(const std::filesystem::path& path) {
  PreferenceDataset data;
  for (const std::string& line : read_lines(path)) data.push_back(pair_from_json(nlohmann::json::parse(line)));
  return data;
}

}  // namespace advrm
