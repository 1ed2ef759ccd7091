#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "advrm/config.hpp"
#include "advrm/io.hpp"

namespace advrm {

// Suggests the CLI invocation that completes a stage, for actionable errors.
inline std::string stage_command(const std::string& stage) {
  if (stage == "gen-world") return "advrm gen-world";
  if (stage == "evaluate") return "advrm evaluate";
  if (stage.rfind("policy/", 0) == 0) return "advrm train-policy --stage " + stage.substr(7);
  if (stage.rfind("round", 0) == 0) {
    const std::size_t slash = stage.find('/');
    const std::string index = stage.substr(5, slash == std::string::npos ? slash : slash - 5);
    if (slash == std::string::npos) return "advrm round --stage " + index;
    const std::string part = stage.substr(slash + 1);
    if (part == "rm") return "advrm train-rm --stage " + index;
    if (part == "attack") return "advrm attack --stage " + index;
    if (part == "filter") return "advrm filter --stage " + index;
    if (part == "pairs") return "advrm build-pairs --stage " + index;
  }
  return "advrm " + stage;
}

// Persistent record of one run directory: the config it was created with, its
// seed, completed stages, and where each artifact lives (paths relative to
// the run root).
struct RunManifest {
  nlohmann::json config_snapshot;
  std::uint64_t seed = 0;
  std::set<std::string> completed;
  std::map<std::string, std::string> artifacts;

  bool done(const std::string& stage) const { return completed.count(stage) > 0; }

  void mark_done(const std::string& stage) { completed.insert(stage); }

  void record_artifact(const std::string& name, const std::string& relative_path) {
    artifacts[name] = relative_path;
  }

  // Gate: a dependent stage refuses to start until `stage` has completed and
  // its artifacts are on disk.
  void require(const std::string& stage, const std::string& for_stage,
               const std::filesystem::path& root) const {
    if (!done(stage))
      throw StateError("stage '" + for_stage + "' requires completed stage '" + stage + "'; run `" +
                       stage_command(stage) + "` first");
    for (const auto& [name, rel] : artifacts) {
      if (name.rfind(stage + ":", 0) != 0) continue;
      if (!std::filesystem::exists(root / rel))
        throw StateError("artifact '" + rel + "' of stage '" + stage + "' is missing; rerun `" +
                         stage_command(stage) + "`");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config_snapshot;
    j["seed"] = seed;
    j["completed"] = completed;
    j["artifacts"] = artifacts;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_snapshot = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("completed")) m.completed.insert(s.get<std::string>());
    for (const auto& item : j.at("artifacts").items())
      m.artifacts[item.key()] = item.value().get<std::string>();
    return m;
  }

  void save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

  static RunManifest load(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(read_file(path)));
  }
};

}  // namespace advrm
