// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line front end: dedup, cluster, update, estimate.
//
// Exit codes: 0 ok, 1 usage, 2 unparsable input, 3 store problem,
// 4 old-cluster collision during hierarchical accumulation.

#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crashaccum.hpp"
#include "json.hpp"

namespace crashaccum::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitParse = 2,
  kExitStore = 3,
  kExitCollision = 4,
};

inline constexpr const char* kIgnoreRulesEnv = "TRIAGE_IGNORE_RULES";

struct CliConfig {
  std::string input_dir;
  std::string output_dir;
  double threshold = kDefaultThreshold;
  double decay = 0.9;
  std::string key_mode = "function";
  std::string tolerance = "hier";
  std::string strategy = "diam";
  std::string outer_strategy = "diam";
  bool clusterfuzz = false;
  int same_frame_threshold = 3;
  double compare_threshold = 0.7;
  bool json = false;
  bool crashline_dedup = false;
  bool lenient = false;
  std::string ignore_rules;
};

// Raised for bad input files; maps to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline IgnoreRules ResolveIgnoreRules(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv(kIgnoreRulesEnv); env != nullptr) path = env;
  }
  if (path.empty()) return IgnoreRules::Defaults();
  return IgnoreRules::Parse(ReadFile(path));
}

// Reads `.txt` raw traces and `.report.json` reports from `dir`, ordered by
// file name and then fingerprint.
inline std::vector<CrashReport> LoadInputs(const std::string& dir, const IgnoreRules& rules,
                                           KeyMode mode, bool lenient, std::ostream& err) {
  if (!fs::is_directory(dir)) throw InputError("input directory " + dir + " not found");
  std::vector<std::pair<std::string, CrashReport>> loaded;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  for (const fs::path& path : files) {
    const std::string name = path.filename().string();
    const bool is_report = name.ends_with(".report.json");
    if (!is_report && !name.ends_with(".txt")) continue;
    try {
      const std::string bytes = ReadFile(path);
      loaded.emplace_back(name, is_report ? ParseReportJson(bytes, mode)
                                          : MakeReport(bytes, rules, mode));
    } catch (const Error& e) {
      if (!lenient) throw InputError(name + ": " + e.what());
      err << "warning: skipping " << name << ": " << e.what() << "\n";
    }
  }
  std::ranges::sort(loaded, [](const auto& a, const auto& b) {
    return std::tie(a.first, a.second.id) < std::tie(b.first, b.second.id);
  });
  if (loaded.empty()) throw InputError("no reports in " + dir);
  std::vector<CrashReport> reports;
  for (auto& [name, report] : loaded) reports.push_back(std::move(report));
  return reports;
}

inline MetricConfig MakeMetricConfig(const CliConfig& cfg) {
  MetricConfig metric{cfg.decay, ParseKeyMode(cfg.key_mode)};
  metric.validate();
  return metric;
}

inline int CmdDedup(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const MetricConfig metric = MakeMetricConfig(cfg);
  const auto reports = LoadInputs(cfg.input_dir, ResolveIgnoreRules(cfg.ignore_rules),
                                  metric.key_mode, cfg.lenient, err);
  std::vector<CrashReport> unique;
  if (cfg.clusterfuzz) {
    const ClusterFuzzConfig cf{cfg.same_frame_threshold, cfg.compare_threshold};
    cf.validate();
    // Greedy leaders in input order.
    std::vector<std::vector<std::string>> leader_keys;
    for (const CrashReport& report : reports) {
      auto keys = KeySequence(report.stacktrace, metric.key_mode);
      const bool same = std::ranges::any_of(leader_keys, [&](const auto& leader) {
        return ClusterFuzzSameKeys(leader, keys, cf);
      });
      if (same) continue;
      leader_keys.push_back(std::move(keys));
      unique.push_back(report);
    }
  } else {
    unique = DedupExact(reports).unique;
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + cfg.output_dir);
  std::vector<std::string> ids;
  for (const CrashReport& report : unique) {
    WriteFileAtomic(fs::path(cfg.output_dir) / (report.id + ".report.json"),
                    SerializeReport(report));
    ids.push_back(report.id);
  }
  std::ranges::sort(ids);
  if (cfg.json) {
    const nlohmann::ordered_json summary = {{"total", reports.size()},
                                            {"unique", unique.size()},
                                            {"dropped", reports.size() - unique.size()},
                                            {"ids", ids}};
    out << summary.dump(2) << "\n";
  } else {
    out << "total: " << reports.size() << "\nunique: " << unique.size()
        << "\ndropped: " << reports.size() - unique.size() << "\n";
  }
  return kExitOk;
}

// Drops batch members whose crashline repeats an earlier member of the same
// cluster. Members listed in `protected_ids` are never removed.
template <IdMetric M>
std::size_t DedupCrashlines(std::vector<Cluster>& clusters,
                            const std::map<std::string, CrashReport>& reports,
                            const std::set<std::string>& protected_ids, const M& metric,
                            std::map<std::string, std::string>* dropped = nullptr) {
  std::size_t removed = 0;
  for (Cluster& cluster : clusters) {
    std::map<std::string, std::string> first;
    std::vector<std::string> retained;
    for (const auto& member : cluster.members) {
      const std::string& line = reports.at(member).crashline;
      if (line.empty() || protected_ids.contains(member)) {
        retained.push_back(member);
        if (!line.empty()) first.emplace(line, member);
        continue;
      }
      const auto [it, inserted] = first.emplace(line, member);
      if (inserted) {
        retained.push_back(member);
      } else {
        ++removed;
        if (dropped != nullptr) (*dropped)[member] = it->second;
      }
    }
    if (retained.size() != cluster.members.size()) {
      cluster.members = std::move(retained);
      cluster.diameter = Diameter(std::span<const std::string>(cluster.members), metric);
    }
  }
  return removed;
}

inline nlohmann::ordered_json ClustersToJson(const std::vector<Cluster>& clusters) {
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const Cluster& c : clusters) {
    list.push_back({{"id", c.id},
                    {"size", c.members.size()},
                    {"diameter", c.diameter},
                    {"members", c.members}});
  }
  return list;
}

inline int CmdCluster(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  ValidateThreshold(cfg.threshold);
  const MetricConfig metric_cfg = MakeMetricConfig(cfg);
  if (fs::exists(fs::path(cfg.output_dir) / kMetaFile)) {
    throw Error(ErrorCode::kAlreadyExists, cfg.output_dir);
  }
  const auto reports = LoadInputs(cfg.input_dir, ResolveIgnoreRules(cfg.ignore_rules),
                                  metric_cfg.key_mode, cfg.lenient, err);
  std::map<std::string, CrashReport> unique;
  for (CrashReport& report : DedupExact(reports).unique) unique.emplace(report.id, report);

  TraceMetric metric = MakeTraceMetric(metric_cfg, unique);
  std::vector<std::string> ids;
  for (const auto& [id, report] : unique) ids.push_back(id);
  std::vector<Cluster> clusters =
      ClusterIds(std::span<const std::string>(ids), metric, cfg.threshold, 1);
  if (cfg.crashline_dedup) DedupCrashlines(clusters, unique, {}, metric);

  CreateStore(cfg.output_dir, cfg.threshold, metric_cfg, clusters, unique);
  if (cfg.json) {
    const nlohmann::ordered_json summary = {{"reports", reports.size()},
                                            {"unique", unique.size()},
                                            {"cluster_count", clusters.size()},
                                            {"clusters", ClustersToJson(clusters)}};
    out << summary.dump(2) << "\n";
  } else {
    out << "clusters: " << clusters.size() << "\n";
    for (const Cluster& c : clusters) out << "cl" << c.id << ": " << c.members.size() << "\n";
  }
  return kExitOk;
}

inline void RequireCleanStore(const StoreState& state, const TraceMetric& metric) {
  const auto findings =
      ValidateStore(std::span<const Cluster>(state.clusters), metric, state.threshold);
  if (!findings.empty()) {
    throw Error(ErrorCode::kInvalidStore, "cluster " + std::to_string(findings.front().cluster) +
                                              ": " + findings.front().detail);
  }
}

inline std::string JoinIds(const std::set<std::uint64_t>& ids) {
  std::string s;
  for (std::uint64_t id : ids) s += (s.empty() ? "" : " ") + std::to_string(id);
  return s.empty() ? "-" : s;
}

inline int CmdUpdate(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto level = ParseToleranceLevel(cfg.tolerance);
  const auto inner = ParseStrategy(cfg.strategy);
  const auto outer = ParseStrategy(cfg.outer_strategy);
  if (!level || !inner || !outer) {
    err << "error: unknown tolerance level or strategy\n";
    return kExitUsage;
  }
  const StoreState state = LoadStore(cfg.output_dir);
  std::map<std::string, CrashReport> stored = LoadReports(cfg.output_dir, state);
  RequireCleanStore(state, MakeTraceMetric(state.metric, stored));

  const auto batch = LoadInputs(cfg.input_dir, ResolveIgnoreRules(cfg.ignore_rules),
                                state.metric.key_mode, cfg.lenient, err);
  AccumulateOptions options;
  options.level = *level;
  options.inner_strategy = *inner;
  options.outer_strategy = *outer;
  AccumulationResult result = PlanUpdate(state, stored, batch, options);

  std::map<std::string, CrashReport> all = stored;
  for (const CrashReport& report : batch) all.emplace(report.id, report);
  if (cfg.crashline_dedup) {
    std::set<std::string> old_members;
    for (const auto& [id, report] : stored) old_members.insert(id);
    std::map<std::string, std::string> dropped;
    DedupCrashlines(result.clusters, all, old_members, MakeTraceMetric(state.metric, all),
                    &dropped);
    for (Disposition& d : result.dispositions) {
      if (const auto it = dropped.find(d.id); it != dropped.end()) {
        d.kind = Disposition::Kind::kDeduplicated;
        d.representative = it->second;
        d.cluster = 0;
      }
    }
  }
  for (const auto& warning : result.warnings) err << "warning: " << warning << "\n";

  Commit(cfg.output_dir, result, all);
  if (cfg.json) {
    out << ResultToJson(result).dump(2) << "\n";
  } else {
    out << "dup: " << result.counts.dup << "\ninner: " << result.counts.inner
        << "\nouter: " << result.counts.outer << "\noot: " << result.counts.oot
        << "\nnew clusters: " << JoinIds(result.new_clusters)
        << "\nupdated clusters: " << JoinIds(result.updated_clusters)
        << "\nclusters: " << result.clusters.size() << "\n";
  }
  return kExitOk;
}

inline int CmdEstimate(const CliConfig& cfg, std::ostream& out, std::ostream&) {
  const StoreState state = LoadStore(cfg.output_dir);
  const auto reports = LoadReports(cfg.output_dir, state);
  const TraceMetric metric = MakeTraceMetric(state.metric, reports);
  RequireCleanStore(state, metric);
  const SilhouetteReport s = SilhouetteDetail(std::span<const Cluster>(state.clusters), metric);

  char score[32];
  std::snprintf(score, sizeof score, "%.6f", s.score);
  if (cfg.json) {
    nlohmann::ordered_json clusters = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < state.clusters.size(); ++i) {
      clusters.push_back({{"id", state.clusters[i].id},
                          {"size", state.clusters[i].members.size()},
                          {"mean_silhouette", s.cluster_means[i]}});
    }
    const nlohmann::ordered_json summary = {
        {"silhouette", s.score}, {"formatted", score}, {"clusters", std::move(clusters)}};
    out << summary.dump(2) << "\n";
  } else {
    out << score << "\n";
  }
  return kExitOk;
}

inline int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyTrace:
    case ErrorCode::kParseError:
    case ErrorCode::kFingerprintMismatch:
    case ErrorCode::kAllFramesFiltered:
    case ErrorCode::kEmptyBatch:
      return kExitParse;
    case ErrorCode::kInvalidThreshold:
    case ErrorCode::kInvalidConfig:
      return kExitUsage;
    case ErrorCode::kOldClusterCollision:
      return kExitCollision;
    default:
      return kExitStore;
  }
}

inline int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CliConfig cfg;
  CLI::App app{"Crash report deduplication, clustering and accumulation"};
  app.require_subcommand(1);

  const auto threshold_check = CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          const double v = std::stod(s);
          if (v > 0.0 && v <= 1.0) return {};
        } catch (const std::exception&) {
        }
        return "value must be a number in (0, 1]";
      },
      "(0,1]");

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--ignore-rules", cfg.ignore_rules,
                    std::string("Ignore-rules file (default: $") + kIgnoreRulesEnv +
                        " or built-in list)");
    cmd->add_flag("--lenient", cfg.lenient, "Skip unparsable inputs with a warning");
    cmd->add_flag("--json", cfg.json, "Print a JSON summary");
  };
  auto add_metric = [&](CLI::App* cmd) {
    cmd->add_option("--decay", cfg.decay, "Positional weight ratio in (0,1]");
    cmd->add_option("--key-mode", cfg.key_mode, "Frame key: function | module-offset")
        ->check(CLI::IsMember({"function", "module-offset"}));
  };

  auto* dedup = app.add_subcommand("dedup", "Drop duplicate reports");
  dedup->add_option("input", cfg.input_dir, "Directory of raw traces / reports")->required();
  dedup->add_option("output", cfg.output_dir, "Directory for unique reports")->required();
  dedup->add_flag("--clusterfuzz", cfg.clusterfuzz, "Use the ClusterFuzz comparator");
  dedup->add_option("--same-frame-threshold", cfg.same_frame_threshold)
      ->check(CLI::PositiveNumber);
  dedup->add_option("--compare-threshold", cfg.compare_threshold)->check(threshold_check);
  add_common(dedup);
  add_metric(dedup);

  auto* cluster = app.add_subcommand("cluster", "Cluster reports into a new store");
  cluster->add_option("input", cfg.input_dir)->required();
  cluster->add_option("store", cfg.output_dir)->required();
  cluster->add_option("--threshold", cfg.threshold, "Cluster diameter bound")
      ->check(threshold_check);
  cluster->add_flag("--crashline-dedup", cfg.crashline_dedup);
  add_common(cluster);
  add_metric(cluster);

  auto* update = app.add_subcommand("update", "Accumulate new reports into a store");
  update->add_option("input", cfg.input_dir)->required();
  update->add_option("store", cfg.output_dir)->required();
  update->add_option("--tolerance", cfg.tolerance)
      ->check(CLI::IsMember({"loyal", "hard", "soft", "hier", "min-diam", "recluster"}));
  update->add_option("--strategy", cfg.strategy, "Inner strategy")
      ->check(CLI::IsMember({"diam", "delta", "dist"}));
  update->add_option("--outer-strategy", cfg.outer_strategy, "Outer strategy (loyal level)")
      ->check(CLI::IsMember({"diam", "delta", "dist"}));
  update->add_flag("--crashline-dedup", cfg.crashline_dedup);
  add_common(update);

  auto* estimate = app.add_subcommand("estimate", "Silhouette score of a store");
  estimate->add_option("store", cfg.output_dir)->required();
  estimate->add_flag("--json", cfg.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (dedup->parsed()) return CmdDedup(cfg, out, err);
    if (cluster->parsed()) return CmdCluster(cfg, out, err);
    if (update->parsed()) return CmdUpdate(cfg, out, err);
    return CmdEstimate(cfg, out, err);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return ExitCodeFor(e.code());
  }
}

}  // namespace crashaccum::cli
