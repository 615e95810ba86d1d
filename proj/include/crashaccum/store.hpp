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


// Durable cluster state.
//
// Layout:
//   <dir>/meta.json                    threshold, metric, clusters, next id
//   <dir>/cl<N>/<id>.report.json       one file per member of cluster N
//
// meta.json is the commit point: a commit first writes any missing report
// files, then replaces meta.json by rename, then removes files that no
// longer belong to their directory. Readers only trust membership listed in
// meta.json, so an interrupted commit leaves the previous state readable.

#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crashaccum/accumulate.hpp"
#include "crashaccum/clustering.hpp"
#include "crashaccum/error.hpp"
#include "crashaccum/metric.hpp"
#include "crashaccum/report.hpp"
#include "crashaccum/sha256.hpp"
#include "json.hpp"

namespace crashaccum {

namespace fs = std::filesystem;

inline constexpr int kStoreFormatVersion = 1;
inline constexpr std::string_view kMetaFile = "meta.json";
inline constexpr std::string_view kLockFile = ".lock";

struct StoreState {
  int version = kStoreFormatVersion;
  double threshold = kDefaultThreshold;
  MetricConfig metric;
  std::vector<Cluster> clusters;
  std::uint64_t next_cluster_id = 1;
  std::string revision;  // SHA-256 of the meta.json bytes this state was read from

  friend bool operator==(const StoreState&, const StoreState&) = default;
};

// Called with the name of each commit stage; tests throw from it to simulate
// a crash at that point.
using CommitHook = std::function<void(std::string_view stage)>;

inline fs::path ClusterDir(const fs::path& dir, std::uint64_t id) {
  return dir / ("cl" + std::to_string(id));
}

inline fs::path ReportPath(const fs::path& dir, std::uint64_t cluster, const std::string& id) {
  return ClusterDir(dir, cluster) / (id + ".report.json");
}

inline std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes through a temporary file in the same directory and renames it into
// place.
inline void WriteFileAtomic(const fs::path& path, std::string_view data,
                            const CommitHook& hook = {}, std::string_view stage = {}) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  if (hook) hook(stage);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

// Exclusive writer lock held for the lifetime of the object.
class StoreLock {
 public:
  explicit StoreLock(const fs::path& dir) : path_(dir / kLockFile) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) throw Error(ErrorCode::kStoreLocked, path_.string() + " exists");
      throw Error(ErrorCode::kIoError, "cannot create " + path_.string() + ": " +
                                           std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const ssize_t written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~StoreLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  fs::path path_;
};

inline std::string SerializeMeta(const StoreState& state) {
  nlohmann::ordered_json clusters = nlohmann::ordered_json::array();
  for (const Cluster& c : state.clusters) {
    clusters.push_back({{"id", c.id}, {"diameter", c.diameter}, {"members", c.members}});
  }
  const nlohmann::ordered_json meta = {
      {"version", state.version},
      {"threshold", state.threshold},
      {"metric", {{"decay", state.metric.decay}, {"key_mode", KeyModeName(state.metric.key_mode)}}},
      {"clusters", std::move(clusters)},
      {"next_cluster_id", state.next_cluster_id}};
  return meta.dump(2) + "\n";
}

inline StoreState ParseMeta(std::string_view bytes) {
  StoreState state;
  try {
    const auto meta = nlohmann::json::parse(bytes);
    state.version = meta.at("version").get<int>();
    if (state.version != kStoreFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  "store version " + std::to_string(state.version) + ", expected " +
                      std::to_string(kStoreFormatVersion));
    }
    state.threshold = meta.at("threshold").get<double>();
    state.metric.decay = meta.at("metric").at("decay").get<double>();
    state.metric.key_mode = ParseKeyMode(meta.at("metric").at("key_mode").get<std::string>());
    for (const auto& c : meta.at("clusters")) {
      Cluster cluster;
      cluster.id = c.at("id").get<std::uint64_t>();
      cluster.diameter = c.at("diameter").get<double>();
      cluster.members = c.at("members").get<std::vector<std::string>>();
      state.clusters.push_back(std::move(cluster));
    }
    state.next_cluster_id = meta.at("next_cluster_id").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidStore, std::string("malformed meta.json: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidConfig) throw Error(ErrorCode::kInvalidStore, e.what());
    throw;
  }
  state.revision = Sha256Hex(bytes);
  return state;
}

inline StoreState LoadStore(const fs::path& dir) {
  const fs::path meta = dir / kMetaFile;
  if (!fs::is_regular_file(meta)) throw Error(ErrorCode::kNotAStore, meta.string() + " missing");
  StoreState state = ParseMeta(ReadFile(meta));
  ValidateThreshold(state.threshold);
  state.metric.validate();
  for (const Cluster& c : state.clusters) {
    if (c.id >= state.next_cluster_id) {
      throw Error(ErrorCode::kInvalidStore, "cluster id " + std::to_string(c.id) +
                                                " not below next_cluster_id");
    }
    for (const auto& member : c.members) {
      if (!fs::is_regular_file(ReportPath(dir, c.id, member))) {
        throw Error(ErrorCode::kInvalidStore,
                    "missing report " + ReportPath(dir, c.id, member).string());
      }
    }
  }
  return state;
}

// Reads every member report of the store, keyed by id.
inline std::map<std::string, CrashReport> LoadReports(const fs::path& dir,
                                                      const StoreState& state) {
  std::map<std::string, CrashReport> reports;
  for (const Cluster& c : state.clusters) {
    for (const auto& member : c.members) {
      CrashReport report =
          ParseReportJson(ReadFile(ReportPath(dir, c.id, member)), state.metric.key_mode);
      if (report.id != member) {
        throw Error(ErrorCode::kFingerprintMismatch, "report file name does not match its id");
      }
      reports.emplace(member, std::move(report));
    }
  }
  return reports;
}

inline TraceMetric MakeTraceMetric(const MetricConfig& cfg,
                                   const std::map<std::string, CrashReport>& reports) {
  TraceMetric metric(cfg);
  for (const auto& [id, report] : reports) metric.add(id, report.stacktrace);
  return metric;
}

namespace detail {

// Writes `next` into `dir`: missing report files first, then meta.json, then
// cleanup of files that moved or left.
inline StoreState WriteState(const fs::path& dir, const StoreState& current, StoreState next,
                             const std::map<std::string, CrashReport>& reports,
                             const CommitHook& hook) {
  std::map<std::string, fs::path> existing;
  for (const Cluster& c : current.clusters) {
    for (const auto& member : c.members) existing[member] = ReportPath(dir, c.id, member);
  }
  std::error_code ec;
  for (const Cluster& c : next.clusters) {
    fs::create_directories(ClusterDir(dir, c.id), ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + ClusterDir(dir, c.id).string());
    for (const auto& member : c.members) {
      const fs::path target = ReportPath(dir, c.id, member);
      if (fs::exists(target)) continue;
      if (const auto it = existing.find(member); it != existing.end()) {
        WriteFileAtomic(target, ReadFile(it->second));
      } else if (const auto rit = reports.find(member); rit != reports.end()) {
        WriteFileAtomic(target, SerializeReport(rit->second));
      } else {
        throw Error(ErrorCode::kIoError, "no report content for " + member);
      }
    }
  }
  if (hook) hook("reports-written");

  const std::string meta = SerializeMeta(next);
  WriteFileAtomic(dir / kMetaFile, meta, hook, "before-rename");
  next.revision = Sha256Hex(meta);

  std::set<fs::path> keep;
  for (const Cluster& c : next.clusters) {
    keep.insert(ClusterDir(dir, c.id));
    for (const auto& member : c.members) keep.insert(ReportPath(dir, c.id, member));
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || !name.starts_with("cl")) continue;
    if (!keep.contains(entry.path())) {
      fs::remove_all(entry.path(), ec);
      continue;
    }
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (!keep.contains(file.path())) fs::remove(file.path(), ec);
    }
  }
  return next;
}

}  // namespace detail

inline StoreState InitStore(const fs::path& dir, double threshold, const MetricConfig& metric) {
  ValidateThreshold(threshold);
  metric.validate();
  std::error_code ec;
  if (fs::exists(dir / kMetaFile)) throw Error(ErrorCode::kAlreadyExists, dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir, ec)) {
    throw Error(ErrorCode::kAlreadyExists, dir.string() + " is not empty");
  }
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  StoreState state;
  state.threshold = threshold;
  state.metric = metric;
  const std::string meta = SerializeMeta(state);
  WriteFileAtomic(dir / kMetaFile, meta);
  state.revision = Sha256Hex(meta);
  return state;
}

// Initializes a store holding an already computed clustering.
inline StoreState CreateStore(const fs::path& dir, double threshold, const MetricConfig& metric,
                              std::vector<Cluster> clusters,
                              const std::map<std::string, CrashReport>& reports) {
  const StoreState empty = InitStore(dir, threshold, metric);
  StoreLock lock(dir);
  StoreState next = empty;
  next.clusters = std::move(clusters);
  for (const Cluster& c : next.clusters) {
    next.next_cluster_id = std::max(next.next_cluster_id, c.id + 1);
  }
  return detail::WriteState(dir, empty, std::move(next), reports, {});
}

// Applies an accumulation result computed against the store's current
// revision. `reports` must hold every batch report the result adds.
inline StoreState Commit(const fs::path& dir, const AccumulationResult& result,
                         const std::map<std::string, CrashReport>& reports,
                         const CommitHook& hook = {}) {
  StoreLock lock(dir);
  const StoreState current = LoadStore(dir);
  if (current.revision != result.base_revision) {
    throw Error(ErrorCode::kStaleResult, "store changed since the result was computed");
  }
  StoreState next = current;
  next.clusters = result.clusters;
  next.next_cluster_id = result.next_cluster_id;
  return detail::WriteState(dir, current, std::move(next), reports, hook);
}

// Accumulates `batch` into the state read from a store and stamps the
// result with that state's revision.
inline AccumulationResult PlanUpdate(const StoreState& state,
                                     const std::map<std::string, CrashReport>& stored,
                                     std::span<const CrashReport> batch, AccumulateOptions options) {
  options.threshold = state.threshold;
  TraceMetric metric = MakeTraceMetric(state.metric, stored);
  std::vector<std::string> ids;
  for (const CrashReport& report : batch) {
    if (!metric.contains(report.id)) metric.add(report.id, report.stacktrace);
    ids.push_back(report.id);
  }
  AccumulationResult result =
      Accumulate(std::span<const std::string>(ids), std::span<const Cluster>(state.clusters),
                 state.next_cluster_id, options, metric);
  result.base_revision = state.revision;
  return result;
}

}  // namespace crashaccum
