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


// Accumulation of new traces into an existing flat clustering.
//
// Relative to a cluster C with diameter diam(C) < threshold, a trace t falls
// in exactly one group:
//
//   Dup    some member of C is at distance 0 from t
//   Inner  not Dup, and diam(C + t) == diam(C)
//   Outer  diam(C) < diam(C + t) < threshold
//   Oot    diam(C + t) >= threshold
//
// A trace that is Oot for every cluster is OOT. Tolerance levels decide what
// happens to Inner and Outer traces; OOT traces always form new clusters.
//
// Batches are exact-deduplicated first (against stored members and against
// earlier batch traces), then processed one trace at a time in ascending id
// order, each classified against the live, already-updated clusters.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crashaccum/clustering.hpp"
#include "crashaccum/error.hpp"
#include "crashaccum/metric.hpp"
#include "json.hpp"

namespace crashaccum {

enum class ToleranceLevel { kLoyal, kHard, kSoft, kHierarchical, kBaselineMinDiam, kBaselineRecluster };

enum class Strategy { kDiam, kDelta, kDist };

enum class CandidateKind { kInner, kOuter };

enum class Group { kDup, kInner, kOuter, kOot };

inline std::string_view ToleranceLevelName(ToleranceLevel level) {
  switch (level) {
    case ToleranceLevel::kLoyal: return "loyal";
    case ToleranceLevel::kHard: return "hard";
    case ToleranceLevel::kSoft: return "soft";
    case ToleranceLevel::kHierarchical: return "hier";
    case ToleranceLevel::kBaselineMinDiam: return "min-diam";
    case ToleranceLevel::kBaselineRecluster: return "recluster";
  }
  return "?";
}

inline std::optional<ToleranceLevel> ParseToleranceLevel(std::string_view name) {
  for (auto level : {ToleranceLevel::kLoyal, ToleranceLevel::kHard, ToleranceLevel::kSoft,
                     ToleranceLevel::kHierarchical, ToleranceLevel::kBaselineMinDiam,
                     ToleranceLevel::kBaselineRecluster}) {
    if (ToleranceLevelName(level) == name) return level;
  }
  return std::nullopt;
}

inline std::string_view StrategyName(Strategy strategy) {
  switch (strategy) {
    case Strategy::kDiam: return "diam";
    case Strategy::kDelta: return "delta";
    case Strategy::kDist: return "dist";
  }
  return "?";
}

inline std::optional<Strategy> ParseStrategy(std::string_view name) {
  for (auto s : {Strategy::kDiam, Strategy::kDelta, Strategy::kDist}) {
    if (StrategyName(s) == name) return s;
  }
  return std::nullopt;
}

inline std::string_view GroupName(Group group) {
  switch (group) {
    case Group::kDup: return "dup";
    case Group::kInner: return "inner";
    case Group::kOuter: return "outer";
    case Group::kOot: return "oot";
  }
  return "?";
}

struct TraceClass {
  bool is_dup = false;
  std::string dup_of;  // the stored member at distance 0, when is_dup
  std::vector<std::uint64_t> inners;
  std::vector<std::uint64_t> outers;

  bool oot() const { return !is_dup && inners.empty() && outers.empty(); }

  Group group() const {
    if (is_dup) return Group::kDup;
    if (!inners.empty()) return Group::kInner;
    if (!outers.empty()) return Group::kOuter;
    return Group::kOot;
  }
};

struct TraceToCluster {
  double nearest = std::numeric_limits<double>::infinity();  // min over members
  double farthest = 0.0;                                     // max over members
  std::string nearest_member;
};

template <IdMetric M>
TraceToCluster MeasureTrace(const std::string& trace, const Cluster& cluster, const M& metric) {
  TraceToCluster m;
  for (const auto& member : cluster.members) {
    const double d = metric(trace, member);
    if (d < m.nearest) {
      m.nearest = d;
      m.nearest_member = member;
    }
    m.farthest = std::max(m.farthest, d);
  }
  return m;
}

// Group of `trace` relative to one cluster; uses the cached diameter.
template <IdMetric M>
Group GroupOf(const std::string& trace, const Cluster& cluster, const M& metric,
              double threshold) {
  const TraceToCluster m = MeasureTrace(trace, cluster, metric);
  if (m.nearest == 0.0) return Group::kDup;
  const double grown = std::max(cluster.diameter, m.farthest);
  if (grown == cluster.diameter) return Group::kInner;
  if (grown < threshold) return Group::kOuter;
  return Group::kOot;
}

template <IdMetric M>
TraceClass Classify(const std::string& trace, std::span<const Cluster> clusters, const M& metric,
                    double threshold) {
  TraceClass result;
  for (const Cluster& cluster : clusters) {
    if (!(cluster.diameter < threshold)) {
      throw Error(ErrorCode::kInvalidStore,
                  "cluster " + std::to_string(cluster.id) + " has diameter >= threshold");
    }
    const TraceToCluster m = MeasureTrace(trace, cluster, metric);
    if (m.nearest == 0.0) {
      if (!result.is_dup) result.dup_of = m.nearest_member;
      result.is_dup = true;
      continue;
    }
    const double grown = std::max(cluster.diameter, m.farthest);
    if (grown == cluster.diameter) {
      result.inners.push_back(cluster.id);
    } else if (grown < threshold) {
      result.outers.push_back(cluster.id);
    }
  }
  return result;
}

namespace detail {

inline const Cluster& FindCluster(std::span<const Cluster> clusters, std::uint64_t id) {
  const auto it = std::ranges::find(clusters, id, &Cluster::id);
  if (it == clusters.end()) {
    throw Error(ErrorCode::kInvalidStore, "no cluster with id " + std::to_string(id));
  }
  return *it;
}

inline Cluster& FindCluster(std::vector<Cluster>& clusters, std::uint64_t id) {
  return const_cast<Cluster&>(FindCluster(std::span<const Cluster>(clusters), id));
}

}  // namespace detail

// Picks the candidate cluster that grows least under `strategy`:
//   Diam   argmin diam(C + t)
//   Delta  argmin diam(C + t) - diam(C)
//   Dist   argmin min_{x in C} dist(x, t)
// Ties go to the smallest cluster id. Delta is degenerate for inner
// candidates (every delta is zero) and falls back to Diam there.
template <IdMetric M>
std::uint64_t ChooseCluster(const std::string& trace, std::span<const std::uint64_t> candidates,
                            Strategy strategy, CandidateKind kind, const M& metric,
                            std::span<const Cluster> clusters,
                            std::vector<std::string>* warnings = nullptr) {
  if (candidates.empty()) throw Error(ErrorCode::kNoCandidates, "no candidate clusters");
  if (strategy == Strategy::kDelta && kind == CandidateKind::kInner) {
    if (warnings != nullptr) {
      warnings->push_back("delta strategy is degenerate for inner candidates; using diam");
    }
    strategy = Strategy::kDiam;
  }
  std::uint64_t best_id = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t id : candidates) {
    const Cluster& cluster = detail::FindCluster(clusters, id);
    const TraceToCluster m = MeasureTrace(trace, cluster, metric);
    const double grown = std::max(cluster.diameter, m.farthest);
    double score = 0.0;
    switch (strategy) {
      case Strategy::kDiam: score = grown; break;
      case Strategy::kDelta: score = std::abs(grown - cluster.diameter); break;
      case Strategy::kDist: score = m.nearest; break;
    }
    if (score < best || (score == best && id < best_id)) {
      best = score;
      best_id = id;
    }
  }
  return best_id;
}

struct StoreViolation {
  enum class Kind { kDiameterAtThreshold, kDiameterMismatch, kDuplicateMember, kEmptyCluster };
  Kind kind;
  std::uint64_t cluster = 0;
  std::string detail;
};

inline constexpr double kDiameterTolerance = 1e-12;

template <IdMetric M>
std::vector<StoreViolation> ValidateStore(std::span<const Cluster> clusters, const M& metric,
                                          double threshold) {
  using Kind = StoreViolation::Kind;
  std::vector<StoreViolation> findings;
  std::map<std::string, std::uint64_t> owner;
  for (const Cluster& cluster : clusters) {
    if (cluster.members.empty()) {
      findings.push_back({Kind::kEmptyCluster, cluster.id, "cluster has no members"});
      continue;
    }
    for (const auto& member : cluster.members) {
      const auto [it, inserted] = owner.emplace(member, cluster.id);
      if (!inserted) {
        findings.push_back({Kind::kDuplicateMember, cluster.id,
                            member + " also in cluster " + std::to_string(it->second)});
      }
    }
    const double actual = Diameter(std::span<const std::string>(cluster.members), metric);
    if (std::abs(actual - cluster.diameter) > kDiameterTolerance) {
      findings.push_back({Kind::kDiameterMismatch, cluster.id,
                          "cached " + std::to_string(cluster.diameter) + ", actual " +
                              std::to_string(actual)});
    }
    if (!(actual < threshold)) {
      findings.push_back({Kind::kDiameterAtThreshold, cluster.id,
                          "diameter " + std::to_string(actual) + " >= threshold"});
    }
  }
  return findings;
}

struct AccumulateOptions {
  ToleranceLevel level = ToleranceLevel::kHierarchical;
  Strategy inner_strategy = Strategy::kDiam;
  Strategy outer_strategy = Strategy::kDiam;
  double threshold = kDefaultThreshold;
};

struct Disposition {
  enum class Kind { kDeduplicated, kAddedTo, kNewCluster };
  std::string id;
  Kind kind = Kind::kDeduplicated;
  Group group = Group::kDup;
  std::string representative;  // kDeduplicated
  std::uint64_t cluster = 0;   // kAddedTo, kNewCluster
};

struct GroupCounts {
  std::size_t dup = 0;
  std::size_t inner = 0;
  std::size_t outer = 0;
  std::size_t oot = 0;

  std::size_t total() const { return dup + inner + outer + oot; }
  void add(Group group) {
    switch (group) {
      case Group::kDup: ++dup; break;
      case Group::kInner: ++inner; break;
      case Group::kOuter: ++outer; break;
      case Group::kOot: ++oot; break;
    }
  }
  friend bool operator==(const GroupCounts&, const GroupCounts&) = default;
};

struct AccumulationResult {
  std::vector<Disposition> dispositions;  // processing order
  std::set<std::uint64_t> updated_clusters;
  std::set<std::uint64_t> new_clusters;
  GroupCounts counts;
  std::vector<Cluster> clusters;  // final clustering, ascending id
  std::uint64_t next_cluster_id = 1;
  std::vector<std::string> warnings;
  std::string base_revision;  // revision of the store the result was computed on
};

namespace detail {

template <IdMetric M>
class Accumulator {
 public:
  Accumulator(std::span<const Cluster> clusters, std::uint64_t next_cluster_id,
              const AccumulateOptions& options, const M& metric)
      : options_(options), metric_(metric) {
    result_.clusters.assign(clusters.begin(), clusters.end());
    std::ranges::sort(result_.clusters, {}, &Cluster::id);
    result_.next_cluster_id = next_cluster_id;
    for (const Cluster& c : result_.clusters) {
      old_ids_.insert(c.id);
      result_.next_cluster_id = std::max(result_.next_cluster_id, c.id + 1);
    }
  }

  AccumulationResult run(std::span<const std::string> batch) {
    ValidateThreshold(options_.threshold);
    if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "no reports to accumulate");
    const auto findings = ValidateStore(std::span<const Cluster>(result_.clusters), metric_,
                                        options_.threshold);
    if (!findings.empty()) {
      throw Error(ErrorCode::kInvalidStore,
                  "cluster " + std::to_string(findings.front().cluster) + ": " +
                      findings.front().detail);
    }

    std::vector<std::string> order(batch.begin(), batch.end());
    std::ranges::sort(order);
    const std::vector<std::string> kept = Deduplicate(order);

    switch (options_.level) {
      case ToleranceLevel::kLoyal:
      case ToleranceLevel::kHard:
        Sequential(kept);
        CreateClusters(ClusterPool());
        break;
      case ToleranceLevel::kSoft:
        Sequential(kept);
        CreateClusters(MergeIntoOld(ClusterPool()));
        break;
      case ToleranceLevel::kHierarchical:
        Sequential(kept);
        ClusterAtoms();
        break;
      case ToleranceLevel::kBaselineMinDiam:
        MinDiameter(kept);
        CreateClusters(ClusterPool());
        break;
      case ToleranceLevel::kBaselineRecluster:
        Recluster(kept);
        break;
    }

    std::ranges::sort(result_.dispositions, {}, &Disposition::id);
    return std::move(result_);
  }

 private:
  // Sheds repeated ids, traces at distance 0 from a stored member, and traces
  // at distance 0 from an earlier batch trace.
  std::vector<std::string> Deduplicate(const std::vector<std::string>& order) {
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::string& id = order[i];
      std::optional<std::string> rep;
      if (i > 0 && order[i - 1] == id) rep = id;
      for (const Cluster& c : result_.clusters) {
        if (rep) break;
        for (const auto& member : c.members) {
          if (metric_(id, member) == 0.0) {
            rep = member;
            break;
          }
        }
      }
      for (const auto& earlier : kept) {
        if (rep) break;
        if (metric_(id, earlier) == 0.0) rep = earlier;
      }
      if (rep) {
        Shed(id, *rep);
      } else {
        kept.push_back(id);
      }
    }
    return kept;
  }

  void Shed(const std::string& id, const std::string& representative) {
    result_.counts.add(Group::kDup);
    result_.dispositions.push_back(
        {id, Disposition::Kind::kDeduplicated, Group::kDup, representative, 0});
  }

  void AddTo(const std::string& id, Group group, std::uint64_t cluster_id) {
    Cluster& cluster = FindCluster(result_.clusters, cluster_id);
    const TraceToCluster m = MeasureTrace(id, cluster, metric_);
    cluster.diameter = std::max(cluster.diameter, m.farthest);
    cluster.members.push_back(id);
    result_.updated_clusters.insert(cluster_id);
    result_.dispositions.push_back({id, Disposition::Kind::kAddedTo, group, {}, cluster_id});
  }

  // Loyal, Hard, Soft and the first phase of Hierarchical: Dup is shed,
  // Inner joins a cluster, Outer joins one only at Loyal, the rest is pooled.
  void Sequential(const std::vector<std::string>& kept) {
    const bool outer_joins = options_.level == ToleranceLevel::kLoyal;
    for (const auto& id : kept) {
      const TraceClass c = Classify(id, std::span<const Cluster>(result_.clusters), metric_,
                                    options_.threshold);
      const Group group = c.group();
      switch (group) {
        case Group::kDup:
          Shed(id, c.dup_of);
          continue;
        case Group::kInner:
          result_.counts.add(group);
          AddTo(id, group,
                ChooseCluster(id, c.inners, options_.inner_strategy, CandidateKind::kInner,
                              metric_, result_.clusters, &result_.warnings));
          continue;
        case Group::kOuter:
          result_.counts.add(group);
          if (outer_joins) {
            AddTo(id, group,
                  ChooseCluster(id, c.outers, options_.outer_strategy, CandidateKind::kOuter,
                                metric_, result_.clusters, &result_.warnings));
          } else {
            Pool(id, group);
          }
          continue;
        case Group::kOot:
          result_.counts.add(group);
          Pool(id, group);
          continue;
      }
    }
  }

  // Baseline: join the cluster whose grown diameter is smallest, if any
  // stays under the threshold.
  void MinDiameter(const std::vector<std::string>& kept) {
    for (const auto& id : kept) {
      const TraceClass c = Classify(id, std::span<const Cluster>(result_.clusters), metric_,
                                    options_.threshold);
      const Group group = c.group();
      if (group == Group::kDup) {
        Shed(id, c.dup_of);
        continue;
      }
      result_.counts.add(group);
      std::vector<std::uint64_t> fitting = c.inners;
      fitting.insert(fitting.end(), c.outers.begin(), c.outers.end());
      if (fitting.empty()) {
        Pool(id, group);
        continue;
      }
      AddTo(id, group,
            ChooseCluster(id, fitting, Strategy::kDiam, CandidateKind::kOuter, metric_,
                          result_.clusters));
    }
  }

  void Pool(const std::string& id, Group group) {
    pool_.push_back(id);
    pool_group_[id] = group;
  }

  // Flat clusters over the pooled traces, without ids yet.
  std::vector<Cluster> ClusterPool() const {
    if (pool_.empty()) return {};
    return ClusterIds(std::span<const std::string>(pool_), metric_, options_.threshold, 0);
  }

  // Greedily folds each fresh cluster into the old cluster minimizing the
  // merged diameter, when that diameter stays under the threshold.
  std::vector<Cluster> MergeIntoOld(std::vector<Cluster> fresh) {
    std::vector<Cluster> remaining;
    for (Cluster& candidate : fresh) {
      std::optional<std::uint64_t> target;
      double best = std::numeric_limits<double>::infinity();
      for (const Cluster& old : result_.clusters) {
        if (!old_ids_.contains(old.id)) continue;
        const double merged = std::max(
            {old.diameter, candidate.diameter,
             ClusterDistance(std::span<const std::string>(old.members),
                             std::span<const std::string>(candidate.members), metric_)});
        if (merged < best) {
          best = merged;
          target = old.id;
        }
      }
      if (!target || !(best < options_.threshold)) {
        remaining.push_back(std::move(candidate));
        continue;
      }
      for (const auto& id : candidate.members) AddTo(id, pool_group_.at(id), *target);
    }
    return remaining;
  }

  void CreateClusters(std::vector<Cluster> fresh) {
    for (Cluster& cluster : fresh) {
      cluster.id = result_.next_cluster_id++;
      for (const auto& id : cluster.members) {
        result_.dispositions.push_back(
            {id, Disposition::Kind::kNewCluster, pool_group_.at(id), {}, cluster.id});
      }
      result_.new_clusters.insert(cluster.id);
      result_.clusters.push_back(std::move(cluster));
    }
  }

  // Complete linkage over atoms: every existing cluster is one indivisible
  // atom, every pooled trace another. A flat cluster holding one old atom
  // extends it; one holding none becomes a new cluster.
  void ClusterAtoms() {
    if (pool_.empty()) return;
    const std::size_t old_count = result_.clusters.size();
    std::vector<std::vector<std::string>> atoms;
    for (const Cluster& c : result_.clusters) atoms.push_back(c.members);
    for (const auto& id : pool_) atoms.push_back({id});

    DistanceMatrix matrix(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      for (std::size_t j = i + 1; j < atoms.size(); ++j) {
        matrix.set(i, j,
                   ClusterDistance(std::span<const std::string>(atoms[i]),
                                   std::span<const std::string>(atoms[j]), metric_));
      }
    }
    const FlatClustering flat = HierarchicalCluster(matrix, options_.threshold);

    std::vector<Cluster> fresh;
    for (const auto& group : flat.groups) {
      std::vector<std::size_t> old_atoms;
      std::vector<std::string> traces;
      for (std::size_t atom : group) {
        if (atom < old_count) {
          old_atoms.push_back(atom);
        } else {
          traces.push_back(atoms[atom].front());
        }
      }
      if (old_atoms.size() >= 2) {
        throw Error(ErrorCode::kOldClusterCollision,
                    "clusters " + std::to_string(result_.clusters[old_atoms[0]].id) + " and " +
                        std::to_string(result_.clusters[old_atoms[1]].id) +
                        " fall into one flat cluster");
      }
      if (old_atoms.size() == 1) {
        const std::uint64_t target = result_.clusters[old_atoms.front()].id;
        for (const auto& id : traces) AddTo(id, pool_group_.at(id), target);
      } else {
        Cluster cluster;
        cluster.members = std::move(traces);
        cluster.diameter = Diameter(std::span<const std::string>(cluster.members), metric_);
        fresh.push_back(std::move(cluster));
      }
    }
    CreateClusters(std::move(fresh));
  }

  // Baseline: discard the old structure and cluster everything from scratch.
  void Recluster(const std::vector<std::string>& kept) {
    std::set<std::string> old_members;
    for (const Cluster& c : result_.clusters) {
      old_members.insert(c.members.begin(), c.members.end());
    }
    std::map<std::string, Group> batch;
    for (const auto& id : kept) {
      const Group group =
          Classify(id, std::span<const Cluster>(result_.clusters), metric_, options_.threshold)
              .group();
      result_.counts.add(group);
      batch.emplace(id, group);
    }
    std::vector<std::string> all(old_members.begin(), old_members.end());
    all.insert(all.end(), kept.begin(), kept.end());
    std::ranges::sort(all);

    result_.clusters = ClusterIds(std::span<const std::string>(all), metric_,
                                  options_.threshold, 1);
    result_.next_cluster_id = result_.clusters.size() + 1;
    for (const Cluster& c : result_.clusters) {
      const bool has_old = std::ranges::any_of(
          c.members, [&](const std::string& m) { return old_members.contains(m); });
      for (const auto& id : c.members) {
        const auto it = batch.find(id);
        if (it == batch.end()) continue;
        result_.dispositions.push_back({id,
                                        has_old ? Disposition::Kind::kAddedTo
                                                : Disposition::Kind::kNewCluster,
                                        it->second, {}, c.id});
        (has_old ? result_.updated_clusters : result_.new_clusters).insert(c.id);
      }
    }
  }

  const AccumulateOptions& options_;
  const M& metric_;
  AccumulationResult result_;
  std::set<std::uint64_t> old_ids_;
  std::vector<std::string> pool_;
  std::map<std::string, Group> pool_group_;
};

}  // namespace detail

// Accumulates `batch` (trace ids known to `metric`) into `clusters` and
// returns the dispositions together with the resulting clustering. The input
// clusters are not modified.
template <IdMetric M>
AccumulationResult Accumulate(std::span<const std::string> batch,
                              std::span<const Cluster> clusters, std::uint64_t next_cluster_id,
                              const AccumulateOptions& options, const M& metric) {
  return detail::Accumulator<M>(clusters, next_cluster_id, options, metric).run(batch);
}

inline std::string_view DispositionName(Disposition::Kind kind) {
  switch (kind) {
    case Disposition::Kind::kDeduplicated: return "deduplicated";
    case Disposition::Kind::kAddedTo: return "added";
    case Disposition::Kind::kNewCluster: return "new_cluster";
  }
  return "?";
}

inline nlohmann::ordered_json ResultToJson(const AccumulationResult& result) {
  nlohmann::ordered_json dispositions = nlohmann::ordered_json::array();
  for (const Disposition& d : result.dispositions) {
    nlohmann::ordered_json entry = {{"id", d.id},
                                    {"disposition", DispositionName(d.kind)},
                                    {"group", GroupName(d.group)}};
    if (d.kind == Disposition::Kind::kDeduplicated) {
      entry["representative"] = d.representative;
    } else {
      entry["cluster"] = d.cluster;
    }
    dispositions.push_back(std::move(entry));
  }
  return {{"counts",
           {{"dup", result.counts.dup},
            {"inner", result.counts.inner},
            {"outer", result.counts.outer},
            {"oot", result.counts.oot}}},
          {"updated_clusters", result.updated_clusters},
          {"new_clusters", result.new_clusters},
          {"cluster_count", result.clusters.size()},
          {"dispositions", std::move(dispositions)},
          {"warnings", result.warnings}};
}

}  // namespace crashaccum
