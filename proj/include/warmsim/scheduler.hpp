// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Affinity-aware placement: requests are matched, in queue order, to the
// feasible GPU with the lowest expected loading time given the reusable
// tensor bytes already resident there. A chosen GPU leaves the pool for the
// remainder of the pass; infeasible requests stay queued.

#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "warmsim/model.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

struct GpuSnapshot {
    std::string gpu_id;
    bool available = true;
    Bytes pool_size = 0;
    Bytes free_bytes = 0;
    std::map<std::string, Bytes> reuse_size_by_model;  // S' per model
    BytesPerSecond pcie_bandwidth = 0;
    BytesPerSecond store_bandwidth = 0;

    Bytes reuse_size_of(const std::string& model_id) const {
        auto it = reuse_size_by_model.find(model_id);
        return it == reuse_size_by_model.end() ? 0 : it->second;
    }
};

/// Expected loading time (S - S') / B. Models staged in the model store
/// stream through the cache, so the slower of the two media governs.
inline Seconds estimate_load_time(const ModelSpec& model, Bytes reuse_size,
                                  const GpuSnapshot& gpu) {
    const BytesPerSecond bandwidth =
        model.location == ModelLocation::ModelCache
            ? gpu.pcie_bandwidth
            : std::min(gpu.store_bandwidth, gpu.pcie_bandwidth);
    return static_cast<double>(model.total_size - reuse_size) / bandwidth;
}

/// Feasibility: the GPU hosts no active instance and the pool can hold the
/// model plus one KV block per batch lane.
inline bool can_run(const ModelSpec& model, const GpuSnapshot& snapshot, Bytes kv_headroom) {
    return snapshot.available && model.total_size + kv_headroom <= snapshot.pool_size;
}

struct SchedulerConfig {
    std::uint32_t batch_size = 1;
    std::uint64_t block_size_tokens = 16;

    Bytes kv_headroom(const ModelSpec& model) const {
        return static_cast<Bytes>(batch_size) * block_size_tokens * model.bytes_per_token;
    }
};

struct ScheduleEntry {
    std::string model_id;
    std::vector<std::pair<std::string, Seconds>> candidates;  // (gpu_id, estimate)
    std::optional<std::string> chosen;
};

struct ScheduleDecision {
    std::vector<std::pair<std::string, std::string>> assignments;  // (model_id, gpu_id)
    std::vector<std::string> deferred;
    std::vector<ScheduleEntry> entries;
};

/// Greedy order-sensitive pass over the queue; ties broken by gpu_id so the
/// outcome is deterministic.
inline ScheduleDecision schedule(const std::vector<std::string>& requests,
                                 std::vector<GpuSnapshot> snapshots,
                                 const std::map<std::string, ModelSpec>& registry,
                                 const SchedulerConfig& config) {
    ScheduleDecision out;
    for (const auto& model_id : requests) {
        ScheduleEntry entry;
        entry.model_id = model_id;
        auto reg = registry.find(model_id);
        if (reg == registry.end()) {
            out.deferred.push_back(model_id);
            out.entries.push_back(std::move(entry));
            continue;
        }
        const ModelSpec& model = reg->second;
        const Bytes headroom = config.kv_headroom(model);

        std::size_t best = snapshots.size();
        Seconds best_latency = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < snapshots.size(); ++g) {
            const auto& snap = snapshots[g];
            if (!can_run(model, snap, headroom)) continue;
            const Seconds lat = estimate_load_time(model, snap.reuse_size_of(model_id), snap);
            entry.candidates.emplace_back(snap.gpu_id, lat);
            if (lat < best_latency ||
                (lat == best_latency && best < snapshots.size() &&
                 snap.gpu_id < snapshots[best].gpu_id)) {
                best = g;
                best_latency = lat;
            }
        }
        if (best == snapshots.size()) {
            out.deferred.push_back(model_id);
        } else {
            entry.chosen = snapshots[best].gpu_id;
            out.assignments.emplace_back(model_id, snapshots[best].gpu_id);
            snapshots[best].available = false;
        }
        out.entries.push_back(std::move(entry));
    }
    return out;
}

}  // namespace warmsim
