// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "warmsim/types.hpp"

namespace warmsim {

/// One contiguously-stored parameter unit; the grain of reuse.
struct TensorSpec {
    TensorId id;
    std::string model_id;
    std::string name;
    Bytes size = 0;
};

enum class ModelLocation : std::uint8_t { ModelCache, ModelStore };

inline const char* to_string(ModelLocation l) {
    return l == ModelLocation::ModelCache ? "model_cache" : "model_store";
}

struct ModelSpec {
    std::string model_id;
    std::vector<TensorSpec> tensors;  // fixed at registration, ordered by name
    Bytes total_size = 0;             // = sum of tensor sizes
    double latency_sensitivity = 1.0; // alpha in (0, 1], 1 by default
    ModelLocation location = ModelLocation::ModelCache;
    Bytes bytes_per_token = 0;        // KV bytes per token, opaque to the simulator
};

struct GpuSpec {
    std::string gpu_id;
    Bytes pool_size = 0;
    BytesPerSecond pcie_bandwidth = 0;
    BytesPerSecond intra_copy_bandwidth = 0;
    BytesPerSecond store_bandwidth = 0;
};

struct InferenceRequest {
    std::uint64_t request_id = 0;
    std::string model_id;
    Seconds arrival_time = 0;
    std::uint64_t prompt_tokens = 1;
    std::uint64_t output_tokens = 1;
    std::uint32_t batch_lane = 0;
    std::string dataset;
};

/// Per-model access statistics feeding the eviction cost model.
struct ModelStats {
    std::string model_id;
    std::deque<Seconds> request_timestamps;  // bounded recent history
    double miss_probability = 0.0;           // in [0,1]
    BytesPerSecond load_bandwidth = 0.0;
    double counter = 0.0;                    // decayed request counter
};

/// Request-share estimator over all registered models: on each request the
/// target counter becomes lambda*c+1 while every other counter decays by
/// lambda; the share of a model's counter in the total estimates its miss
/// probability. Updates are pure folds over the event history.
class ModelStatsTable {
public:
    static constexpr std::size_t kHistoryBound = 16;

    explicit ModelStatsTable(double decay = 0.95) : decay_(decay) {}

    ModelStats& ensure(const std::string& model_id) {
        auto it = stats_.find(model_id);
        if (it == stats_.end()) it = stats_.emplace(model_id, ModelStats{model_id, {}, 0, 0, 0}).first;
        return it->second;
    }

    const ModelStats* find(const std::string& model_id) const {
        auto it = stats_.find(model_id);
        return it == stats_.end() ? nullptr : &it->second;
    }

    Status record_request(const std::string& model_id, Seconds t) {
        if (t < last_event_) return Error::OrderingError;
        last_event_ = t;
        ensure(model_id);
        total_ = 0.0;
        for (auto& [id, s] : stats_) {
            s.counter *= decay_;
            if (id == model_id) {
                s.counter += 1.0;
                s.request_timestamps.push_back(t);
                if (s.request_timestamps.size() > kHistoryBound) s.request_timestamps.pop_front();
            }
            total_ += s.counter;
        }
        for (auto& [id, s] : stats_) {
            s.miss_probability = total_ > 0.0 ? std::clamp(s.counter / total_, 0.0, 1.0) : 0.0;
        }
        return ok_status();
    }

    Status record_eviction(const std::string& model_id, Seconds t) {
        if (t < last_event_) return Error::OrderingError;
        last_event_ = t;
        ensure(model_id);
        return ok_status();
    }

    void set_load_bandwidth(const std::string& model_id, BytesPerSecond b) {
        ensure(model_id).load_bandwidth = b;
    }

    double miss_probability(const std::string& model_id) const {
        const auto* s = find(model_id);
        return s ? s->miss_probability : 0.0;
    }

    BytesPerSecond load_bandwidth_or(const std::string& model_id, BytesPerSecond fallback) const {
        const auto* s = find(model_id);
        return (s && s->load_bandwidth > 0.0) ? s->load_bandwidth : fallback;
    }

private:
    double decay_;
    Seconds last_event_ = 0.0;
    double total_ = 0.0;
    std::map<std::string, ModelStats> stats_;  // ordered for deterministic iteration
};

/// Eviction cost of one resident tensor: p_m * (size / b_m) * alpha_m.
inline Seconds eviction_cost(Bytes tensor_size, double miss_probability,
                             BytesPerSecond load_bandwidth, double latency_sensitivity) {
    return miss_probability * (static_cast<double>(tensor_size) / load_bandwidth) *
           latency_sensitivity;
}

}  // namespace warmsim
