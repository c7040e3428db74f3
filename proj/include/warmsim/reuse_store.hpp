// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-GPU unified memory pool manager: region list + tensor map + the
// load/evict/move lifecycle. One store per simulated GPU, mutated by one
// logical actor at a time; snapshots are plain value reads.

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "warmsim/model.hpp"
#include "warmsim/packing.hpp"
#include "warmsim/region_pool.hpp"
#include "warmsim/rng.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

struct TensorEntry {
    Bytes offset = 0;
    Bytes size = 0;
    std::string model_id;
    Seconds last_access = 0;
    bool pinned = false;
};

struct LoadOutcome {
    std::vector<TensorId> hit_tensors;
    std::vector<TensorSpec> missed_tensors;
    Bytes bytes_transferred = 0;
    Bytes bytes_merged = 0;
    Seconds eviction_cost_total = 0;
    AllocationPlan plan;
};

struct LoadPolicy {
    MergePolicy merge = MergePolicy::PartitionedGain;
    PackingStrictness strictness = PackingStrictness::Functional;
    bool random_eviction = false;
    Rng* rng = nullptr;  // required for random eviction order
};

class ReuseStore {
public:
    ReuseStore() = default;

    explicit ReuseStore(GpuSpec spec) : gpu_(std::move(spec)), regions_(gpu_.pool_size) {}

    const GpuSpec& gpu() const { return gpu_; }
    Bytes pool_size() const { return gpu_.pool_size; }
    Bytes free_bytes() const { return regions_.free_total(); }
    Bytes kv_bytes() const { return kv_bytes_; }
    Bytes pinned_tensor_bytes() const { return pinned_tensor_bytes_; }
    Bytes pinned_bytes() const { return pinned_tensor_bytes_ + kv_bytes_; }

    /// Pool bytes usable for retaining tensors: everything not claimed by the
    /// active instance (pinned tensors) or by KV storage.
    Bytes reusable_bytes() const { return gpu_.pool_size - pinned_bytes(); }

    Bytes bytes_merged_total() const { return bytes_merged_total_; }
    Bytes bytes_transferred_total() const { return bytes_transferred_total_; }
    std::uint64_t evictions_total() const { return evictions_total_; }

    const std::unordered_map<TensorId, TensorEntry, TensorIdHash>& tensor_map() const {
        return tensors_;
    }
    const RegionList& regions() const { return regions_; }

    void set_model_alpha(const std::string& model_id, double alpha) {
        model_alpha_[model_id] = alpha;
    }

    /// Partition a model's tensors by residency. Does not touch last_access.
    std::pair<std::vector<TensorId>, std::vector<TensorSpec>> lookup(const ModelSpec& model) const {
        std::vector<TensorId> hits;
        std::vector<TensorSpec> misses;
        for (const auto& t : model.tensors) {
            if (tensors_.count(t.id)) hits.push_back(t.id);
            else misses.push_back(t);
        }
        return {std::move(hits), std::move(misses)};
    }

    /// Total resident bytes of a model's tensors (S' in the load estimate).
    Bytes reuse_size(const ModelSpec& model) const {
        Bytes total = 0;
        for (const auto& t : model.tensors)
            if (auto it = tensors_.find(t.id); it != tensors_.end()) total += it->second.size;
        return total;
    }

    std::vector<EvictionCandidate> eviction_candidates(const ModelStatsTable& stats,
                                                       const std::string& exclude_model) const {
        std::vector<EvictionCandidate> out;
        for (const auto& [id, e] : tensors_) {
            if (e.pinned || e.model_id == exclude_model) continue;
            const double p = stats.miss_probability(e.model_id);
            const double b = stats.load_bandwidth_or(e.model_id, gpu_.pcie_bandwidth);
            const double alpha = alpha_of(e.model_id);
            out.push_back({id, e.size, eviction_cost(e.size, p, b, alpha), e.last_access,
                           e.model_id});
        }
        // The map is unordered; give callers a deterministic base order.
        std::sort(out.begin(), out.end(), [](const EvictionCandidate& a, const EvictionCandidate& b) {
            return a.tensor < b.tensor;
        });
        return out;
    }

    /// Bring every tensor of `model` resident and contiguous, evicting and
    /// relocating per the two-stage plan. On success the model's tensors are
    /// pinned until end_instance(). The store is unchanged on failure.
    Result<LoadOutcome> load_model(const ModelSpec& model, const ModelStatsTable& stats,
                                   Seconds clock, const LoadPolicy& policy = {}) {
        set_model_alpha(model.model_id, model.latency_sensitivity);

        Bytes pinned_self = 0;  // a fully warm reload of an active model stays idempotent
        for (const auto& t : model.tensors)
            if (auto it = tensors_.find(t.id); it != tensors_.end() && it->second.pinned)
                pinned_self += it->second.size;
        const Bytes pinned_other = pinned_bytes() - pinned_self;
        if (model.total_size > gpu_.pool_size || model.total_size > gpu_.pool_size - pinned_other)
            return Error::InsufficientMemory;

        LoadOutcome out;
        auto [hits, misses] = lookup(model);
        out.hit_tensors = hits;
        out.missed_tensors = misses;
        for (const auto& m : misses) out.bytes_transferred += m.size;

        if (!misses.empty()) {
            PlanRequest req;
            req.regions = regions_.snapshot();
            req.new_tensors = misses;
            req.candidates = eviction_candidates(stats, model.model_id);
            if (policy.random_eviction && policy.rng) {
                auto& cands = req.candidates;
                for (std::size_t i = cands.size(); i > 1; --i)
                    std::swap(cands[i - 1], cands[policy.rng->uniform_below(i)]);
                req.randomize_eviction = true;
            }
            for (const auto& [id, e] : tensors_)
                if (e.pinned) req.immovable.insert(id);
            req.strictness = policy.strictness;
            req.merge_policy = policy.merge;

            auto planned = plan_allocation(req);
            if (!planned) return planned.error();
            out.plan = std::move(planned).value();
            apply_plan(out.plan, clock);
            out.bytes_merged = out.plan.total_merge_cost;
            out.eviction_cost_total = out.plan.total_eviction_cost;
        }

        // Commit: one shared load timestamp per model, pinned for the
        // instance lifetime.
        for (const auto& t : model.tensors) {
            auto& e = tensors_.at(t.id);
            e.last_access = clock;
            if (!e.pinned) {
                e.pinned = true;
                pinned_tensor_bytes_ += e.size;
            }
        }
        bytes_transferred_total_ += out.bytes_transferred;
        return out;
    }

    /// Unpin a terminated instance's tensors; they stay resident.
    void end_instance(const std::string& model_id) {
        for (auto& [id, e] : tensors_) {
            if (e.model_id == model_id && e.pinned) {
                e.pinned = false;
                pinned_tensor_bytes_ -= e.size;
            }
        }
    }

    Status evict_tensor(const TensorId& id) {
        auto it = tensors_.find(id);
        if (it == tensors_.end()) return Error::NotFound;
        if (it->second.pinned) return Error::Pinned;
        regions_.release(it->second.offset);
        tensors_.erase(it);
        evictions_total_++;
        return ok_status();
    }

    /// Evict every resident tensor of a model (baseline teardown).
    void evict_model(const std::string& model_id) {
        std::vector<TensorId> ids;
        for (const auto& [id, e] : tensors_)
            if (e.model_id == model_id) ids.push_back(id);
        std::sort(ids.begin(), ids.end());
        for (const auto& id : ids) {
            auto& e = tensors_.at(id);
            if (e.pinned) {
                e.pinned = false;
                pinned_tensor_bytes_ -= e.size;
            }
            evict_tensor(id);
        }
    }

    Status move_tensor(const TensorId& id, Bytes new_offset) {
        auto it = tensors_.find(id);
        if (it == tensors_.end()) return Error::NotFound;
        if (it->second.pinned) return Error::Pinned;
        auto st = regions_.move(it->second.offset, new_offset);
        if (!st.ok()) return st;
        it->second.offset = new_offset;
        bytes_merged_total_ += it->second.size;
        return ok_status();
    }

    // KV block interface, shared with the block allocator.
    Result<Bytes> alloc_kv_region(Bytes size, std::uint64_t block_id) {
        auto r = regions_.allocate_best_fit(size, RegionKind::KvBlock, {}, block_id);
        if (r.ok()) kv_bytes_ += size;
        return r;
    }

    Status free_kv_region(Bytes offset) {
        const Region* r = regions_.find(offset);
        if (!r || r->kind != RegionKind::KvBlock) return Error::NotFound;
        kv_bytes_ -= r->size;
        return regions_.release(offset);
    }

    /// Structural self-check used by tests after every mutation.
    Status validate() const {
        auto st = regions_.validate();
        if (!st.ok()) return st;
        // Tensor map <-> region bijection, conservation, pinned accounting.
        std::size_t tensor_regions = 0;
        Bytes free = 0, tensor_bytes = 0, kv = 0;
        for (const auto& r : regions_.snapshot()) {
            switch (r.kind) {
                case RegionKind::Free: free += r.size; break;
                case RegionKind::KvBlock: kv += r.size; break;
                case RegionKind::Tensor: {
                    tensor_regions++;
                    tensor_bytes += r.size;
                    auto it = tensors_.find(r.tensor);
                    if (it == tensors_.end()) return Error::Infeasible;
                    if (it->second.offset != r.offset || it->second.size != r.size)
                        return Error::Infeasible;
                    break;
                }
            }
        }
        if (tensor_regions != tensors_.size()) return Error::Infeasible;
        if (free + tensor_bytes + kv != gpu_.pool_size) return Error::Infeasible;
        if (kv != kv_bytes_) return Error::Infeasible;
        Bytes pinned = 0;
        for (const auto& [id, e] : tensors_)
            if (e.pinned) pinned += e.size;
        if (pinned != pinned_tensor_bytes_) return Error::Infeasible;
        return ok_status();
    }

    /// Debug dump: ordered region list plus the tensor map, deterministic.
    nlohmann::json dump() const {
        nlohmann::json j;
        j["format_version"] = 1;
        j["gpu_id"] = gpu_.gpu_id;
        j["pool_size"] = gpu_.pool_size;
        auto regions = nlohmann::json::array();
        for (const auto& r : regions_.snapshot()) {
            nlohmann::json e;
            e["offset"] = r.offset;
            e["size"] = r.size;
            e["state"] = to_string(r.kind);
            if (r.kind == RegionKind::Tensor) {
                e["tensor"] = r.tensor.hex();
                e["model"] = tensors_.at(r.tensor).model_id;
            } else if (r.kind == RegionKind::KvBlock) {
                e["block"] = r.block_id;
            }
            regions.push_back(std::move(e));
        }
        j["regions"] = std::move(regions);

        std::vector<std::pair<Bytes, TensorId>> order;
        for (const auto& [id, e] : tensors_) order.push_back({e.offset, id});
        std::sort(order.begin(), order.end());
        auto tmap = nlohmann::json::array();
        for (const auto& [off, id] : order) {
            const auto& e = tensors_.at(id);
            nlohmann::json t;
            t["tensor"] = id.hex();
            t["offset"] = e.offset;
            t["size"] = e.size;
            t["model"] = e.model_id;
            t["last_access"] = e.last_access;
            t["pinned"] = e.pinned;
            tmap.push_back(std::move(t));
        }
        j["tensor_map"] = std::move(tmap);
        return j;
    }

private:
    double alpha_of(const std::string& model_id) const {
        auto it = model_alpha_.find(model_id);
        return it == model_alpha_.end() ? 1.0 : it->second;
    }

    void apply_plan(const AllocationPlan& plan, Seconds clock) {
        for (const auto& ev : plan.evictions) {
            auto it = tensors_.find(ev.tensor);
            regions_.release(it->second.offset);
            tensors_.erase(it);
            evictions_total_++;
        }
        for (const auto& mv : plan.relocations) {
            regions_.move(mv.from, mv.to);
            tensors_.at(mv.tensor).offset = mv.to;
            bytes_merged_total_ += mv.size;
        }
        for (const auto& pl : plan.placements) {
            regions_.allocate_at(pl.offset, pl.tensor.size, RegionKind::Tensor, pl.tensor.id, 0);
            tensors_.emplace(pl.tensor.id,
                             TensorEntry{pl.offset, pl.tensor.size, pl.tensor.model_id, clock,
                                         false});
        }
    }

    GpuSpec gpu_;
    RegionList regions_;
    std::unordered_map<TensorId, TensorEntry, TensorIdHash> tensors_;
    std::map<std::string, double> model_alpha_;
    Bytes kv_bytes_ = 0;
    Bytes pinned_tensor_bytes_ = 0;
    Bytes bytes_merged_total_ = 0;
    Bytes bytes_transferred_total_ = 0;
    std::uint64_t evictions_total_ = 0;
};

}  // namespace warmsim
