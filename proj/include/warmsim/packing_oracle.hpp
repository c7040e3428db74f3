// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact reference solver for small allocation instances, used by tests and
// the bench-packing command. Independent of the two-stage heuristic: it
// enumerates keep/evict/relocate assignments per resident tensor with
// branch-and-bound and decides placement feasibility by exhaustive
// two-dimensionless bin packing over the resulting free runs. Placement is a
// relaxation of the region mechanics (relocated tensors may land anywhere in
// the freed space), so its optimum lower-bounds every realizable plan.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <unordered_set>
#include <vector>

#include "warmsim/packing.hpp"
#include "warmsim/region_pool.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

struct OracleInstance {
    std::vector<Region> regions;
    std::vector<TensorSpec> new_tensors;
    std::vector<EvictionCandidate> candidates;  // evictable resident tensors
    std::unordered_set<TensorId, TensorIdHash> immovable;
    BytesPerSecond intra_copy_bandwidth = 1.0;
    bool allow_evictions = true;   // false: merge-only objective (relocations only)
    bool allow_relocations = true;
};

struct OracleResult {
    bool feasible = false;
    Seconds best_cost = 0;      // seconds, same objective as the heuristic
    Seconds eviction_cost = 0;
    Bytes merge_bytes = 0;
};

namespace oracle_detail {

inline bool pack_feasible(std::vector<Bytes> items, std::vector<Bytes> bins) {
    std::sort(items.begin(), items.end(), std::greater<>());
    std::sort(bins.begin(), bins.end(), std::greater<>());
    Bytes total_items = 0, total_bins = 0;
    for (auto s : items) total_items += s;
    for (auto b : bins) total_bins += b;
    if (total_items > total_bins) return false;
    if (!items.empty() && (bins.empty() || items.front() > bins.front())) return false;

    // Exhaustive DFS with identical-bin pruning; instances are tiny.
    std::vector<Bytes> caps = bins;
    std::function<bool(std::size_t)> rec = [&](std::size_t idx) -> bool {
        if (idx == items.size()) return true;
        const Bytes need = items[idx];
        Bytes tried = std::numeric_limits<Bytes>::max();
        for (std::size_t b = 0; b < caps.size(); ++b) {
            if (caps[b] < need || caps[b] == tried) continue;
            tried = caps[b];
            caps[b] -= need;
            if (rec(idx + 1)) { caps[b] += need; return true; }
            caps[b] += need;
        }
        return false;
    };
    return rec(0);
}

}  // namespace oracle_detail

/// Exact minimum of sum(c_j*y_j + m_j*z_j) over all feasible eviction /
/// relocation / placement combinations. InstanceTooLarge above 10 resident
/// or 6 new tensors.
inline Result<OracleResult> brute_force_oracle(const OracleInstance& inst) {
    struct Resident {
        Bytes offset = 0;
        Bytes size = 0;
        bool evictable = false;
        Seconds evict_cost = 0;
        Seconds move_cost = 0;
        bool movable = true;
    };

    std::vector<Resident> residents;
    std::vector<Region> fixed;  // free regions and immovable allocations
    for (const auto& r : inst.regions) {
        if (r.kind == RegionKind::Free) { fixed.push_back(r); continue; }
        const bool pinned =
            r.kind == RegionKind::KvBlock || (inst.immovable.count(r.tensor) != 0);
        if (pinned) { fixed.push_back(r); continue; }
        Resident res;
        res.offset = r.offset;
        res.size = r.size;
        res.movable = true;
        res.move_cost = static_cast<double>(r.size) / inst.intra_copy_bandwidth;
        for (const auto& c : inst.candidates) {
            if (c.tensor == r.tensor) {
                res.evictable = true;
                res.evict_cost = c.cost;
                break;
            }
        }
        residents.push_back(res);
    }
    if (residents.size() > 10 || inst.new_tensors.size() > 6) return Error::InstanceTooLarge;

    std::vector<Bytes> new_sizes;
    Bytes new_total = 0;
    for (const auto& t : inst.new_tensors) {
        new_sizes.push_back(t.size);
        new_total += t.size;
    }

    Bytes free0 = 0;
    for (const auto& r : inst.regions)
        if (r.kind == RegionKind::Free) free0 += r.size;

    OracleResult best;
    best.best_cost = std::numeric_limits<double>::infinity();

    enum Action : std::uint8_t { Keep, Evict, Relocate };
    std::vector<Action> action(residents.size(), Keep);

    auto evaluate_leaf = [&](Seconds cost, Seconds ecost, Bytes mbytes) {
        // Free runs: original free space plus extents of evicted and
        // relocated tensors, coalesced; kept residents stay as barriers.
        std::vector<std::pair<Bytes, Bytes>> holes;  // (offset, size)
        for (const auto& r : inst.regions)
            if (r.kind == RegionKind::Free) holes.push_back({r.offset, r.size});
        for (std::size_t i = 0; i < residents.size(); ++i)
            if (action[i] != Keep) holes.push_back({residents[i].offset, residents[i].size});
        std::sort(holes.begin(), holes.end());
        std::vector<Bytes> bins;
        Bytes prev_end = std::numeric_limits<Bytes>::max();
        for (const auto& [off, size] : holes) {
            if (!bins.empty() && prev_end == off) bins.back() += size;
            else bins.push_back(size);
            prev_end = off + size;
        }
        std::vector<Bytes> items = new_sizes;
        for (std::size_t i = 0; i < residents.size(); ++i)
            if (action[i] == Relocate) items.push_back(residents[i].size);
        if (!oracle_detail::pack_feasible(items, bins)) return;
        if (cost < best.best_cost) {
            best.feasible = true;
            best.best_cost = cost;
            best.eviction_cost = ecost;
            best.merge_bytes = mbytes;
        }
    };

    std::function<void(std::size_t, Seconds, Seconds, Bytes, Bytes)> rec =
        [&](std::size_t i, Seconds cost, Seconds ecost, Bytes mbytes, Bytes evicted_bytes) {
            if (cost >= best.best_cost) return;
            if (i == residents.size()) {
                if (new_total > free0 + evicted_bytes) return;  // Eq-1 capacity constraint
                evaluate_leaf(cost, ecost, mbytes);
                return;
            }
            const Resident& r = residents[i];
            action[i] = Keep;
            rec(i + 1, cost, ecost, mbytes, evicted_bytes);
            if (inst.allow_evictions && r.evictable) {
                action[i] = Evict;
                rec(i + 1, cost + r.evict_cost, ecost + r.evict_cost, mbytes,
                    evicted_bytes + r.size);
            }
            if (inst.allow_relocations && r.movable) {
                action[i] = Relocate;
                rec(i + 1, cost + r.move_cost, ecost, mbytes + r.size, evicted_bytes);
            }
            action[i] = Keep;
        };
    rec(0, 0.0, 0.0, 0, 0);

    return best;
}

}  // namespace warmsim
