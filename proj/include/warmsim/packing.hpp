// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage allocation planning for the unified memory pool.
//
// Stage 1 frees capacity by evicting resident tensors in ascending-cost
// order. Stage 2 (partitioned-gain packing) fits the new tensors into the
// free regions, recursively splitting the working space at allocated
// regions ("partition points") so that those regions never have to move;
// whatever cannot be saved that way is compacted. The planner is pure: it
// works on a region snapshot and emits an ordered plan (evictions, then
// relocations, then placements) that the store replays.

#pragma once

#include <algorithm>
#include <cassert>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "warmsim/model.hpp"
#include "warmsim/region_pool.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

struct EvictionCandidate {
    TensorId tensor;
    Bytes size = 0;        // s'_j
    Seconds cost = 0;      // c_j = p_m * (s'_j / b_m) * alpha_m
    Seconds last_access = 0;
    std::string model_id;
};

/// Cost ascending, then size descending (free more per eviction), then
/// last access ascending; tensor id as the final total-order tie break.
inline bool eviction_order_less(const EvictionCandidate& a, const EvictionCandidate& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.size != b.size) return a.size > b.size;
    if (a.last_access != b.last_access) return a.last_access < b.last_access;
    return a.tensor < b.tensor;
}

/// Stage 1: greedy prefix of the cost-ordered candidates whose freed bytes
/// close the gap between `free_now` and `needed`. Empty when already
/// sufficient; Infeasible when even evicting everything is not enough.
inline Result<std::vector<EvictionCandidate>> minimal_cost_eviction(
    Bytes needed, std::vector<EvictionCandidate> candidates, Bytes free_now) {
    std::vector<EvictionCandidate> chosen;
    if (needed <= free_now) return chosen;
    std::sort(candidates.begin(), candidates.end(), eviction_order_less);
    Bytes freed = 0;
    for (const auto& c : candidates) {
        if (free_now + freed >= needed) break;
        chosen.push_back(c);
        freed += c.size;
    }
    if (free_now + freed < needed) return Error::Infeasible;
    return chosen;
}

/// A consecutive run of regions beginning and ending with a free region.
/// capacity = total free bytes inside; max merge cost = total allocated.
struct Subspace {
    std::vector<Region> regions;
    Bytes capacity = 0;
    Bytes max_merge_cost = 0;

    static Subspace from_regions(std::vector<Region> regs) {
        Subspace s;
        s.regions = std::move(regs);
        for (const auto& r : s.regions) {
            if (r.kind == RegionKind::Free) s.capacity += r.size;
            else s.max_merge_cost += r.size;
        }
        return s;
    }

    Bytes start() const { return regions.front().offset; }
    Bytes end() const { return regions.back().offset + regions.back().size; }
};

/// The TryPacking guard semantics. Functional follows the prose (a tensor
/// fails only when it does not fit the bin the greedy rule picks for it);
/// LiteralGuard reproduces the pseudocode test `size >= min(C1, C2)`, which
/// also rejects tensors that would still fit the larger bin.
enum class PackingStrictness : std::uint8_t { Functional, LiteralGuard };

struct TryPackingResult {
    bool success = false;
    std::vector<TensorSpec> first;
    std::vector<TensorSpec> second;
};

/// Best-fit-decreasing over two bins: each tensor goes to the subspace with
/// the larger remaining capacity at its turn (ties to the first). The input
/// order (size descending, sorted once globally) is preserved in the outputs.
inline TryPackingResult try_packing(const std::vector<TensorSpec>& tensors, Bytes capacity1,
                                    Bytes capacity2,
                                    PackingStrictness strictness = PackingStrictness::Functional) {
    TryPackingResult out;
    Bytes c1 = capacity1, c2 = capacity2;
    for (const auto& t : tensors) {
        if (strictness == PackingStrictness::LiteralGuard && t.size >= std::min(c1, c2))
            return out;  // failure
        if (c1 >= c2) {
            if (t.size > c1) return TryPackingResult{};
            out.first.push_back(t);
            c1 -= t.size;
        } else {
            if (t.size > c2) return TryPackingResult{};
            out.second.push_back(t);
            c2 -= t.size;
        }
    }
    out.success = true;
    return out;
}

enum class MergePolicy : std::uint8_t { PartitionedGain, GlobalMerge };

struct PackedSubspace {
    Subspace subspace;
    std::vector<TensorSpec> tensors;
};

struct PgpResult {
    std::vector<PackedSubspace> allocation;  // finalized subspace/tensor pairs
    Bytes merge_cost = 0;                    // Alg-1 bookkeeping value
    Bytes initial_merge_cost = 0;
    std::vector<Bytes> accepted_gains;
};

namespace detail {

struct PartitionRun {
    std::size_t first = 0;  // region index range [first, last] within the subspace
    std::size_t last = 0;
    Bytes size = 0;
    Bytes offset = 0;
};

// Maximal runs of adjacent allocated regions. A run is one partition point:
// splitting there keeps both children delimited by free regions, and the
// gain is the whole run since none of it has to move afterwards.
inline std::vector<PartitionRun> partition_runs(const Subspace& s) {
    std::vector<PartitionRun> runs;
    const auto& regs = s.regions;
    for (std::size_t i = 0; i < regs.size();) {
        if (regs[i].kind == RegionKind::Free) { ++i; continue; }
        PartitionRun run{i, i, 0, regs[i].offset};
        while (run.last + 1 < regs.size() && regs[run.last + 1].kind != RegionKind::Free)
            ++run.last;
        for (std::size_t k = run.first; k <= run.last; ++k) run.size += regs[k].size;
        runs.push_back(run);
        i = run.last + 1;
    }
    // Try larger gains first, first success wins.
    std::sort(runs.begin(), runs.end(), [](const PartitionRun& a, const PartitionRun& b) {
        if (a.size != b.size) return a.size > b.size;
        return a.offset < b.offset;
    });
    return runs;
}

}  // namespace detail

/// Algorithm: start from the merge-all worst case (merge cost = all allocated
/// bytes in the roots), then repeatedly split pending subspaces at partition
/// runs whenever TryPacking can divide the pending tensors between the two
/// children; every accepted split deducts the run size from the merge cost.
/// Subspaces that cannot split are finalized. An empty tensor set always
/// splits, so tensor-less subspaces decompose completely and their allocated
/// regions never count toward the final merge cost.
inline PgpResult partitioned_gain_packing(std::vector<PackedSubspace> roots,
                                          PackingStrictness strictness,
                                          MergePolicy policy = MergePolicy::PartitionedGain) {
    PgpResult res;
    for (const auto& r : roots) res.initial_merge_cost += r.subspace.max_merge_cost;
    res.merge_cost = res.initial_merge_cost;

    std::deque<PackedSubspace> pending(roots.begin(), roots.end());
    while (!pending.empty()) {
        PackedSubspace cur = std::move(pending.front());
        pending.pop_front();

        bool split_occurred = false;
        if (policy == MergePolicy::PartitionedGain) {
            for (const auto& run : detail::partition_runs(cur.subspace)) {
                std::vector<Region> left(cur.subspace.regions.begin(),
                                         cur.subspace.regions.begin() + run.first);
                std::vector<Region> right(cur.subspace.regions.begin() + run.last + 1,
                                          cur.subspace.regions.end());
                Subspace p1 = Subspace::from_regions(std::move(left));
                Subspace p2 = Subspace::from_regions(std::move(right));
                auto packed = try_packing(cur.tensors, p1.capacity, p2.capacity, strictness);
                if (!packed.success) continue;
                res.merge_cost -= run.size;
                res.accepted_gains.push_back(run.size);
                pending.push_back({std::move(p1), std::move(packed.first)});
                pending.push_back({std::move(p2), std::move(packed.second)});
                split_occurred = true;
                break;
            }
        }
        if (!split_occurred) res.allocation.push_back(std::move(cur));
    }
    return res;
}

struct Relocation {
    TensorId tensor;
    Bytes from = 0;
    Bytes to = 0;
    Bytes size = 0;
};

struct Placement {
    TensorSpec tensor;
    Bytes offset = 0;
};

/// Output of the two-stage heuristic: disjoint eviction/relocation sets plus
/// one placement per requested tensor, replayable in order (evictions, then
/// relocations, then placements) on the input pool.
struct AllocationPlan {
    std::vector<EvictionCandidate> evictions;
    std::vector<Relocation> relocations;
    std::vector<Placement> placements;
    Seconds total_eviction_cost = 0;
    Bytes total_merge_cost = 0;   // bytes actually relocated
    Bytes pgp_merge_cost = 0;     // Alg-1 bookkeeping value (== total unless fallback)
    Bytes initial_merge_cost = 0;
    std::size_t fallback_evictions = 0;

    Seconds objective_seconds(BytesPerSecond intra_copy_bandwidth) const {
        return total_eviction_cost +
               static_cast<double>(total_merge_cost) / intra_copy_bandwidth;
    }
};

struct PlanRequest {
    std::vector<Region> regions;           // address-ordered pool snapshot
    std::vector<TensorSpec> new_tensors;   // tensors to place
    std::vector<EvictionCandidate> candidates;  // evictable residents, any order
    std::unordered_set<TensorId, TensorIdHash> immovable;  // pinned tensors
    PackingStrictness strictness = PackingStrictness::Functional;
    MergePolicy merge_policy = MergePolicy::PartitionedGain;
    bool randomize_eviction = false;       // candidates taken in given order instead of by cost
};

namespace detail {

inline bool is_movable(const Region& r,
                       const std::unordered_set<TensorId, TensorIdHash>& immovable) {
    return r.kind == RegionKind::Tensor && !immovable.count(r.tensor);
}

// Root subspaces: the working extent spans from the first to the last free
// region; immovable regions split it into independent segments, each trimmed
// to begin and end with a free region.
inline std::vector<Subspace> build_roots(const RegionList& work,
                                         const std::unordered_set<TensorId, TensorIdHash>& immovable) {
    auto regs = work.snapshot();
    std::vector<Subspace> roots;
    std::vector<Region> seg;
    auto flush = [&] {
        while (!seg.empty() && seg.front().kind != RegionKind::Free) seg.erase(seg.begin());
        while (!seg.empty() && seg.back().kind != RegionKind::Free) seg.pop_back();
        if (!seg.empty()) roots.push_back(Subspace::from_regions(seg));
        seg.clear();
    };
    for (const auto& r : regs) {
        const bool barrier = (r.kind == RegionKind::KvBlock) ||
                             (r.kind == RegionKind::Tensor && immovable.count(r.tensor));
        if (barrier) flush();
        else seg.push_back(r);
    }
    flush();
    return roots;
}

// Assign tensors across root subspaces: size-descending, each to the root
// with the largest remaining capacity. With a single root this always
// succeeds when total capacity suffices.
inline bool distribute_over_roots(const std::vector<TensorSpec>& tensors,
                                  std::vector<PackedSubspace>& roots) {
    std::vector<Bytes> remaining;
    remaining.reserve(roots.size());
    for (const auto& r : roots) remaining.push_back(r.subspace.capacity);
    for (const auto& t : tensors) {
        std::size_t best = roots.size();
        for (std::size_t i = 0; i < roots.size(); ++i)
            if (best == roots.size() || remaining[i] > remaining[best]) best = i;
        if (best == roots.size() || remaining[best] < t.size) return false;
        roots[best].tensors.push_back(t);
        remaining[best] -= t.size;
    }
    return true;
}

}  // namespace detail

/// Full two-stage planner. Pure: `request.regions` is the input snapshot and
/// the returned plan replays on it without further decisions.
inline Result<AllocationPlan> plan_allocation(const PlanRequest& request) {
    AllocationPlan plan;
    if (request.new_tensors.empty()) return plan;

    Bytes pool_size = 0;
    for (const auto& r : request.regions) pool_size = std::max(pool_size, r.offset + r.size);
    RegionList work = RegionList::from_snapshot(pool_size, request.regions);

    Bytes needed = 0;
    for (const auto& t : request.new_tensors) needed += t.size;

    // Stage 1: free enough capacity, cheapest evictions first.
    std::vector<EvictionCandidate> order = request.candidates;
    if (!request.randomize_eviction)
        std::sort(order.begin(), order.end(), eviction_order_less);
    std::unordered_map<TensorId, Bytes, TensorIdHash> candidate_offset;
    std::unordered_map<TensorId, const EvictionCandidate*, TensorIdHash> candidate_by_id;
    for (const auto& r : request.regions)
        if (r.kind == RegionKind::Tensor) candidate_offset.emplace(r.tensor, r.offset);
    for (const auto& c : order) candidate_by_id.emplace(c.tensor, &c);

    std::size_t next_candidate = 0;
    std::unordered_set<TensorId, TensorIdHash> evicted;
    auto evict_next = [&]() -> bool {
        while (next_candidate < order.size()) {
            const auto& c = order[next_candidate++];
            if (evicted.count(c.tensor)) continue;
            auto off = candidate_offset.find(c.tensor);
            if (off == candidate_offset.end()) continue;
            work.release(off->second);
            evicted.insert(c.tensor);
            plan.evictions.push_back(c);
            plan.total_eviction_cost += c.cost;
            return true;
        }
        return false;
    };
    while (work.free_total() < needed)
        if (!evict_next()) return Error::InsufficientMemory;

    // Stage 2 with a retry loop: if the free space is split by immovable
    // barriers and the tensors cannot be distributed over the resulting
    // roots, evict one more candidate and try again.
    std::vector<TensorSpec> sorted = request.new_tensors;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const TensorSpec& a, const TensorSpec& b) { return a.size > b.size; });

    std::vector<PackedSubspace> packed_roots;
    for (;;) {
        std::vector<PackedSubspace> roots;
        for (auto& s : detail::build_roots(work, request.immovable))
            roots.push_back({std::move(s), {}});
        if (!roots.empty() && detail::distribute_over_roots(sorted, roots)) {
            packed_roots = std::move(roots);
            break;
        }
        if (!evict_next()) return Error::InsufficientMemory;
    }

    PgpResult pgp = partitioned_gain_packing(std::move(packed_roots), request.strictness,
                                             request.merge_policy);
    plan.pgp_merge_cost = pgp.merge_cost;
    plan.initial_merge_cost = pgp.initial_merge_cost;

    // Compose concrete relocations and placements, subspace by subspace.
    // Allocated regions inside a finalized subspace are packed toward its
    // edges (destination always in currently-free space, so moves never
    // overlap their source); the freed middle then hosts the new tensors.
    for (const auto& pair : pgp.allocation) {
        const Subspace& sub = pair.subspace;
        const Bytes sub_start = sub.start();
        const Bytes sub_end = sub.end();

        std::vector<Region> inside;
        for (const auto& r : sub.regions)
            if (r.kind != RegionKind::Free) inside.push_back(r);

        // Free bytes strictly after each allocated region within the
        // subspace, on the original layout; decides the packing side.
        std::vector<Bytes> free_after(inside.size(), 0);
        {
            Bytes acc = 0;
            std::size_t j = inside.size();
            for (auto it = sub.regions.rbegin(); it != sub.regions.rend(); ++it) {
                if (it->kind == RegionKind::Free) acc += it->size;
                else free_after[--j] = acc;
            }
        }

        auto fallback_evict = [&](const Region& r) -> Status {
            auto c = candidate_by_id.find(r.tensor);
            if (c == candidate_by_id.end() || evicted.count(r.tensor))
                return Error::Infeasible;  // cannot move it, cannot evict it
            work.release(r.offset);
            evicted.insert(r.tensor);
            plan.evictions.push_back(*c->second);
            plan.total_eviction_cost += c->second->cost;
            plan.fallback_evictions++;
            return ok_status();
        };

        std::vector<std::size_t> to_right, to_left;
        for (std::size_t i = 0; i < inside.size(); ++i) {
            if (inside[i].size <= free_after[i]) to_right.push_back(i);
            else to_left.push_back(i);
        }

        Bytes fill_right = 0;
        std::vector<std::size_t> retry_left;
        for (auto it = to_right.rbegin(); it != to_right.rend(); ++it) {
            const Region& r = inside[*it];
            const Bytes dest = sub_end - fill_right - r.size;
            if (work.is_free_range(dest, r.size)) {
                work.move(r.offset, dest);
                plan.relocations.push_back({r.tensor, r.offset, dest, r.size});
                plan.total_merge_cost += r.size;
                fill_right += r.size;
            } else {
                retry_left.push_back(*it);
            }
        }
        for (auto i : retry_left) to_left.push_back(i);
        std::sort(to_left.begin(), to_left.end());

        Bytes fill_left = 0;
        for (auto i : to_left) {
            const Region& r = inside[i];
            const Bytes dest = sub_start + fill_left;
            if (work.is_free_range(dest, r.size)) {
                work.move(r.offset, dest);
                plan.relocations.push_back({r.tensor, r.offset, dest, r.size});
                plan.total_merge_cost += r.size;
                fill_left += r.size;
            } else {
                const Bytes rdest = sub_end - fill_right - r.size;
                if (rdest >= sub_start && work.is_free_range(rdest, r.size)) {
                    work.move(r.offset, rdest);
                    plan.relocations.push_back({r.tensor, r.offset, rdest, r.size});
                    plan.total_merge_cost += r.size;
                    fill_right += r.size;
                } else {
                    auto st = fallback_evict(r);
                    if (!st.ok()) return st.error();
                }
            }
        }

        // Place this subspace's tensors: smallest adequate free run inside
        // the subspace extent, lowest offset on ties.
        for (const auto& t : pair.tensors) {
            Bytes best_off = 0, best_size = 0;
            bool found = false;
            for (const auto& fr : work.free_runs()) {
                const Bytes lo = std::max(fr.offset, sub_start);
                const Bytes hi = std::min(fr.offset + fr.size, sub_end);
                if (hi <= lo || hi - lo < t.size) continue;
                if (!found || hi - lo < best_size) {
                    found = true;
                    best_off = lo;
                    best_size = hi - lo;
                }
            }
            if (!found) return Error::Infeasible;  // compaction guarantees this never fires
            auto placed = work.allocate_at(best_off, t.size, RegionKind::Tensor, t.id, 0);
            assert(placed.ok());
            (void)placed;
            plan.placements.push_back({t, best_off});
        }
    }

    assert(plan.placements.size() == request.new_tensors.size());
    return plan;
}

}  // namespace warmsim
