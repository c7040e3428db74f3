// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "warmsim/types.hpp"

namespace warmsim {

enum class RegionKind : std::uint8_t { Free, Tensor, KvBlock };

inline const char* to_string(RegionKind k) {
    switch (k) {
        case RegionKind::Free: return "free";
        case RegionKind::Tensor: return "tensor";
        case RegionKind::KvBlock: return "kv_block";
    }
    return "?";
}

/// A contiguous extent of the pool. Regions tile the pool exactly in
/// address order; no two Free regions are ever adjacent (eager coalescing).
struct Region {
    Bytes offset = 0;
    Bytes size = 0;
    RegionKind kind = RegionKind::Free;
    TensorId tensor;             // valid when kind == Tensor
    std::uint64_t block_id = 0;  // valid when kind == KvBlock
};

/// Address-ordered region chain plus a size-ordered index of free regions.
/// This is the single allocation substrate shared by the tensor allocator
/// and the KV block allocator.
class RegionList {
public:
    RegionList() = default;

    explicit RegionList(Bytes pool_size) : pool_size_(pool_size) {
        regions_.emplace(0, Region{0, pool_size, RegionKind::Free, {}, 0});
        free_index_.insert({pool_size, 0});
    }

    Bytes pool_size() const { return pool_size_; }

    Bytes free_total() const {
        Bytes t = 0;
        for (const auto& [size, off] : free_index_) t += size;
        return t;
    }

    Bytes largest_free() const {
        return free_index_.empty() ? 0 : free_index_.rbegin()->first;
    }

    std::size_t region_count() const { return regions_.size(); }

    /// Free regions in address order. Because of eager coalescing these are
    /// exactly the maximal free runs.
    std::vector<Region> free_runs() const {
        std::vector<Region> out;
        for (const auto& [off, r] : regions_)
            if (r.kind == RegionKind::Free) out.push_back(r);
        return out;
    }

    std::vector<Region> snapshot() const {
        std::vector<Region> out;
        out.reserve(regions_.size());
        for (const auto& [off, r] : regions_) out.push_back(r);
        return out;
    }

    const Region* find(Bytes offset) const {
        auto it = regions_.find(offset);
        return it == regions_.end() ? nullptr : &it->second;
    }

    /// Region containing the given address, if any.
    const Region* containing(Bytes addr) const {
        if (addr >= pool_size_) return nullptr;
        auto it = regions_.upper_bound(addr);
        --it;
        return &it->second;
    }

    /// Carve an allocated region of `size` at exactly `offset`. The target
    /// range must lie inside a single Free region.
    Result<Bytes> allocate_at(Bytes offset, Bytes size, RegionKind kind, TensorId tensor,
                              std::uint64_t block_id) {
        if (size == 0 || offset > pool_size_ || size > pool_size_ - offset)
            return Error::InvalidArgument;
        auto it = regions_.upper_bound(offset);
        if (it == regions_.begin()) return Error::InvalidArgument;
        --it;
        Region host = it->second;
        if (host.kind != RegionKind::Free) return Error::DestinationOccupied;
        if (offset + size > host.offset + host.size) return Error::DestinationOccupied;

        erase_region(it->first);
        const Bytes pre = offset - host.offset;
        const Bytes post = host.offset + host.size - (offset + size);
        if (pre > 0) insert_region(Region{host.offset, pre, RegionKind::Free, {}, 0});
        insert_region(Region{offset, size, kind, tensor, block_id});
        if (post > 0) insert_region(Region{offset + size, post, RegionKind::Free, {}, 0});
        return offset;
    }

    /// Best-fit allocation: smallest adequate free region, lowest offset on
    /// ties; the block takes the prefix of the chosen region.
    Result<Bytes> allocate_best_fit(Bytes size, RegionKind kind, TensorId tensor,
                                    std::uint64_t block_id) {
        if (size == 0) return Error::InvalidArgument;
        auto it = free_index_.lower_bound({size, 0});
        if (it == free_index_.end()) return Error::InsufficientMemory;
        return allocate_at(it->second, size, kind, tensor, block_id);
    }

    /// Return an allocated region to Free, coalescing with free neighbors.
    Status release(Bytes offset) {
        auto it = regions_.find(offset);
        if (it == regions_.end() || it->second.kind == RegionKind::Free) return Error::NotFound;
        Region r = it->second;
        erase_region(offset);

        Bytes start = r.offset;
        Bytes end = r.offset + r.size;
        // Coalesce with the previous region when free.
        auto prev = regions_.lower_bound(start);
        if (prev != regions_.begin()) {
            --prev;
            if (prev->second.kind == RegionKind::Free &&
                prev->second.offset + prev->second.size == start) {
                start = prev->second.offset;
                erase_region(prev->first);
            }
        }
        // Coalesce with the next region when free.
        auto next = regions_.find(end);
        if (next != regions_.end() && next->second.kind == RegionKind::Free) {
            end += next->second.size;
            erase_region(next->first);
        }
        insert_region(Region{start, end - start, RegionKind::Free, {}, 0});
        return ok_status();
    }

    /// Relocate an allocated region to `new_offset`. The destination must be
    /// disjoint from the source and currently free; sliding moves that reuse
    /// the vacated bytes are rejected.
    Status move(Bytes from, Bytes to) {
        auto it = regions_.find(from);
        if (it == regions_.end() || it->second.kind == RegionKind::Free) return Error::NotFound;
        const Region r = it->second;
        if (to == from) return Error::OverlapMove;
        if (to < from + r.size && from < to + r.size) return Error::OverlapMove;
        auto placed = allocate_at(to, r.size, r.kind, r.tensor, r.block_id);
        if (!placed) return placed.error();
        release(from);
        return ok_status();
    }

    /// True when [offset, offset+size) lies entirely inside one Free region.
    bool is_free_range(Bytes offset, Bytes size) const {
        const Region* r = containing(offset);
        return r && r->kind == RegionKind::Free && offset + size <= r->offset + r->size;
    }

    /// Rebuild from an address-ordered tiling snapshot (planner working copies).
    static RegionList from_snapshot(Bytes pool_size, const std::vector<Region>& regions) {
        RegionList out;
        out.pool_size_ = pool_size;
        for (const auto& r : regions) {
            out.regions_.emplace(r.offset, r);
            if (r.kind == RegionKind::Free) out.free_index_.insert({r.size, r.offset});
        }
        return out;
    }

    /// Full structural check: exact tiling of [0, pool_size), positive sizes,
    /// no adjacent free regions, free index consistent with the chain.
    Status validate() const {
        Bytes cursor = 0;
        bool prev_free = false;
        std::set<std::pair<Bytes, Bytes>> seen_free;
        for (const auto& [off, r] : regions_) {
            if (off != cursor || r.offset != off || r.size == 0) return Error::Infeasible;
            const bool is_free = r.kind == RegionKind::Free;
            if (is_free && prev_free) return Error::Infeasible;  // coalescing violated
            if (is_free) seen_free.insert({r.size, r.offset});
            prev_free = is_free;
            cursor += r.size;
        }
        if (cursor != pool_size_) return Error::Infeasible;
        if (seen_free != free_index_) return Error::Infeasible;
        return ok_status();
    }

private:
    void insert_region(const Region& r) {
        regions_.emplace(r.offset, r);
        if (r.kind == RegionKind::Free) free_index_.insert({r.size, r.offset});
    }

    void erase_region(Bytes offset) {
        auto it = regions_.find(offset);
        if (it == regions_.end()) return;
        if (it->second.kind == RegionKind::Free)
            free_index_.erase({it->second.size, it->second.offset});
        regions_.erase(it);
    }

    Bytes pool_size_ = 0;
    std::map<Bytes, Region> regions_;
    std::set<std::pair<Bytes, Bytes>> free_index_;  // (size, offset)
};

}  // namespace warmsim
