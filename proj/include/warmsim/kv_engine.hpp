// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-demand KV cache allocation: per-request block tables mapping logical
// to physical block numbers, a shared address table into the unified pool,
// and a LIFO free list that absorbs completed requests. Blocks are carved
// from the same region list as tensors; under memory pressure the allocator
// reclaims tensors from inactive models by eviction cost, never by merging.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "warmsim/model.hpp"
#include "warmsim/packing.hpp"
#include "warmsim/reuse_store.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

struct KvBlockTable {
    std::uint64_t request_id = 0;
    std::uint64_t block_size_tokens = 16;
    std::map<std::uint64_t, std::uint64_t> lbn_to_pbn;  // covers LBNs 0..ceil(tokens/bs)-1
    std::uint64_t token_count = 0;
};

struct KvAllocStats {
    std::uint64_t pool_invocations = 0;   // block-allocator dispatches (batch = one)
    std::uint64_t alloc_batches = 0;      // ensure/batch calls that allocated something
    std::uint64_t blocks_from_free_list = 0;
    std::uint64_t blocks_from_pool = 0;
    std::uint64_t reclaim_events = 0;
};

/// One engine per model instance. Shares the pool through the store's
/// single-writer discipline.
class KvEngine {
public:
    KvEngine() = default;

    KvEngine(std::string model_id, std::uint64_t block_size_tokens, Bytes bytes_per_token)
        : model_id_(std::move(model_id)),
          block_size_tokens_(block_size_tokens),
          block_bytes_(block_size_tokens * bytes_per_token) {}

    const std::string& model_id() const { return model_id_; }
    std::uint64_t block_size_tokens() const { return block_size_tokens_; }
    Bytes block_bytes() const { return block_bytes_; }
    const KvAllocStats& stats() const { return stats_; }
    std::size_t free_list_size() const { return free_list_.size(); }
    std::size_t active_requests() const { return tables_.size(); }

    const KvBlockTable* table(std::uint64_t request_id) const {
        auto it = tables_.find(request_id);
        return it == tables_.end() ? nullptr : &it->second;
    }

    const std::map<std::uint64_t, std::pair<Bytes, Bytes>>& address_table() const {
        return address_table_;
    }

    static std::uint64_t blocks_for(std::uint64_t tokens, std::uint64_t block_size) {
        return (tokens + block_size - 1) / block_size;
    }

    /// Grow a request's table to cover `new_token_count` tokens. New blocks
    /// come from the free list first, then from the pool (with urgent tensor
    /// reclaim as the last resort).
    Result<std::vector<std::uint64_t>> ensure_capacity(ReuseStore& store,
                                                       const ModelStatsTable& stats,
                                                       std::uint64_t request_id,
                                                       std::uint64_t new_token_count) {
        auto& table = tables_[request_id];
        if (table.lbn_to_pbn.empty()) {
            table.request_id = request_id;
            table.block_size_tokens = block_size_tokens_;
        }
        if (new_token_count < table.token_count) return Error::InvalidArgument;

        const std::uint64_t have = table.lbn_to_pbn.size();
        const std::uint64_t want = blocks_for(new_token_count, block_size_tokens_);
        std::vector<std::uint64_t> granted;
        bool touched_pool = false;
        for (std::uint64_t lbn = have; lbn < want; ++lbn) {
            auto pbn = acquire_block(store, stats, touched_pool);
            if (!pbn) return pbn.error();
            table.lbn_to_pbn[lbn] = pbn.value();
            granted.push_back(pbn.value());
        }
        table.token_count = new_token_count;
        if (!granted.empty()) {
            stats_.alloc_batches++;
            if (touched_pool) stats_.pool_invocations++;
        }
        return granted;
    }

    /// Batched form: end state identical to sequential ensure_capacity calls
    /// in request order, but the pool is dispatched at most once and a
    /// partial failure rolls the whole batch back.
    Result<std::vector<std::vector<std::uint64_t>>> batch_allocate(
        ReuseStore& store, const ModelStatsTable& stats,
        const std::vector<std::pair<std::uint64_t, std::uint64_t>>& requests) {
        std::uint64_t blocks_needed = 0;
        for (const auto& [rid, tokens] : requests) {
            auto it = tables_.find(rid);
            const std::uint64_t have = it == tables_.end() ? 0 : it->second.lbn_to_pbn.size();
            const std::uint64_t want = blocks_for(tokens, block_size_tokens_);
            if (want > have) blocks_needed += want - have;
        }

        std::vector<std::vector<std::uint64_t>> granted;
        if (blocks_needed == 0) {
            // No allocation, no pool dispatch; still advance token counts.
            for (const auto& [rid, tokens] : requests) {
                auto r = ensure_capacity(store, stats, rid, tokens);
                if (!r) return r.error();
                granted.push_back(std::move(r).value());
            }
            return granted;
        }

        const bool certainly_fits =
            free_list_.size() >= blocks_needed ||
            free_list_.size() + fittable_blocks(store) >= blocks_needed;
        if (certainly_fits) {
            const auto before = stats_;
            for (const auto& [rid, tokens] : requests) {
                auto r = ensure_capacity(store, stats, rid, tokens);
                if (!r) return r.error();  // cannot happen: capacity pre-checked
                granted.push_back(std::move(r).value());
            }
            stats_.alloc_batches = before.alloc_batches + 1;
            stats_.pool_invocations =
                before.pool_invocations + (stats_.pool_invocations > before.pool_invocations ? 1 : 0);
            return granted;
        }

        // Contended path: run on copies so a failure leaves no trace.
        ReuseStore store_copy = store;
        KvEngine engine_copy = *this;
        const auto before = stats_;
        for (const auto& [rid, tokens] : requests) {
            auto r = engine_copy.ensure_capacity(store_copy, stats, rid, tokens);
            if (!r) return r.error();
            granted.push_back(std::move(r).value());
        }
        engine_copy.stats_.alloc_batches = before.alloc_batches + 1;
        engine_copy.stats_.pool_invocations =
            before.pool_invocations +
            (engine_copy.stats_.pool_invocations > before.pool_invocations ? 1 : 0);
        store = std::move(store_copy);
        *this = std::move(engine_copy);
        return granted;
    }

    /// Return a completed request's blocks to the free list. Address table
    /// entries stay: the engine owns the blocks until instance teardown.
    Status release_request(std::uint64_t request_id) {
        auto it = tables_.find(request_id);
        if (it == tables_.end()) return Error::NotFound;
        for (const auto& [lbn, pbn] : it->second.lbn_to_pbn) free_list_.push_back(pbn);
        tables_.erase(it);
        return ok_status();
    }

    /// Reclaim every block region collectively at instance end.
    void instance_teardown(ReuseStore& store) {
        for (const auto& [pbn, extent] : address_table_) store.free_kv_region(extent.first);
        address_table_.clear();
        tables_.clear();
        free_list_.clear();
    }

    /// Evict inactive-model tensors in cost order until `needed_blocks`
    /// block-sized regions fit. No merging on this path.
    Status urgent_reclaim(ReuseStore& store, const ModelStatsTable& stats,
                          std::uint64_t needed_blocks) {
        auto candidates = store.eviction_candidates(stats, model_id_);
        std::sort(candidates.begin(), candidates.end(), eviction_order_less);
        std::size_t next = 0;
        while (fittable_blocks(store) < needed_blocks) {
            if (next >= candidates.size()) return Error::PoolExhausted;
            store.evict_tensor(candidates[next++].tensor);
        }
        stats_.reclaim_events++;
        return ok_status();
    }

private:
    std::uint64_t fittable_blocks(const ReuseStore& store) const {
        std::uint64_t n = 0;
        for (const auto& r : store.regions().free_runs()) n += r.size / block_bytes_;
        return n;
    }

    Result<std::uint64_t> acquire_block(ReuseStore& store, const ModelStatsTable& stats,
                                        bool& touched_pool) {
        if (!free_list_.empty()) {
            const std::uint64_t pbn = free_list_.back();
            free_list_.pop_back();
            stats_.blocks_from_free_list++;
            return pbn;
        }
        touched_pool = true;
        const std::uint64_t pbn = next_pbn_++;
        auto off = store.alloc_kv_region(block_bytes_, pbn);
        if (!off) {
            auto st = urgent_reclaim(store, stats, 1);
            if (!st.ok()) {
                next_pbn_--;
                return Error::PoolExhausted;
            }
            off = store.alloc_kv_region(block_bytes_, pbn);
            if (!off) {
                next_pbn_--;
                return Error::PoolExhausted;
            }
        }
        address_table_[pbn] = {off.value(), block_bytes_};
        stats_.blocks_from_pool++;
        return pbn;
    }

    std::string model_id_;
    std::uint64_t block_size_tokens_ = 16;
    Bytes block_bytes_ = 0;
    std::uint64_t next_pbn_ = 1;
    std::map<std::uint64_t, KvBlockTable> tables_;
    std::map<std::uint64_t, std::pair<Bytes, Bytes>> address_table_;  // pbn -> (offset, size)
    std::vector<std::uint64_t> free_list_;  // LIFO
    KvAllocStats stats_;
};

}  // namespace warmsim
