// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic discrete-event simulation of a serverless LLM cluster:
// controller with a global queue, one worker pool per GPU, the four-phase
// cold start (init / load / profile / prefill), batched decode with
// on-demand KV growth, keep-alive, and per-request TTFT accounting.
//
// Modes:
//   Baseline  - tensors evicted at instance termination, KV pre-reserved.
//   Reuse     - tensors retained across instances, KV pre-reserved.
//   ReuseOdkv - tensors retained, KV blocks allocated on demand.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "warmsim/catalog.hpp"
#include "warmsim/kv_engine.hpp"
#include "warmsim/model.hpp"
#include "warmsim/reuse_store.hpp"
#include "warmsim/rng.hpp"
#include "warmsim/scheduler.hpp"
#include "warmsim/workload.hpp"

namespace warmsim {

enum class SimMode : std::uint8_t { Baseline, Reuse, ReuseOdkv };

inline const char* to_string(SimMode m) {
    switch (m) {
        case SimMode::Baseline: return "baseline";
        case SimMode::Reuse: return "reuse";
        case SimMode::ReuseOdkv: return "reuse_odkv";
    }
    return "?";
}

inline SimMode sim_mode_from_string(const std::string& s) {
    if (s == "baseline") return SimMode::Baseline;
    if (s == "reuse") return SimMode::Reuse;
    if (s == "reuse_odkv") return SimMode::ReuseOdkv;
    throw ConfigError("unknown mode: " + s);
}

enum class EvictionSelection : std::uint8_t { MinCost, Random };

struct DecodeRates {
    double small = 600;  // tokens/s, models up to ~3.5B parameters
    double mid = 480;    // up to ~13.5B
    double large = 230;

    double rate_for(Bytes total_size) const {
        const double params = static_cast<double>(total_size) / 2.0;
        if (params <= 3.5e9) return small;
        if (params <= 13.5e9) return mid;
        return large;
    }
};

struct SimConfig {
    std::vector<GpuSpec> gpus;
    Seconds init_latency = 0.5;
    Seconds profile_latency = 0.2;
    Seconds prefill_base = 0.1;
    Seconds prefill_per_token = 0.0005;
    Seconds plan_compute_latency = 0.0005;
    DecodeRates decode_rates;
    Seconds keep_alive = 240.0;
    std::uint32_t batch_size = 1;
    SimMode mode = SimMode::Reuse;
    EvictionSelection eviction = EvictionSelection::MinCost;
    MergePolicy merge = MergePolicy::PartitionedGain;
    PackingStrictness strictness = PackingStrictness::Functional;
    Seconds rpc_snapshot_latency = 0.002;
    std::uint64_t block_size_tokens = 16;
    std::uint64_t max_seq_len = 8192;
    Seconds odkv_alloc_overhead = 50e-6;  // per allocation batch
    Seconds timeseries_dt = 0.5;
    bool emit_timeseries = false;
    bool emit_alloc_log = false;
    bool emit_sched_log = false;
    std::uint64_t seed = 1;
};

struct RequestRecord {
    std::uint64_t request_id = 0;
    std::string model_id;
    std::string gpu_id;
    std::string dataset;
    Seconds t_arrival = 0;
    Seconds t_scheduled = 0;
    Seconds queued_time = 0;
    Seconds t_init = 0;
    Seconds t_load = 0;
    Seconds t_profile = 0;
    Seconds t_prefill = 0;
    Seconds ttft = 0;
    Seconds t_complete = 0;
    Bytes bytes_transferred = 0;
    Bytes bytes_merged = 0;
    bool cold_start = false;
};

struct TimeSample {
    Seconds t = 0;
    Bytes reusable = 0;
    Bytes free_bytes = 0;
    Bytes kv_bytes = 0;
    double utilization = 0;
};

struct AllocLogRow {
    Seconds t = 0;
    std::uint64_t request_id = 0;
    std::uint64_t blocks = 0;
    std::string source;  // free_list | pool | reclaim
};

struct Aggregates {
    double mean_ttft = 0;
    double p99_ttft = 0;
    double mean_load = 0;
    double mean_queued = 0;
    double mean_init = 0;
    double mean_profile = 0;
    double mean_prefill = 0;
    Bytes total_bytes_transferred = 0;
    Bytes total_bytes_merged = 0;
    double mean_pool_utilization = 0;
    std::uint64_t cold_starts = 0;
    std::uint64_t warm_joins = 0;
};

struct RunMetrics {
    std::vector<RequestRecord> records;
    Aggregates aggregates;
    std::vector<TimeSample> timeseries;
    std::vector<AllocLogRow> alloc_log;
    std::vector<nlohmann::json> sched_log;
    Seconds makespan = 0;
    std::uint64_t deferral_events = 0;
    std::uint64_t evictions = 0;
    std::uint64_t early_terminations = 0;
    KvAllocStats kv;
    Seconds odkv_overhead_total = 0;
    // Load-phase breakdown across all cold starts.
    Seconds load_compute_total = 0;   // planning
    Seconds load_merge_total = 0;     // intra-GPU copies
    Seconds load_transfer_total = 0;  // host-to-GPU transfers
};

/// Aggregates are a pure fold over the record list (plus the sampled
/// utilization series); tests recompute them from the records.
inline Aggregates aggregates_from_records(const std::vector<RequestRecord>& records,
                                          const std::vector<TimeSample>& series) {
    Aggregates a;
    if (!records.empty()) {
        std::vector<double> ttfts;
        for (const auto& r : records) {
            a.mean_ttft += r.ttft;
            a.mean_load += r.t_load;
            a.mean_queued += r.queued_time;
            a.mean_init += r.t_init;
            a.mean_profile += r.t_profile;
            a.mean_prefill += r.t_prefill;
            a.total_bytes_transferred += r.bytes_transferred;
            a.total_bytes_merged += r.bytes_merged;
            if (r.cold_start) a.cold_starts++;
            else a.warm_joins++;
            ttfts.push_back(r.ttft);
        }
        const double n = static_cast<double>(records.size());
        a.mean_ttft /= n;
        a.mean_load /= n;
        a.mean_queued /= n;
        a.mean_init /= n;
        a.mean_profile /= n;
        a.mean_prefill /= n;
        std::sort(ttfts.begin(), ttfts.end());
        const std::size_t rank = static_cast<std::size_t>(
            std::ceil(0.99 * static_cast<double>(ttfts.size())));
        a.p99_ttft = ttfts[std::max<std::size_t>(rank, 1) - 1];
    }
    if (!series.empty()) {
        for (const auto& s : series) a.mean_pool_utilization += s.utilization;
        a.mean_pool_utilization /= static_cast<double>(series.size());
    }
    return a;
}

class Simulator {
public:
    Simulator(SimConfig config, std::vector<ModelSpec> catalog)
        : cfg_(std::move(config)), registry_(make_registry(catalog)), rng_(cfg_.seed) {
        if (cfg_.gpus.empty()) throw ConfigError("sim: no GPUs configured");
        if (cfg_.batch_size == 0) throw ConfigError("sim: zero batch size");
        if (cfg_.block_size_tokens == 0) throw ConfigError("sim: zero block size");
        SchedulerConfig sched{cfg_.batch_size, cfg_.block_size_tokens};
        for (const auto& g : cfg_.gpus) {
            if (g.pcie_bandwidth <= 0 || g.intra_copy_bandwidth <= 0 || g.store_bandwidth <= 0)
                throw ConfigError("sim: nonpositive bandwidth on " + g.gpu_id);
            gpus_.push_back(Gpu{g, ReuseStore(g), std::nullopt, 0});
        }
        for (const auto& [id, m] : registry_) {
            bool fits = false;
            for (const auto& g : cfg_.gpus) {
                GpuSnapshot snap{g.gpu_id, true, g.pool_size, g.pool_size, {},
                                 g.pcie_bandwidth, g.store_bandwidth};
                if (can_run(m, snap, sched.kv_headroom(m))) fits = true;
            }
            if (!fits)
                throw ConfigError("model " + id + " cannot run on any configured GPU");
        }
    }

    RunMetrics run(const Trace& trace) {
        for (const auto& r : trace.requests) {
            if (!registry_.count(r.model_id))
                throw ConfigError("trace references unknown model: " + r.model_id);
        }
        requests_ = trace.requests;
        records_.assign(requests_.size(), RequestRecord{});
        for (std::size_t i = 0; i < requests_.size(); ++i) {
            records_[i].request_id = requests_[i].request_id;
            records_[i].model_id = requests_[i].model_id;
            records_[i].dataset = requests_[i].dataset;
            records_[i].t_arrival = requests_[i].arrival_time;
        }
        for (std::size_t i = 0; i < requests_.size(); ++i)
            push_event(requests_[i].arrival_time, EventKind::Arrival, 0, i, 0);

        while (!events_.empty()) {
            Event ev = events_.top();
            events_.pop();
            sample_until(ev.t);
            now_ = ev.t;
            dispatch(ev);
        }
        sample_until(now_);
        if (!pending_.empty())
            throw ConfigError("simulation ended with unserved requests");  // cannot happen

        RunMetrics m;
        m.records = records_;
        m.timeseries = std::move(samples_);
        m.aggregates = aggregates_from_records(m.records, m.timeseries);
        m.makespan = now_;
        m.deferral_events = deferral_events_;
        m.early_terminations = early_terminations_;
        for (const auto& g : gpus_) m.evictions += g.store.evictions_total();
        m.kv = kv_totals_;
        m.odkv_overhead_total = odkv_overhead_total_;
        m.alloc_log = std::move(alloc_log_);
        m.sched_log = std::move(sched_log_);
        m.load_compute_total = load_compute_total_;
        m.load_merge_total = load_merge_total_;
        m.load_transfer_total = load_transfer_total_;
        if (!cfg_.emit_timeseries) m.timeseries.clear();
        return m;
    }

private:
    enum class EventKind : std::uint8_t {
        Arrival,
        ScheduleKick,
        PhaseAdvance,  // a = instance generation, b = stage (0 init done, 1 load done, 2 profile done)
        PrefillDone,   // a = generation, b = lane
        BlockCross,    // a = generation, b = lane, c = token target
        DecodeDone,    // a = generation, b = lane
        IdleTimeout,   // a = generation
    };

    struct Event {
        Seconds t;
        std::uint64_t seq;
        EventKind kind;
        std::uint32_t gpu;
        std::uint64_t a, b, c;
        bool operator>(const Event& o) const { return std::tie(t, seq) > std::tie(o.t, o.seq); }
    };

    struct Instance {
        std::string model_id;
        std::uint64_t gen = 0;
        int phase = 0;  // 0 init, 1 load, 2 profile, 3 active
        std::vector<std::optional<std::size_t>> lanes;
        std::deque<std::size_t> queue;
        bool idle = false;
        Seconds idle_since = 0;
        std::uint64_t idle_gen = 0;
        std::size_t trigger = 0;
        KvEngine kv;
        std::vector<Bytes> reservation;
        std::size_t busy_lanes = 0;
    };

    struct Gpu {
        GpuSpec spec;
        ReuseStore store;
        std::optional<Instance> inst;
        std::uint64_t gen_counter = 0;
    };

    void push_event(Seconds t, EventKind kind, std::uint32_t gpu, std::uint64_t a, std::uint64_t b,
                    std::uint64_t c = 0) {
        events_.push(Event{t, seq_++, kind, gpu, a, b, c});
    }

    void dispatch(const Event& ev) {
        switch (ev.kind) {
            case EventKind::Arrival: on_arrival(ev.a); break;
            case EventKind::ScheduleKick: schedule_pass(); break;
            case EventKind::PhaseAdvance: on_phase(ev.gpu, ev.a, ev.b); break;
            case EventKind::PrefillDone: on_prefill_done(ev.gpu, ev.a, ev.b); break;
            case EventKind::BlockCross: on_block_cross(ev.gpu, ev.a, ev.b, ev.c); break;
            case EventKind::DecodeDone: on_decode_done(ev.gpu, ev.a, ev.b); break;
            case EventKind::IdleTimeout: on_idle_timeout(ev.gpu, ev.a); break;
        }
    }

    // ---- arrival & scheduling -------------------------------------------

    void on_arrival(std::size_t req_idx) {
        const auto& req = requests_[req_idx];
        stats_.record_request(req.model_id, now_);
        if (std::optional<std::size_t> g = instance_of(req.model_id)) {
            join_instance(*g, req_idx);
        } else {
            pending_.push_back(req_idx);
            push_event(now_, EventKind::ScheduleKick, 0, 0, 0);
        }
    }

    std::optional<std::size_t> instance_of(const std::string& model_id) const {
        for (std::size_t g = 0; g < gpus_.size(); ++g)
            if (gpus_[g].inst && gpus_[g].inst->model_id == model_id) return g;
        return std::nullopt;
    }

    void join_instance(std::size_t g, std::size_t req_idx) {
        Instance& inst = *gpus_[g].inst;
        if (inst.idle) {
            inst.idle = false;
            inst.idle_gen++;
        }
        if (inst.phase == 3) {
            if (auto lane = free_lane(inst)) {
                start_prefill(g, *lane, req_idx);
                return;
            }
        }
        inst.queue.push_back(req_idx);
    }

    std::optional<std::size_t> free_lane(const Instance& inst) const {
        for (std::size_t l = 0; l < inst.lanes.size(); ++l)
            if (!inst.lanes[l]) return l;
        return std::nullopt;
    }

    std::vector<GpuSnapshot> snapshots(const std::vector<std::string>& models) const {
        std::vector<GpuSnapshot> out;
        for (const auto& g : gpus_) {
            GpuSnapshot s;
            s.gpu_id = g.spec.gpu_id;
            s.available = !g.inst.has_value();
            s.pool_size = g.spec.pool_size;
            s.free_bytes = g.store.free_bytes();
            s.pcie_bandwidth = g.spec.pcie_bandwidth;
            s.store_bandwidth = g.spec.store_bandwidth;
            for (const auto& m : models)
                s.reuse_size_by_model[m] = g.store.reuse_size(registry_.at(m));
            out.push_back(std::move(s));
        }
        return out;
    }

    void schedule_pass() {
        const SchedulerConfig sched{cfg_.batch_size, cfg_.block_size_tokens};
        for (;;) {
            // Requests whose model got an instance meanwhile join it.
            bool did = false;
            for (auto it = pending_.begin(); it != pending_.end(); ++it) {
                if (auto g = instance_of(requests_[*it].model_id)) {
                    const std::size_t idx = *it;
                    pending_.erase(it);
                    join_instance(*g, idx);
                    did = true;
                    break;
                }
            }
            if (did) continue;
            if (pending_.empty()) return;

            std::vector<std::string> models;
            for (auto idx : pending_) models.push_back(requests_[idx].model_id);
            auto decision = schedule(models, snapshots(models), registry_, sched);
            if (!decision.assignments.empty()) {
                const auto& [model_id, gpu_id] = decision.assignments.front();
                auto it = std::find_if(pending_.begin(), pending_.end(), [&](std::size_t idx) {
                    return requests_[idx].model_id == model_id;
                });
                const std::size_t req_idx = *it;
                pending_.erase(it);
                if (cfg_.emit_sched_log) {
                    for (const auto& e : decision.entries) {
                        if (e.model_id != model_id || !e.chosen) continue;
                        nlohmann::json j;
                        j["t"] = now_;
                        j["request_id"] = requests_[req_idx].request_id;
                        j["model_id"] = e.model_id;
                        auto cands = nlohmann::json::array();
                        for (const auto& [gid, est] : e.candidates)
                            cands.push_back({{"gpu", gid}, {"estimate", est}});
                        j["candidates"] = std::move(cands);
                        j["chosen"] = *e.chosen;
                        j["deferred"] = false;
                        sched_log_.push_back(std::move(j));
                        break;
                    }
                }
                start_instance(gpu_index(gpu_id), req_idx);
                continue;
            }

            // Nothing placeable. Keep-alive is best effort: reclaim the GPU
            // of the longest-idle instance and retry.
            std::optional<std::size_t> victim;
            for (std::size_t g = 0; g < gpus_.size(); ++g) {
                const auto& inst = gpus_[g].inst;
                if (!inst || !inst->idle) continue;
                if (!victim || inst->idle_since < gpus_[*victim].inst->idle_since) victim = g;
            }
            if (victim) {
                early_terminations_++;
                terminate_instance(*victim);
                continue;
            }
            deferral_events_ += pending_.size();
            if (cfg_.emit_sched_log) {
                for (auto idx : pending_) {
                    nlohmann::json j;
                    j["t"] = now_;
                    j["request_id"] = requests_[idx].request_id;
                    j["model_id"] = requests_[idx].model_id;
                    j["candidates"] = nlohmann::json::array();
                    j["deferred"] = true;
                    sched_log_.push_back(std::move(j));
                }
            }
            return;
        }
    }

    std::size_t gpu_index(const std::string& gpu_id) const {
        for (std::size_t g = 0; g < gpus_.size(); ++g)
            if (gpus_[g].spec.gpu_id == gpu_id) return g;
        assert(false);
        return 0;
    }

    // ---- instance lifecycle ---------------------------------------------

    void start_instance(std::size_t g, std::size_t trigger) {
        Gpu& gpu = gpus_[g];
        Instance inst;
        inst.model_id = requests_[trigger].model_id;
        inst.gen = ++gpu.gen_counter;
        inst.phase = 0;
        inst.lanes.assign(cfg_.batch_size, std::nullopt);
        inst.trigger = trigger;
        inst.queue.push_back(trigger);
        gpu.inst = std::move(inst);

        const Seconds t0 = now_ + cfg_.rpc_snapshot_latency;
        auto& rec = records_[trigger];
        rec.gpu_id = gpu.spec.gpu_id;
        rec.t_scheduled = t0;
        rec.queued_time = t0 - rec.t_arrival;
        rec.t_init = cfg_.init_latency;
        rec.cold_start = true;
        push_event(t0 + cfg_.init_latency, EventKind::PhaseAdvance, static_cast<std::uint32_t>(g),
                   gpu.inst->gen, 0);
    }

    void on_phase(std::size_t g, std::uint64_t gen, std::uint64_t stage) {
        Gpu& gpu = gpus_[g];
        if (!gpu.inst || gpu.inst->gen != gen) return;  // stale
        Instance& inst = *gpu.inst;
        if (stage == 0) {
            inst.phase = 1;
            do_load(g);
        } else if (stage == 1) {
            inst.phase = 2;
            push_event(now_ + cfg_.profile_latency, EventKind::PhaseAdvance,
                       static_cast<std::uint32_t>(g), gen, 2);
            records_[inst.trigger].t_profile = cfg_.profile_latency;
        } else {
            activate_instance(g);
        }
    }

    void do_load(std::size_t g) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        const ModelSpec& model = registry_.at(inst.model_id);

        LoadPolicy policy;
        policy.merge = cfg_.merge;
        policy.strictness = cfg_.strictness;
        policy.random_eviction = cfg_.eviction == EvictionSelection::Random;
        policy.rng = &rng_;

        auto outcome = gpu.store.load_model(model, stats_, now_, policy);
        if (!outcome.ok()) {
            // Cannot happen after can_run, but stay safe: put the whole
            // instance queue back and retry at the next scheduling event.
            for (auto it = inst.queue.rbegin(); it != inst.queue.rend(); ++it)
                pending_.push_front(*it);
            gpu.inst.reset();
            push_event(now_, EventKind::ScheduleKick, 0, 0, 0);
            return;
        }
        const LoadOutcome& out = outcome.value();

        const BytesPerSecond bandwidth =
            model.location == ModelLocation::ModelCache
                ? gpu.spec.pcie_bandwidth
                : std::min(gpu.spec.store_bandwidth, gpu.spec.pcie_bandwidth);
        stats_.set_load_bandwidth(model.model_id, bandwidth);

        std::vector<std::string> evicted_models;
        for (const auto& ev : out.plan.evictions) evicted_models.push_back(ev.model_id);
        std::sort(evicted_models.begin(), evicted_models.end());
        evicted_models.erase(std::unique(evicted_models.begin(), evicted_models.end()),
                             evicted_models.end());
        for (const auto& m : evicted_models) stats_.record_eviction(m, now_);

        const Seconds transfer_time = static_cast<double>(out.bytes_transferred) / bandwidth;
        const Seconds merge_time =
            static_cast<double>(out.bytes_merged) / gpu.spec.intra_copy_bandwidth;
        const Seconds t_load = cfg_.plan_compute_latency + transfer_time + merge_time;
        load_compute_total_ += cfg_.plan_compute_latency;
        load_transfer_total_ += transfer_time;
        load_merge_total_ += merge_time;

        auto& rec = records_[inst.trigger];
        rec.t_load = t_load;
        rec.bytes_transferred = out.bytes_transferred;
        rec.bytes_merged = out.bytes_merged;

        push_event(now_ + t_load, EventKind::PhaseAdvance, static_cast<std::uint32_t>(g), inst.gen,
                   1);
    }

    void activate_instance(std::size_t g) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        const ModelSpec& model = registry_.at(inst.model_id);
        inst.phase = 3;

        if (cfg_.mode == SimMode::ReuseOdkv) {
            inst.kv = KvEngine(inst.model_id, cfg_.block_size_tokens, model.bytes_per_token);
        } else {
            reserve_kv(g, model);
        }

        // Drain queued requests into lanes; their prefill allocations form
        // one batch.
        std::vector<std::pair<std::size_t, std::size_t>> started;  // (lane, request)
        while (!inst.queue.empty()) {
            auto lane = free_lane(inst);
            if (!lane) break;
            const std::size_t req_idx = inst.queue.front();
            inst.queue.pop_front();
            started.push_back({*lane, req_idx});
            inst.lanes[*lane] = req_idx;
            inst.busy_lanes++;
        }
        bool batch_allocated = false;
        if (cfg_.mode == SimMode::ReuseOdkv && !started.empty()) {
            std::vector<std::pair<std::uint64_t, std::uint64_t>> wants;
            for (const auto& [lane, req_idx] : started)
                wants.push_back({requests_[req_idx].request_id,
                                 clamped_prompt(requests_[req_idx])});
            batch_allocated = kv_batch(g, wants);
        }
        for (const auto& [lane, req_idx] : started)
            begin_prefill_timing(g, lane, req_idx, batch_allocated);
    }

    // KV pre-reservation for the conventional modes: the engine claims one
    // worst-case sequence per batch lane, capped by what the pool can hold;
    // resident tensors of inactive models are evicted to make room.
    void reserve_kv(std::size_t g, const ModelSpec& model) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        const Bytes want = static_cast<Bytes>(cfg_.batch_size) * cfg_.max_seq_len *
                           model.bytes_per_token;
        const Bytes cap = gpu.spec.pool_size - gpu.store.pinned_bytes();
        Bytes target = std::min(want, cap);
        if (target == 0) return;

        while (gpu.store.free_bytes() < target) {
            auto candidates = gpu.store.eviction_candidates(stats_, inst.model_id);
            if (candidates.empty()) break;
            std::sort(candidates.begin(), candidates.end(), eviction_order_less);
            gpu.store.evict_tensor(candidates.front().tensor);
            stats_.record_eviction(candidates.front().model_id, now_);
        }
        target = std::min(target, gpu.store.free_bytes());

        Bytes reserved = 0;
        while (reserved < target) {
            // Largest free run first keeps the reservation in few regions.
            Bytes best_size = 0;
            for (const auto& fr : gpu.store.regions().free_runs())
                best_size = std::max(best_size, fr.size);
            if (best_size == 0) break;
            const Bytes take = std::min<Bytes>(best_size, target - reserved);
            auto r = gpu.store.alloc_kv_region(take, reservation_pbn_++);
            assert(r.ok());
            inst.reservation.push_back(r.value());
            reserved += take;
        }
    }

    std::uint64_t clamped_prompt(const InferenceRequest& r) const {
        return std::min<std::uint64_t>(r.prompt_tokens, cfg_.max_seq_len);
    }

    bool kv_batch(std::size_t g, const std::vector<std::pair<std::uint64_t, std::uint64_t>>& wants) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        const auto before = inst.kv.stats();
        auto res = inst.kv.batch_allocate(gpu.store, stats_, wants);
        if (!res.ok())
            throw RuntimeInfeasible("KV pool exhausted; pool too small for this workload");
        const auto& after = inst.kv.stats();
        std::uint64_t blocks = 0;
        for (const auto& pbns : res.value()) blocks += pbns.size();
        if (cfg_.emit_alloc_log && blocks > 0) {
            std::string source = "free_list";
            if (after.reclaim_events > before.reclaim_events) source = "reclaim";
            else if (after.blocks_from_pool > before.blocks_from_pool) source = "pool";
            for (std::size_t i = 0; i < wants.size(); ++i) {
                if (res.value()[i].empty()) continue;
                alloc_log_.push_back({now_, wants[i].first, res.value()[i].size(), source});
            }
        }
        return blocks > 0;
    }

    void begin_prefill_timing(std::size_t g, std::size_t lane, std::size_t req_idx,
                              bool batch_allocated) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        const auto& req = requests_[req_idx];
        auto& rec = records_[req_idx];
        rec.gpu_id = gpu.spec.gpu_id;
        if (!rec.cold_start) {
            rec.t_scheduled = now_;
            rec.queued_time = now_ - rec.t_arrival;
        }
        Seconds dur = cfg_.prefill_base +
                      static_cast<double>(req.prompt_tokens) * cfg_.prefill_per_token;
        if (batch_allocated) {
            dur += cfg_.odkv_alloc_overhead;
            odkv_overhead_total_ += cfg_.odkv_alloc_overhead;
        }
        rec.t_prefill = dur;
        requests_[req_idx].batch_lane = static_cast<std::uint32_t>(lane);
        push_event(now_ + dur, EventKind::PrefillDone, static_cast<std::uint32_t>(g), inst.gen,
                   lane);
    }

    void start_prefill(std::size_t g, std::size_t lane, std::size_t req_idx) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        inst.lanes[lane] = req_idx;
        inst.busy_lanes++;
        bool batch_allocated = false;
        if (cfg_.mode == SimMode::ReuseOdkv) {
            batch_allocated = kv_batch(
                g, {{requests_[req_idx].request_id, clamped_prompt(requests_[req_idx])}});
        }
        begin_prefill_timing(g, lane, req_idx, batch_allocated);
    }

    void on_prefill_done(std::size_t g, std::uint64_t gen, std::uint64_t lane) {
        Gpu& gpu = gpus_[g];
        if (!gpu.inst || gpu.inst->gen != gen) return;
        Instance& inst = *gpu.inst;
        const std::size_t req_idx = *inst.lanes[lane];
        const auto& req = requests_[req_idx];
        auto& rec = records_[req_idx];
        rec.ttft = now_ - rec.t_arrival;

        const double rate = cfg_.decode_rates.rate_for(registry_.at(inst.model_id).total_size);
        const Seconds base_duration = static_cast<double>(req.output_tokens) / rate;

        std::uint64_t crossings = 0;
        if (cfg_.mode == SimMode::ReuseOdkv) {
            const std::uint64_t prompt_c = clamped_prompt(req);
            const std::uint64_t total_c =
                std::min<std::uint64_t>(prompt_c + req.output_tokens, cfg_.max_seq_len);
            const std::uint64_t bs = cfg_.block_size_tokens;
            std::uint64_t blocks = KvEngine::blocks_for(prompt_c, bs);
            for (std::uint64_t count = prompt_c + 1; count <= total_c; ++count) {
                if (KvEngine::blocks_for(count, bs) > blocks) {
                    blocks = KvEngine::blocks_for(count, bs);
                    crossings++;
                    const Seconds when = now_ +
                                         static_cast<double>(count - prompt_c) / rate +
                                         static_cast<double>(crossings - 1) *
                                             cfg_.odkv_alloc_overhead;
                    push_event(when, EventKind::BlockCross, static_cast<std::uint32_t>(g), gen,
                               lane, count);
                }
            }
        }
        const Seconds done = now_ + base_duration +
                             static_cast<double>(crossings) * cfg_.odkv_alloc_overhead;
        odkv_overhead_total_ += static_cast<double>(crossings) * cfg_.odkv_alloc_overhead;
        push_event(done, EventKind::DecodeDone, static_cast<std::uint32_t>(g), gen, lane);
    }

    void on_block_cross(std::size_t g, std::uint64_t gen, std::uint64_t lane,
                        std::uint64_t token_count) {
        Gpu& gpu = gpus_[g];
        if (!gpu.inst || gpu.inst->gen != gen) return;
        Instance& inst = *gpu.inst;
        if (!inst.lanes[lane]) return;
        const std::size_t req_idx = *inst.lanes[lane];
        kv_batch(g, {{requests_[req_idx].request_id, token_count}});
    }

    void on_decode_done(std::size_t g, std::uint64_t gen, std::uint64_t lane) {
        Gpu& gpu = gpus_[g];
        if (!gpu.inst || gpu.inst->gen != gen) return;
        Instance& inst = *gpu.inst;
        const std::size_t req_idx = *inst.lanes[lane];
        records_[req_idx].t_complete = now_;
        if (cfg_.mode == SimMode::ReuseOdkv)
            inst.kv.release_request(requests_[req_idx].request_id);
        inst.lanes[lane] = std::nullopt;
        inst.busy_lanes--;

        if (!inst.queue.empty()) {
            const std::size_t next = inst.queue.front();
            inst.queue.pop_front();
            start_prefill(g, lane, next);
            return;
        }
        if (inst.busy_lanes == 0 && inst.queue.empty()) {
            inst.idle = true;
            inst.idle_since = now_;
            inst.idle_gen++;
            push_event(now_ + cfg_.keep_alive, EventKind::IdleTimeout,
                       static_cast<std::uint32_t>(g), encode_idle(inst), 0);
        }
    }

    std::uint64_t encode_idle(const Instance& inst) const {
        return inst.gen * 1000003 + inst.idle_gen;
    }

    void on_idle_timeout(std::size_t g, std::uint64_t token) {
        Gpu& gpu = gpus_[g];
        if (!gpu.inst || !gpu.inst->idle) return;
        if (encode_idle(*gpu.inst) != token) return;
        terminate_instance(g);
        push_event(now_, EventKind::ScheduleKick, 0, 0, 0);
    }

    void terminate_instance(std::size_t g) {
        Gpu& gpu = gpus_[g];
        Instance& inst = *gpu.inst;
        assert(inst.busy_lanes == 0 && inst.queue.empty());
        if (cfg_.mode == SimMode::ReuseOdkv) {
            kv_totals_.pool_invocations += inst.kv.stats().pool_invocations;
            kv_totals_.alloc_batches += inst.kv.stats().alloc_batches;
            kv_totals_.blocks_from_free_list += inst.kv.stats().blocks_from_free_list;
            kv_totals_.blocks_from_pool += inst.kv.stats().blocks_from_pool;
            kv_totals_.reclaim_events += inst.kv.stats().reclaim_events;
            inst.kv.instance_teardown(gpu.store);
        } else {
            for (auto off : inst.reservation) gpu.store.free_kv_region(off);
        }
        gpu.store.end_instance(inst.model_id);
        if (cfg_.mode == SimMode::Baseline) {
            gpu.store.evict_model(inst.model_id);
            stats_.record_eviction(inst.model_id, now_);
        }
        gpu.inst.reset();
    }

    // ---- sampling ---------------------------------------------------------

    void sample_until(Seconds t) {
        while (next_sample_ <= t) {
            record_sample(next_sample_);
            next_sample_ += cfg_.timeseries_dt;
        }
    }

    void record_sample(Seconds t) {
        TimeSample s;
        s.t = t;
        Bytes pool_total = 0, used = 0;
        for (const auto& g : gpus_) {
            s.reusable += g.store.reusable_bytes();
            s.free_bytes += g.store.free_bytes();
            s.kv_bytes += g.store.kv_bytes();
            pool_total += g.spec.pool_size;
            used += g.spec.pool_size - g.store.free_bytes();
        }
        s.utilization = pool_total ? static_cast<double>(used) / static_cast<double>(pool_total) : 0;
        samples_.push_back(s);
    }

    SimConfig cfg_;
    ModelRegistry registry_;
    Rng rng_;
    ModelStatsTable stats_;
    std::vector<Gpu> gpus_;
    std::vector<InferenceRequest> requests_;
    std::vector<RequestRecord> records_;
    std::deque<std::size_t> pending_;
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
    std::uint64_t seq_ = 0;
    Seconds now_ = 0;
    Seconds next_sample_ = 0;
    std::vector<TimeSample> samples_;
    std::vector<AllocLogRow> alloc_log_;
    std::vector<nlohmann::json> sched_log_;
    std::uint64_t deferral_events_ = 0;
    std::uint64_t early_terminations_ = 0;
    std::uint64_t reservation_pbn_ = 1;
    KvAllocStats kv_totals_;
    Seconds odkv_overhead_total_ = 0;
    Seconds load_compute_total_ = 0;
    Seconds load_merge_total_ = 0;
    Seconds load_transfer_total_ = 0;
};

}  // namespace warmsim
