// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trace generation and replay. Inter-arrival gaps follow a Gamma
// distribution with configurable coefficient of variation; the model
// sequence comes from a repeat-or-draw Markov chain over a Zipf popularity
// law (or an external base sequence) and is then edited to the requested
// locality level: L1 removes consecutive same-model requests entirely, L2
// halves run lengths, L3/L4 keep the sequence as generated.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <list>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "warmsim/model.hpp"
#include "warmsim/rng.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

enum class Locality : std::uint8_t { L1, L2, L3, L4 };

inline const char* to_string(Locality l) {
    switch (l) {
        case Locality::L1: return "L1";
        case Locality::L2: return "L2";
        case Locality::L3: return "L3";
        case Locality::L4: return "L4";
    }
    return "?";
}

inline Locality locality_from_string(const std::string& s) {
    if (s == "L1" || s == "l1") return Locality::L1;
    if (s == "L2" || s == "l2") return Locality::L2;
    if (s == "L3" || s == "l3") return Locality::L3;
    if (s == "L4" || s == "l4") return Locality::L4;
    throw ConfigError("unknown locality level: " + s);
}

inline double default_cv(Locality l) {
    switch (l) {
        case Locality::L1: return 0.25;
        case Locality::L2: return 0.5;
        case Locality::L3: return 1.0;
        case Locality::L4: return 2.0;
    }
    return 1.0;
}

/// Log-normal token-length parameters (log space) for one dataset tag.
struct LengthProfile {
    double prompt_mu = 0;
    double prompt_sigma = 0.5;
    double output_mu = 0;
    double output_sigma = 0.5;
};

inline double lognormal_mu_for_mean(double mean, double sigma) {
    return std::log(mean) - sigma * sigma / 2.0;
}

/// Defaults chosen so mean token footprints span roughly two orders of
/// magnitude across the four tags.
inline std::map<std::string, LengthProfile> default_length_profiles() {
    std::map<std::string, LengthProfile> p;
    p["alpaca"] = {lognormal_mu_for_mean(16, 0.5), 0.5, lognormal_mu_for_mean(24, 0.5), 0.5};
    p["gsm8k"] = {lognormal_mu_for_mean(60, 0.5), 0.5, lognormal_mu_for_mean(180, 0.5), 0.5};
    p["humaneval"] = {lognormal_mu_for_mean(130, 0.5), 0.5, lognormal_mu_for_mean(190, 0.5), 0.5};
    p["sharegpt"] = {lognormal_mu_for_mean(1600, 0.7), 0.7, lognormal_mu_for_mean(2400, 0.7), 0.7};
    return p;
}

struct TraceSpec {
    std::uint64_t seed = 42;
    std::uint64_t num_requests = 0;
    double cv = 0;  // <= 0: use the locality level's default
    Locality locality = Locality::L3;
    Seconds mean_interarrival = 1.0;
    std::vector<std::string> model_ids;  // catalog order drives popularity ranks
    std::map<std::string, LengthProfile> length_profiles = default_length_profiles();
    double repeat_probability = 0.6;  // Markov chain repeat parameter
    double zipf_s = 1.1;
    std::vector<std::string> base_sequence;  // optional external base trace
};

struct Trace {
    std::vector<InferenceRequest> requests;
};

inline std::pair<std::uint64_t, std::uint64_t> sample_lengths(
    const std::map<std::string, LengthProfile>& profiles, const std::string& dataset, Rng& rng) {
    auto it = profiles.find(dataset);
    if (it == profiles.end()) throw ConfigError("unknown dataset tag: " + dataset);
    const auto& p = it->second;
    const double prompt = rng.lognormal(p.prompt_mu, p.prompt_sigma);
    const double output = rng.lognormal(p.output_mu, p.output_sigma);
    return {static_cast<std::uint64_t>(std::max<long long>(1, std::llround(prompt))),
            static_cast<std::uint64_t>(std::max<long long>(1, std::llround(output)))};
}

namespace workload_detail {

// Rebuild the sequence so no two consecutive entries share a model,
// preserving per-model counts: repeatedly emit the most frequent remaining
// model that differs from the previous pick.
inline std::vector<std::size_t> forbid_consecutive(const std::vector<std::size_t>& seq,
                                                   std::size_t num_models) {
    std::vector<std::uint64_t> counts(num_models, 0);
    for (auto m : seq) counts[m]++;
    std::vector<std::size_t> out;
    out.reserve(seq.size());
    std::size_t prev = num_models;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        std::size_t best = num_models;
        for (std::size_t m = 0; m < num_models; ++m) {
            if (m == prev || counts[m] == 0) continue;
            if (best == num_models || counts[m] > counts[best]) best = m;
        }
        if (best == num_models) {
            // Only the previous model remains; adjacency is unavoidable.
            for (std::size_t m = 0; m < num_models; ++m)
                if (counts[m] > 0) best = m;
        }
        out.push_back(best);
        counts[best]--;
        prev = best;
    }
    return out;
}

// Halve every same-model run: the first half stays, each overflow request is
// re-inserted as a singleton at the nearest later run boundary whose
// neighbors are different models.
inline std::vector<std::size_t> halve_runs(const std::vector<std::size_t>& seq) {
    struct Run {
        std::size_t model;
        std::uint64_t count;
    };
    std::vector<Run> runs;
    for (auto m : seq) {
        if (!runs.empty() && runs.back().model == m) runs.back().count++;
        else runs.push_back({m, 1});
    }
    std::list<Run> edited;
    std::vector<std::pair<std::size_t, std::list<Run>::iterator>> overflow;
    for (const auto& r : runs) {
        const std::uint64_t keep = (r.count + 1) / 2;
        edited.push_back({r.model, keep});
        auto it = std::prev(edited.end());
        for (std::uint64_t k = keep; k < r.count; ++k) overflow.push_back({r.model, it});
    }
    for (const auto& [model, origin] : overflow) {
        bool placed = false;
        // Scan boundaries after the origin run, wrapping to the front.
        for (int pass = 0; pass < 2 && !placed; ++pass) {
            auto it = (pass == 0) ? std::next(origin) : edited.begin();
            auto end = (pass == 0) ? edited.end() : std::next(origin);
            for (; it != end; ++it) {
                auto prev = (it == edited.begin()) ? edited.end() : std::prev(it);
                const bool prev_ok = (prev == edited.end()) || prev->model != model;
                if (prev_ok && it->model != model) {
                    edited.insert(it, {model, 1});
                    placed = true;
                    break;
                }
            }
        }
        if (!placed && edited.back().model != model) {
            edited.push_back({model, 1});
            placed = true;
        }
        if (!placed) edited.back().count++;  // degenerate single-model trace
    }
    std::vector<std::size_t> out;
    for (const auto& r : edited)
        for (std::uint64_t k = 0; k < r.count; ++k) out.push_back(r.model);
    return out;
}

}  // namespace workload_detail

/// Deterministic under the spec's seed: identical specs yield byte-identical
/// trace files.
inline Trace generate_trace(const TraceSpec& spec) {
    if (spec.model_ids.empty()) throw ConfigError("trace: empty catalog");
    if (spec.mean_interarrival <= 0) throw ConfigError("trace: nonpositive mean interarrival");
    if (spec.num_requests == 0) throw ConfigError("trace: zero requests");
    if (spec.length_profiles.empty()) throw ConfigError("trace: no length profiles");

    Rng rng(spec.seed);
    const std::size_t n_models = spec.model_ids.size();

    // Base model sequence: external trace or repeat-or-draw over Zipf ranks.
    std::vector<std::size_t> seq;
    seq.reserve(spec.num_requests);
    if (!spec.base_sequence.empty()) {
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < n_models; ++i) index[spec.model_ids[i]] = i;
        for (std::uint64_t i = 0; i < spec.num_requests; ++i) {
            const auto& name = spec.base_sequence[i % spec.base_sequence.size()];
            auto it = index.find(name);
            if (it == index.end()) throw ConfigError("base trace references unknown model: " + name);
            seq.push_back(it->second);
        }
    } else {
        ZipfSampler zipf(n_models, spec.zipf_s);
        for (std::uint64_t i = 0; i < spec.num_requests; ++i) {
            if (!seq.empty() && rng.uniform01() < spec.repeat_probability) seq.push_back(seq.back());
            else seq.push_back(zipf.sample(rng));
        }
    }

    switch (spec.locality) {
        case Locality::L1: seq = workload_detail::forbid_consecutive(seq, n_models); break;
        case Locality::L2: seq = workload_detail::halve_runs(seq); break;
        case Locality::L3:
        case Locality::L4: break;
    }

    const double cv = spec.cv > 0 ? spec.cv : default_cv(spec.locality);
    const double shape = 1.0 / (cv * cv);
    const double scale = spec.mean_interarrival * cv * cv;

    std::vector<std::string> tags;
    for (const auto& [tag, p] : spec.length_profiles) tags.push_back(tag);

    Trace trace;
    trace.requests.reserve(seq.size());
    Seconds t = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        t += std::max(rng.gamma(shape, scale), 1e-9);
        InferenceRequest r;
        r.request_id = i + 1;
        r.model_id = spec.model_ids[seq[i]];
        r.arrival_time = t;
        r.dataset = tags[rng.uniform_below(tags.size())];
        auto [prompt, output] = sample_lengths(spec.length_profiles, r.dataset, rng);
        r.prompt_tokens = prompt;
        r.output_tokens = output;
        trace.requests.push_back(std::move(r));
    }
    return trace;
}

// Trace files are JSONL: a header record followed by one request per line.
inline std::string trace_to_jsonl(const Trace& trace) {
    std::ostringstream out;
    out << nlohmann::json{{"format_version", 1}, {"type", "trace"}}.dump() << "\n";
    for (const auto& r : trace.requests) {
        nlohmann::json j;
        j["t"] = r.arrival_time;
        j["model"] = r.model_id;
        j["prompt_tokens"] = r.prompt_tokens;
        j["output_tokens"] = r.output_tokens;
        j["dataset"] = r.dataset;
        out << j.dump() << "\n";
    }
    return out.str();
}

inline Trace trace_from_jsonl(std::istream& in) {
    Trace trace;
    std::string line;
    bool header_seen = false;
    std::uint64_t id = 0;
    Seconds prev_t = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("trace parse error: " + std::string(e.what()));
        }
        if (!header_seen && j.contains("format_version")) {
            if (j["format_version"].get<int>() != 1) throw ConfigError("trace: unknown format_version");
            header_seen = true;
            continue;
        }
        InferenceRequest r;
        r.request_id = ++id;
        r.model_id = j.at("model").get<std::string>();
        r.arrival_time = j.at("t").get<double>();
        r.prompt_tokens = j.at("prompt_tokens").get<std::uint64_t>();
        r.output_tokens = j.at("output_tokens").get<std::uint64_t>();
        r.dataset = j.value("dataset", std::string("alpaca"));
        if (r.prompt_tokens == 0 || r.output_tokens == 0)
            throw ConfigError("trace: zero token count at request " + std::to_string(id));
        if (r.arrival_time < prev_t) throw ConfigError("trace: arrivals not monotonic");
        prev_t = r.arrival_time;
        trace.requests.push_back(std::move(r));
    }
    return trace;
}

inline Trace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file: " + path);
    return trace_from_jsonl(in);
}

/// Model-id column of an external trace, used as a base sequence.
inline std::vector<std::string> load_base_sequence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open base trace file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (j.contains("format_version")) continue;
        out.push_back(j.at("model").get<std::string>());
    }
    if (out.empty()) throw ConfigError("base trace is empty: " + path);
    return out;
}

}  // namespace warmsim
