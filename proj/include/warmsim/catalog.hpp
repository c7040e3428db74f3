// Copyright (c) 2026 The warmsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cinttypes>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "warmsim/model.hpp"
#include "warmsim/types.hpp"

namespace warmsim {

using ModelRegistry = std::map<std::string, ModelSpec>;

namespace catalog_detail {

inline TensorSpec make_tensor(const std::string& model_id, const std::string& name, Bytes size) {
    TensorSpec t;
    t.model_id = model_id;
    t.name = name;
    t.size = size;
    t.id = fingerprint(model_id, name, {static_cast<std::int64_t>(size / 2)}, ElementType::F16);
    return t;
}

}  // namespace catalog_detail

/// Synthesize a model's tensor list: one embedding tensor (~5% of the total)
/// plus an attention and an MLP tensor per layer, mlp twice the attention
/// size, byte-exact to total_size. Ordered by name.
inline ModelSpec make_model(const std::string& model_id, Bytes total_size, int layers,
                            Bytes bytes_per_token,
                            ModelLocation location = ModelLocation::ModelCache,
                            double latency_sensitivity = 1.0) {
    ModelSpec m;
    m.model_id = model_id;
    m.total_size = total_size;
    m.location = location;
    m.latency_sensitivity = latency_sensitivity;
    m.bytes_per_token = bytes_per_token;

    const Bytes embed = total_size / 20;
    const Bytes per_layer = (total_size - embed) / layers;
    const Bytes attn = per_layer / 3;
    Bytes used = embed;
    for (int l = 0; l < layers; ++l) {
        char name[32];
        std::snprintf(name, sizeof(name), "layer%02d.attn", l);
        m.tensors.push_back(catalog_detail::make_tensor(model_id, name, attn));
        used += attn;
        // The last mlp tensor absorbs the rounding remainder.
        const Bytes mlp = (l == layers - 1) ? total_size - used : per_layer - attn;
        std::snprintf(name, sizeof(name), "layer%02d.mlp", l);
        m.tensors.push_back(catalog_detail::make_tensor(model_id, name, mlp));
        used += mlp;
    }
    m.tensors.push_back(catalog_detail::make_tensor(model_id, "tok_embed", embed));
    std::sort(m.tensors.begin(), m.tensors.end(),
              [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });
    return m;
}

/// Eight models mirroring a typical multi-tenant mix: ~30% at 1-3B
/// parameters, ~60% at 4-13B, ~10% above. Sizes are parameter count x 2
/// bytes (fp16); KV bytes/token scale with model size.
inline std::vector<ModelSpec> default_catalog() {
    struct Row {
        const char* id;
        double params_b;
        int layers;
    };
    const Row rows[] = {
        {"opt1.3B", 1.3, 12}, {"qwen3B", 3.0, 13}, {"llama3B", 3.0, 13},
        {"opt6.7B", 6.7, 16}, {"llama8B", 8.0, 16}, {"yi9B", 9.0, 18},
        {"opt13B", 13.0, 20}, {"gpt20B", 20.0, 22},
    };
    std::vector<ModelSpec> out;
    for (const auto& r : rows) {
        const Bytes total = static_cast<Bytes>(r.params_b * 2e9);
        const Bytes bpt = (total / 100000 + 1023) / 1024 * 1024;
        out.push_back(make_model(r.id, total, r.layers, bpt));
    }
    return out;
}

inline ModelRegistry make_registry(const std::vector<ModelSpec>& models) {
    ModelRegistry reg;
    for (const auto& m : models) reg.emplace(m.model_id, m);
    return reg;
}

inline nlohmann::json catalog_to_json(const std::vector<ModelSpec>& models) {
    nlohmann::json j;
    j["format_version"] = 1;
    auto arr = nlohmann::json::array();
    for (const auto& m : models) {
        nlohmann::json e;
        e["model_id"] = m.model_id;
        e["total_size"] = m.total_size;
        e["latency_sensitivity"] = m.latency_sensitivity;
        e["location"] = to_string(m.location);
        e["bytes_per_token"] = m.bytes_per_token;
        auto tensors = nlohmann::json::array();
        for (const auto& t : m.tensors) tensors.push_back({{"name", t.name}, {"size", t.size}});
        e["tensors"] = std::move(tensors);
        arr.push_back(std::move(e));
    }
    j["models"] = std::move(arr);
    return j;
}

inline std::vector<ModelSpec> catalog_from_json(const nlohmann::json& j) {
    if (!j.contains("models") || !j["models"].is_array())
        throw ConfigError("catalog: missing models array");
    std::vector<ModelSpec> out;
    for (const auto& e : j["models"]) {
        ModelSpec m;
        m.model_id = e.at("model_id").get<std::string>();
        if (m.model_id.empty()) throw ConfigError("catalog: empty model_id");
        m.latency_sensitivity = e.value("latency_sensitivity", 1.0);
        m.bytes_per_token = e.value("bytes_per_token", Bytes{0});
        const std::string loc = e.value("location", std::string("model_cache"));
        if (loc == "model_cache") m.location = ModelLocation::ModelCache;
        else if (loc == "model_store") m.location = ModelLocation::ModelStore;
        else throw ConfigError("catalog: unknown location '" + loc + "'");
        for (const auto& te : e.at("tensors")) {
            const auto name = te.at("name").get<std::string>();
            const auto size = te.at("size").get<Bytes>();
            if (size == 0) throw ConfigError("catalog: zero-size tensor " + name);
            m.tensors.push_back(catalog_detail::make_tensor(m.model_id, name, size));
            m.total_size += size;
        }
        if (m.tensors.empty()) throw ConfigError("catalog: model without tensors: " + m.model_id);
        std::sort(m.tensors.begin(), m.tensors.end(),
                  [](const TensorSpec& a, const TensorSpec& b) { return a.name < b.name; });
        out.push_back(std::move(m));
    }
    return out;
}

inline std::vector<ModelSpec> load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open catalog file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("catalog parse error: " + std::string(e.what()));
    }
    return catalog_from_json(j);
}

}  // namespace warmsim
