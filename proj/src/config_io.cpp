// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hlm/errors.hpp"

namespace hlm {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

Dtype dtype_from_string(const std::string& s) {
    if (s == "bf16-store" || s == "bf16") return Dtype::BF16;
    if (s == "fp32") return Dtype::FP32;
    throw ConfigError("run.dtype must be 'fp32' or 'bf16-store', got '" + s + "'");
}

RunConfig parse_config_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(root, {"model", "hardware", "hyper", "run", "sweep"}, "config root");

    RunConfig cfg;
    if (root.contains("model")) {
        const json& m = root["model"];
        reject_unknown(m, {"layers", "hidden", "ffn", "vocab", "seq", "batch", "k_ckpt",
                           "tie_embeddings"},
                       "model");
        cfg.model.layers = require<i64>(m, "layers", "model");
        cfg.model.hidden = require<i64>(m, "hidden", "model");
        cfg.model.ffn = require<i64>(m, "ffn", "model");
        cfg.model.vocab = require<i64>(m, "vocab", "model");
        cfg.model.seq = require<i64>(m, "seq", "model");
        cfg.model.batch = require<i64>(m, "batch", "model");
        cfg.model.k_ckpt = get_or<i64>(m, "k_ckpt", 1);
        cfg.model.tie_embeddings = get_or<bool>(m, "tie_embeddings", false);
        try {
            cfg.model.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        cfg.has_model = true;
    }
    if (root.contains("hardware")) {
        const json& h = root["hardware"];
        reject_unknown(h, {"host_bytes", "device_bytes", "pcie_bytes_per_s", "device_flops",
                           "pageable_penalty", "cpu_optim_rate"},
                       "hardware");
        cfg.hardware.host_bytes = require<double>(h, "host_bytes", "hardware");
        cfg.hardware.device_bytes = require<double>(h, "device_bytes", "hardware");
        cfg.hardware.pcie_bytes_per_s = require<double>(h, "pcie_bytes_per_s", "hardware");
        cfg.hardware.device_flops = require<double>(h, "device_flops", "hardware");
        cfg.hardware.pageable_penalty = get_or<double>(h, "pageable_penalty", 2.0);
        cfg.hardware.cpu_optim_rate = get_or<double>(h, "cpu_optim_rate", 1e9);
        try {
            cfg.hardware.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        cfg.has_hardware = true;
    }
    if (root.contains("hyper")) {
        const json& h = root["hyper"];
        reject_unknown(h, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "hyper");
        cfg.hyper.lr = get_or<double>(h, "lr", cfg.hyper.lr);
        cfg.hyper.beta1 = get_or<double>(h, "beta1", cfg.hyper.beta1);
        cfg.hyper.beta2 = get_or<double>(h, "beta2", cfg.hyper.beta2);
        cfg.hyper.eps = get_or<double>(h, "eps", cfg.hyper.eps);
        cfg.hyper.weight_decay = get_or<double>(h, "weight_decay", cfg.hyper.weight_decay);
    }
    if (root.contains("run")) {
        const json& r = root["run"];
        reject_unknown(r, {"steps", "seed", "dtype", "eager_optim", "n_slab", "threaded_accum",
                           "slack", "step_log", "checkpoint", "trace_out"},
                       "run");
        cfg.run.steps = get_or<i64>(r, "steps", 1);
        cfg.run.seed = get_or<std::uint64_t>(r, "seed", 1234);
        cfg.run.dtype = dtype_from_string(get_or<std::string>(r, "dtype", "bf16-store"));
        cfg.run.eager_optim = get_or<bool>(r, "eager_optim", false);
        cfg.run.n_slab = get_or<i64>(r, "n_slab", 12);
        cfg.run.threaded_accum = get_or<bool>(r, "threaded_accum", false);
        cfg.run.slack = get_or<double>(r, "slack", 1.0);
        cfg.run.step_log = get_or<std::string>(r, "step_log", "");
        cfg.run.checkpoint = get_or<std::string>(r, "checkpoint", "");
        cfg.run.trace_out = get_or<std::string>(r, "trace_out", "");
        if (cfg.run.steps <= 0) throw ConfigError("run.steps must be positive");
        if (cfg.run.n_slab <= 0) throw ConfigError("run.n_slab must be positive");
        if (cfg.run.slack <= 0) throw ConfigError("run.slack must be positive");
    }
    if (root.contains("sweep")) {
        const json& s = root["sweep"];
        reject_unknown(s, {"kind", "multipliers", "layers"}, "sweep");
        cfg.sweep.kind = require<std::string>(s, "kind", "sweep");
        if (cfg.sweep.kind != "depth" && cfg.sweep.kind != "width")
            throw ConfigError("sweep.kind must be 'depth' or 'width'");
        cfg.sweep.multipliers = get_or<std::vector<double>>(s, "multipliers", {});
        cfg.sweep.layers = get_or<std::vector<i64>>(s, "layers", {});
        if (cfg.sweep.multipliers.empty() && cfg.sweep.layers.empty())
            throw ConfigError("sweep needs multipliers or explicit layers");
        if (!cfg.sweep.layers.empty() && cfg.sweep.kind != "depth")
            throw ConfigError("explicit layers are only valid for a depth sweep");
        cfg.has_sweep = true;
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_json(ss.str());
}

}  // namespace hlm
