// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document covering model, hardware, optimizer
// and run settings. Validation is strict; unknown keys are rejected before
// anything is allocated.

#pragma once

#include <string>
#include <vector>

#include "hlm/model_config.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

struct RunSettings {
    i64 steps = 1;
    std::uint64_t seed = 1234;
    Dtype dtype = Dtype::BF16;
    bool eager_optim = false;
    i64 n_slab = 12;
    bool threaded_accum = false;
    double slack = 1.0;
    std::string step_log;
    std::string checkpoint;
    std::string trace_out;
};

struct SweepSettings {
    std::string kind;                  // "depth" or "width"
    std::vector<double> multipliers;
    std::vector<i64> layers;           // explicit depth points, alternative form
};

struct RunConfig {
    ModelConfig model;
    bool has_model = false;
    HardwareConfig hardware;
    bool has_hardware = false;
    HyperParams hyper;
    RunSettings run;
    SweepSettings sweep;
    bool has_sweep = false;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& text);

Dtype dtype_from_string(const std::string& s);

}  // namespace hlm
