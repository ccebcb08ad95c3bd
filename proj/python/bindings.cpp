// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Python module exposing the main operations: planning, training,
// simulation and trace validation. Configs cross the boundary as JSON text;
// the package wrapper accepts dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "hlm/bf16.hpp"
#include "hlm/checkpoint.hpp"
#include "hlm/config_io.hpp"
#include "hlm/planner.hpp"
#include "hlm/scheduler.hpp"
#include "hlm/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace hlm;

namespace {

py::dict json_to_dict(const json& j) {
    py::object loads = py::module_::import("json").attr("loads");
    return loads(j.dump());
}

py::dict plan_from_json(const std::string& config_text) {
    RunConfig cfg = parse_config_json(config_text);
    if (!cfg.has_model || !cfg.has_hardware)
        throw ConfigError("plan needs model and hardware sections");
    const PlanReport r =
        feasibility(cfg.model, cfg.hardware, cfg.run.dtype, cfg.run.slack, cfg.run.n_slab);
    json out{{"params", r.params},
             {"m_cpu_min_bytes", r.m_cpu_min},
             {"m_cpu_est_bytes", r.m_cpu_est.total},
             {"m_gpu_bound_bytes", r.m_gpu.total()},
             {"m_gpu_core_bytes", r.m_gpu.core()},
             {"v_h2d_measured", r.vol_measured.h2d},
             {"v_d2h_measured", r.vol_measured.d2h},
             {"v_h2d_ideal", r.vol_ideal.h2d},
             {"v_d2h_ideal", r.vol_ideal.d2h},
             {"t_comp_s", r.t_comp_s},
             {"global_overlap_ratio", r.eq_global_ratio},
             {"verdict", verdict_name(r.verdict)}};
    return json_to_dict(out);
}

py::list scaling_from_json(const std::string& config_text) {
    RunConfig cfg = parse_config_json(config_text);
    if (!cfg.has_model || !cfg.has_sweep)
        throw ConfigError("scaling report needs model and sweep sections");
    std::vector<double> mults = cfg.sweep.multipliers;
    if (!cfg.sweep.layers.empty()) {
        mults.clear();
        for (i64 l : cfg.sweep.layers)
            mults.push_back(static_cast<double>(l) / static_cast<double>(cfg.model.layers));
    }
    const SweepKind kind = cfg.sweep.kind == "depth" ? SweepKind::Depth : SweepKind::Width;
    const auto rows =
        scaling_report(cfg.model, kind, mults, cfg.has_hardware ? &cfg.hardware : nullptr,
                       cfg.run.dtype, cfg.run.slack);
    py::list out;
    for (const auto& row : rows) {
        json jr{{"multiplier", row.multiplier}, {"layers", row.layers},
                {"hidden", row.hidden},         {"ffn", row.ffn},
                {"params", row.params},         {"p_max_bytes", row.p_max_bytes},
                {"m_cpu_min_bytes", row.m_cpu_min}, {"device_core", row.device_core},
                {"device_anchors", row.device_anchors}, {"device_total", row.device_total},
                {"device_oom", row.device_oom}};
        out.append(json_to_dict(jr));
    }
    return out;
}

py::dict train_from_json(const std::string& config_text) {
    RunConfig cfg = parse_config_json(config_text);
    if (!cfg.has_model) throw ConfigError("train needs a model section");
    auto store = build_store(cfg.model, cfg.run.seed, cfg.run.dtype);
    DeviceArena arena(cfg.model, cfg.run.dtype);
    const TrainOutput out = run_training(cfg, *store, arena);
    json losses = json::array();
    for (const auto& t : out.steps) losses.push_back(t.loss);
    json result{{"losses", losses},
                {"host_total_bytes", out.final_host.total},
                {"host_persistent_bytes", out.final_host.persistent},
                {"arena_committed_bytes", out.final_arena.committed_total},
                {"arena_peak_bytes", out.final_arena.step_peak_total},
                {"h2d_bytes_per_step", out.steps.empty() ? 0 : out.steps.back().h2d_bytes},
                {"d2h_bytes_per_step", out.steps.empty() ? 0 : out.steps.back().d2h_bytes}};
    if (!cfg.run.checkpoint.empty()) save_checkpoint(*store, cfg.run.checkpoint);
    return json_to_dict(result);
}

py::dict simulate_from_json(const std::string& config_text) {
    RunConfig cfg = parse_config_json(config_text);
    if (!cfg.has_model || !cfg.has_hardware)
        throw ConfigError("simulate needs model and hardware sections");
    const EventTrace trace = canonical_trace(cfg.model, cfg.run.dtype, cfg.run.steps,
                                             cfg.run.n_slab, cfg.run.eager_optim);
    const auto violations = validate_trace(trace);
    if (!violations.empty()) throw std::runtime_error("canonical trace failed validation");
    TimingModel timing{cfg.hardware.pcie_bytes_per_s, cfg.hardware.device_flops,
                       cfg.hardware.pageable_penalty, cfg.hardware.cpu_optim_rate};
    const Timeline tl = simulate(trace, timing);
    const ThroughputReport rep = throughput_report(tl);
    json out{{"ops", tl.ops.size()},
             {"makespan_us", tl.makespan_us},
             {"sim_tflops", rep.sim_tflops},
             {"bound", stream_name(rep.bound)},
             {"bubble_fraction", rep.bubble_fraction}};
    return json_to_dict(out);
}

std::vector<std::string> validate_trace_text(const std::string& trace_text) {
    std::istringstream in(trace_text);
    const EventTrace trace = trace_from_jsonl(in);
    std::vector<std::string> out;
    for (const auto& v : validate_trace(trace))
        out.push_back("op " + std::to_string(v.op_id) + " [" + v.rule + "]: " + v.detail);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "host-memory-centric streaming trainer, simulator and planner";
    m.def("bf16_round", [](float x) { return bf16_round(x); },
          "nearest BF16-representable value under round-to-nearest-even", py::arg("x"));
    m.def("min_host_bytes", [](i64 p) { return min_host_bytes(p); },
          "persistent host bytes for p parameters (12 per parameter)", py::arg("params"));
    m.def("plan", &plan_from_json, "feasibility report for a config (JSON text)",
          py::arg("config_json"));
    m.def("scaling_report", &scaling_from_json, "depth/width scaling table for a config",
          py::arg("config_json"));
    m.def("train", &train_from_json, "run training steps; returns losses and ledgers",
          py::arg("config_json"));
    m.def("simulate", &simulate_from_json, "time the canonical pipeline for a config",
          py::arg("config_json"));
    m.def("validate_trace", &validate_trace_text,
          "protocol violations in a JSONL trace (empty when clean)", py::arg("trace_jsonl"));

    py::register_exception<ConfigError>(m, "HlmConfigError", PyExc_ValueError);
    py::register_exception<ArenaOomError>(m, "ArenaOom", PyExc_MemoryError);
}
