// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Operator CLI: plan / train / simulate / trace subcommands over one JSON
// config format. Exit codes: 0 ok, 2 config error, 3 memory-budget error,
// 4 trace violation.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hlm/checkpoint.hpp"
#include "hlm/config_io.hpp"
#include "hlm/oracle.hpp"
#include "hlm/planner.hpp"
#include "hlm/scheduler.hpp"
#include "hlm/trainer.hpp"

namespace {

using nlohmann::json;
using namespace hlm;

std::string human_bytes(double bytes) {
    std::ostringstream os;
    auto fmt = [&](double v, const char* unit) {
        os.precision(4);
        os << v << ' ' << unit;
        return os.str();
    };
    if (bytes >= 1e12) return fmt(bytes / 1e12, "TB");
    if (bytes >= 1e9) return fmt(bytes / 1e9, "GB");
    if (bytes >= 1e6) return fmt(bytes / 1e6, "MB");
    if (bytes >= 1e3) return fmt(bytes / 1e3, "KB");
    return fmt(bytes, "B");
}

std::uint64_t effective_seed(const RunConfig& cfg) {
    if (const char* env = std::getenv("HLM_SEED")) {
        return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
    }
    return cfg.run.seed;
}

void require_model(const RunConfig& cfg) {
    if (!cfg.has_model) throw ConfigError("config needs a 'model' section");
}

void require_hardware(const RunConfig& cfg) {
    if (!cfg.has_hardware) throw ConfigError("config needs a 'hardware' section");
}

json plan_report_json(const PlanReport& r) {
    json overlap = json::array();
    for (const auto& lo : r.overlap)
        overlap.push_back({{"layer", lo.layer},
                           {"xfer_s", lo.xfer_s},
                           {"comp_s", lo.comp_s},
                           {"ratio", lo.ratio},
                           {"hidden", lo.hidden}});
    return json{
        {"params", r.params},
        {"p_max_bytes", r.p_max_bytes},
        {"m_cpu_min_bytes", r.m_cpu_min},
        {"m_cpu_est",
         {{"persistent", r.m_cpu_est.persistent},
          {"slabs", r.m_cpu_est.slabs},
          {"staging", r.m_cpu_est.staging},
          {"total", r.m_cpu_est.total}}},
        {"m_gpu_bound",
         {{"stream_bufs", r.m_gpu.stream_bufs},
          {"stack", r.m_gpu.stack},
          {"anchors", r.m_gpu.anchors},
          {"workspace", r.m_gpu.workspace},
          {"core", r.m_gpu.core()},
          {"total", r.m_gpu.total()}}},
        {"v_h2d_ideal", r.vol_ideal.h2d},
        {"v_d2h_ideal", r.vol_ideal.d2h},
        {"v_h2d_measured", r.vol_measured.h2d},
        {"v_d2h_measured", r.vol_measured.d2h},
        {"t_comp_s", r.t_comp_s},
        {"global_overlap_ratio", r.eq_global_ratio},
        {"global_overlap_ratio_measured", r.eq_global_ratio_measured},
        {"layer_overlap_ok", r.layer_overlap_ok},
        {"overlap", overlap},
        {"slack", r.slack},
        {"verdict", verdict_name(r.verdict)},
    };
}

void print_plan_report(const PlanReport& r) {
    std::cout << "parameters            : " << r.params << " (" << r.params / 1e9 << "B)\n";
    std::cout << "minimum host memory   : " << human_bytes(static_cast<double>(r.m_cpu_min))
              << "  (12 bytes/param)\n";
    std::cout << "estimated host memory : "
              << human_bytes(static_cast<double>(r.m_cpu_est.total)) << "  (persistent "
              << human_bytes(static_cast<double>(r.m_cpu_est.persistent)) << " + slabs "
              << human_bytes(static_cast<double>(r.m_cpu_est.slabs)) << " + staging "
              << human_bytes(static_cast<double>(r.m_cpu_est.staging)) << ")\n";
    std::cout << "device bound          : " << human_bytes(static_cast<double>(r.m_gpu.total()))
              << "  (streams " << human_bytes(static_cast<double>(r.m_gpu.stream_bufs))
              << " + stack " << human_bytes(static_cast<double>(r.m_gpu.stack))
              << " + workspace " << human_bytes(static_cast<double>(r.m_gpu.workspace))
              << " + anchors " << human_bytes(static_cast<double>(r.m_gpu.anchors))
              << " [depth-dependent extension])\n";
    std::cout << "streaming volume      : H2D "
              << human_bytes(static_cast<double>(r.vol_measured.h2d)) << " / D2H "
              << human_bytes(static_cast<double>(r.vol_measured.d2h)) << " measured; ideal "
              << human_bytes(static_cast<double>(r.vol_ideal.h2d)) << " each way\n";
    std::cout << "compute time / iter   : " << r.t_comp_s << " s\n";
    std::cout << "overlap ratio (ideal) : " << r.eq_global_ratio
              << (r.global_overlap_ok ? "  (hidden)" : "  (transfer-bound)") << "\n";
    if (!r.overlap.empty())
        std::cout << "per-layer prefetch    : ratio " << r.overlap.front().ratio << " -> "
                  << (r.layer_overlap_ok ? "hidden" : "exposed") << "\n";
    std::cout << "verdict               : " << verdict_name(r.verdict) << "\n";
}

int cmd_plan(const std::string& config_path, double params_override,
             const std::string& out_path) {
    if (params_override > 0) {
        const i64 p = static_cast<i64>(params_override);
        std::cout << "parameters            : " << p << "\n";
        std::cout << "minimum host memory   : " << human_bytes(static_cast<double>(min_host_bytes(p)))
                  << "  (12 bytes/param)\n";
        return 0;
    }
    RunConfig cfg = load_config(config_path);
    require_model(cfg);
    require_hardware(cfg);
    json out_doc;
    if (cfg.has_sweep) {
        std::vector<double> mults = cfg.sweep.multipliers;
        if (!cfg.sweep.layers.empty()) {
            mults.clear();
            for (i64 l : cfg.sweep.layers)
                mults.push_back(static_cast<double>(l) / static_cast<double>(cfg.model.layers));
        }
        const SweepKind kind = cfg.sweep.kind == "depth" ? SweepKind::Depth : SweepKind::Width;
        const auto rows = scaling_report(cfg.model, kind, mults, &cfg.hardware, cfg.run.dtype,
                                         cfg.run.slack);
        std::cout << "sweep (" << cfg.sweep.kind << ")\n";
        std::cout << "  mult   layers  hidden   ffn      params(B)  device_core  anchors     "
                     "device_total  overlap  fits\n";
        json jrows = json::array();
        for (const auto& row : rows) {
            std::ostringstream line;
            line.precision(4);
            line << "  " << row.multiplier << "\t " << row.layers << "\t " << row.hidden
                 << "\t " << row.ffn << "\t " << static_cast<double>(row.params) / 1e9 << "\t "
                 << human_bytes(static_cast<double>(row.device_core)) << "\t "
                 << human_bytes(static_cast<double>(row.device_anchors)) << "\t "
                 << human_bytes(static_cast<double>(row.device_total)) << "\t "
                 << (row.layer_overlap_ok ? "hidden" : "exposed") << "\t "
                 << (row.device_oom ? "OOM" : "ok");
            std::cout << line.str() << "\n";
            jrows.push_back({{"multiplier", row.multiplier},
                             {"layers", row.layers},
                             {"hidden", row.hidden},
                             {"ffn", row.ffn},
                             {"params", row.params},
                             {"p_max_bytes", row.p_max_bytes},
                             {"m_cpu_min_bytes", row.m_cpu_min},
                             {"device_core", row.device_core},
                             {"device_anchors", row.device_anchors},
                             {"device_total", row.device_total},
                             {"layer_overlap_ok", row.layer_overlap_ok},
                             {"device_oom", row.device_oom}});
        }
        out_doc = json{{"sweep", cfg.sweep.kind}, {"rows", jrows}};
    } else {
        const PlanReport r =
            feasibility(cfg.model, cfg.hardware, cfg.run.dtype, cfg.run.slack, cfg.run.n_slab);
        print_plan_report(r);
        out_doc = plan_report_json(r);
    }
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw ConfigError("cannot open report file for writing: " + out_path);
        f << out_doc.dump(2) << "\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path, i64 steps_override,
              const std::string& log_path_arg, const std::string& ckpt_arg,
              const std::string& resume_path, const std::string& trace_arg,
              bool eager_flag) {
    RunConfig cfg = load_config(config_path);
    require_model(cfg);
    if (steps_override > 0) cfg.run.steps = steps_override;
    if (!log_path_arg.empty()) cfg.run.step_log = log_path_arg;
    if (!ckpt_arg.empty()) cfg.run.checkpoint = ckpt_arg;
    if (!trace_arg.empty()) cfg.run.trace_out = trace_arg;
    if (eager_flag) cfg.run.eager_optim = true;
    cfg.run.seed = effective_seed(cfg);

    auto store = build_store(cfg.model, cfg.run.seed, cfg.run.dtype);
    if (!resume_path.empty()) load_checkpoint(*store, resume_path);
    // A hardware section makes its device capacity a hard arena budget.
    std::optional<i64> device_budget;
    if (cfg.has_hardware) device_budget = static_cast<i64>(cfg.hardware.device_bytes);
    DeviceArena arena(cfg.model, cfg.run.dtype, device_budget);

    std::ofstream log;
    if (!cfg.run.step_log.empty()) {
        log.open(cfg.run.step_log, std::ios::trunc);
        if (!log) throw ConfigError("cannot open step log for writing: " + cfg.run.step_log);
    }
    const TrainOutput out = run_training(cfg, *store, arena, [&](const StepTelemetry& t) {
        if (log.is_open()) {
            json row{{"step", t.step},           {"loss", t.loss},
                     {"arena_peak", t.arena_peak}, {"host_total", t.host_total},
                     {"h2d_bytes", t.h2d_bytes},  {"d2h_bytes", t.d2h_bytes}};
            log << row.dump() << '\n';
        }
        if (t.step == 1 || t.step % 20 == 0)
            std::cout << "step " << t.step << "  loss " << t.loss << "\n";
    });
    if (!out.steps.empty()) {
        std::cout << "initial loss " << out.steps.front().loss << ", final loss "
                  << out.steps.back().loss << " after " << out.steps.size() << " steps\n";
    }
    if (!cfg.run.trace_out.empty()) write_trace_file(out.first_trace, cfg.run.trace_out);
    if (!cfg.run.checkpoint.empty()) {
        save_checkpoint(*store, cfg.run.checkpoint);
        std::cout << "checkpoint written to " << cfg.run.checkpoint << "\n";
    }
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& trace_in,
                 const std::string& out_path) {
    RunConfig cfg = load_config(config_path);
    require_hardware(cfg);
    EventTrace trace;
    if (!trace_in.empty()) {
        trace = trace_from_jsonl_file(trace_in);
    } else {
        require_model(cfg);
        trace = canonical_trace(cfg.model, cfg.run.dtype, cfg.run.steps, cfg.run.n_slab,
                                cfg.run.eager_optim);
    }
    const auto violations = validate_trace(trace);
    if (!violations.empty()) {
        for (const auto& v : violations)
            std::cerr << "violation at op " << v.op_id << " [" << v.rule << "]: " << v.detail
                      << "\n";
        return 4;
    }
    TimingModel timing{cfg.hardware.pcie_bytes_per_s, cfg.hardware.device_flops,
                       cfg.hardware.pageable_penalty, cfg.hardware.cpu_optim_rate};
    const Timeline tl = simulate(trace, timing);
    const ThroughputReport rep = throughput_report(tl);
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw ConfigError("cannot open timeline file for writing: " + out_path);
        f << timeline_to_jsonl(tl, rep);
    }
    i64 slab_stalls = 0;
    for (const auto& op : trace.ops) {
        if (op.kind != OpKind::GradXfer) continue;
        for (i64 d : op.deps)
            if (trace.ops[static_cast<std::size_t>(d)].kind == OpKind::Accum) ++slab_stalls;
    }
    std::cout << "ops        : " << tl.ops.size() << "\n";
    std::cout << "makespan   : " << tl.makespan_us << " us\n";
    std::cout << "sim tflops : " << rep.sim_tflops << "\n";
    std::cout << "bound      : " << stream_name(rep.bound) << "\n";
    std::cout << "bubble     : " << rep.bubble_fraction * 100.0 << " %\n";
    std::cout << "slab stalls: " << slab_stalls << "\n";
    return 0;
}

struct GanttRow {
    std::string stream;
    std::string kind;
    i64 layer;
    double t0, t1;
};

int cmd_trace(const std::string& in_path, int width) {
    std::ifstream f(in_path);
    if (!f) throw ConfigError("cannot open timeline file: " + in_path);
    std::vector<GanttRow> rows;
    double makespan = 0.0;
    std::string line;
    i64 line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
            if (row.contains("summary")) {
                makespan = row["summary"].value("makespan_us", 0.0);
                continue;
            }
            GanttRow g;
            g.stream = row.at("stream").get<std::string>();
            g.kind = row.at("kind").get<std::string>();
            g.layer = row.value("layer", i64{-1});
            g.t0 = row.at("t_start_us").get<double>();
            g.t1 = row.at("t_end_us").get<double>();
            rows.push_back(g);
            makespan = std::max(makespan, g.t1);
        } catch (const json::exception& e) {
            std::cerr << "line " << line_no << ": malformed timeline row: " << e.what() << "\n";
            return 4;
        }
    }
    std::cout << "timeline (" << rows.size() << " ops, makespan " << makespan << " us)\n";
    const char* streams[] = {"h2d", "compute", "d2h", "host"};
    for (const char* s : streams) {
        std::string lane(static_cast<std::size_t>(width), '.');
        for (const auto& g : rows) {
            if (g.stream != s || makespan <= 0) continue;
            auto col = [&](double t) {
                int c = static_cast<int>(t / makespan * width);
                return std::min(std::max(c, 0), width - 1);
            };
            const int c0 = col(g.t0);
            int c1 = col(g.t1);
            if (c1 <= c0) c1 = c0;
            char label = '=';
            if (g.kind == "weight_xfer") label = 'W';
            else if (g.kind == "forward") label = 'F';
            else if (g.kind == "recompute") label = 'R';
            else if (g.kind == "local_backward") label = 'B';
            else if (g.kind == "grad_xfer") label = 'G';
            else if (g.kind == "accum") label = 'A';
            else if (g.kind == "opt_step") label = 'O';
            for (int c = c0; c <= c1; ++c) lane[static_cast<std::size_t>(c)] = label;
        }
        std::printf("%-8s |%s|\n", s, lane.c_str());
    }
    std::cout << "legend: W weight transfer, F forward, R recompute, B local backward, "
                 "G gradient transfer, A accumulate, O optimizer\n";
    return 0;
}

int cmd_oracle_train(const std::string& config_path, i64 steps_override) {
    RunConfig cfg = load_config(config_path);
    require_model(cfg);
    if (steps_override > 0) cfg.run.steps = steps_override;
    cfg.run.seed = effective_seed(cfg);
    auto store = build_store(cfg.model, cfg.run.seed, Dtype::FP32);
    oracle::Params params = oracle::Params::from_store(*store);
    const auto losses = oracle::oracle_train(params, cfg.hyper, cfg.run.steps,
                                             cfg.run.seed + 1);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (i == 0 || (i + 1) % 20 == 0 || i + 1 == losses.size())
            std::cout << "step " << (i + 1) << "  loss " << losses[i] << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"host-memory-centric streaming trainer, pipeline simulator and planner"};
    app.require_subcommand(1);

    std::string config_path, out_path, trace_in, log_path, ckpt_path, resume_path, trace_out;
    double params_override = 0.0;
    i64 steps_override = 0;
    bool eager_flag = false;
    int gantt_width = 100;

    auto* plan = app.add_subcommand("plan", "feasibility and scaling analysis");
    plan->add_option("--config", config_path, "config file (JSON)");
    plan->add_option("--params", params_override, "plan from a raw parameter count");
    plan->add_option("--out", out_path, "write the machine-readable report here");

    auto* train = app.add_subcommand("train", "run training steps");
    train->add_option("--config", config_path, "config file (JSON)")->required();
    train->add_option("--steps", steps_override, "override run.steps");
    train->add_option("--log", log_path, "step log (JSONL)");
    train->add_option("--checkpoint", ckpt_path, "write final checkpoint here");
    train->add_option("--resume", resume_path, "load this checkpoint before training");
    train->add_option("--trace", trace_out, "write the first step's event trace here");
    train->add_flag("--eager-optim", eager_flag, "per-tile optimizer updates");

    auto* sim = app.add_subcommand("simulate", "validate and time a pipeline trace");
    sim->add_option("--config", config_path, "config file (JSON)")->required();
    sim->add_option("--trace-in", trace_in, "use a recorded engine trace");
    sim->add_option("--out", out_path, "timeline output (JSONL)");

    auto* tr = app.add_subcommand("trace", "render a simulated timeline as text");
    tr->add_option("--in", trace_in, "timeline file from 'simulate'")->required();
    tr->add_option("--width", gantt_width, "gantt width in columns");

    auto* ot = app.add_subcommand("oracle-train", "reference full-graph trainer");
    ot->add_option("--config", config_path, "config file (JSON)")->required();
    ot->add_option("--steps", steps_override, "override run.steps");
    ot->group("");   // hidden

    CLI11_PARSE(app, argc, argv);

    try {
        if (plan->parsed()) {
            if (config_path.empty() && params_override <= 0)
                throw ConfigError("plan needs --config or --params");
            return cmd_plan(config_path, params_override, out_path);
        }
        if (train->parsed())
            return cmd_train(config_path, steps_override, log_path, ckpt_path, resume_path,
                             trace_out, eager_flag);
        if (sim->parsed()) return cmd_simulate(config_path, trace_in, out_path);
        if (tr->parsed()) return cmd_trace(trace_in, gantt_width);
        if (ot->parsed()) return cmd_oracle_train(config_path, steps_override);
    } catch (const ArenaOomError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
