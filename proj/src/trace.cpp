// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/trace.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hlm/errors.hpp"

namespace hlm {

using nlohmann::json;

const char* stream_name(StreamId s) {
    switch (s) {
        case StreamId::H2D: return "h2d";
        case StreamId::Compute: return "compute";
        case StreamId::D2H: return "d2h";
        case StreamId::Host: return "host";
    }
    return "?";
}

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::WeightXfer: return "weight_xfer";
        case OpKind::Forward: return "forward";
        case OpKind::Recompute: return "recompute";
        case OpKind::LocalBackward: return "local_backward";
        case OpKind::GradXfer: return "grad_xfer";
        case OpKind::Accum: return "accum";
        case OpKind::OptStep: return "opt_step";
    }
    return "?";
}

namespace {

StreamId stream_from_name(const std::string& s) {
    for (int i = 0; i < kStreamCount; ++i)
        if (s == stream_name(static_cast<StreamId>(i))) return static_cast<StreamId>(i);
    throw ConfigError("unknown stream name: " + s);
}

OpKind kind_from_name(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(OpKind::OptStep); ++i)
        if (s == op_kind_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
    throw ConfigError("unknown op kind: " + s);
}

}  // namespace

std::string trace_to_jsonl(const EventTrace& trace) {
    std::ostringstream out;
    json meta{{"meta", {{"n_layers", trace.meta.n_layers},
                        {"n_buffers", trace.meta.n_buffers},
                        {"n_slabs", trace.meta.n_slabs},
                        {"embed_tile", trace.meta.embed_tile},
                        {"head_tile", trace.meta.head_tile}}}};
    out << meta.dump() << '\n';
    for (const auto& op : trace.ops) {
        json row{{"id", op.id},
                 {"stream", stream_name(op.stream)},
                 {"kind", op_kind_name(op.kind)},
                 {"layer", op.layer},
                 {"buf", op.buf},
                 {"slab", op.slab},
                 {"bytes", op.bytes},
                 {"flops", op.flops},
                 {"params", op.params},
                 {"pinned", op.pinned},
                 {"deps", op.deps}};
        out << row.dump() << '\n';
    }
    return out.str();
}

EventTrace trace_from_jsonl(std::istream& in) {
    EventTrace trace;
    std::string line;
    i64 line_no = 0;
    bool meta_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            if (row.contains("meta")) {
                const json& m = row["meta"];
                trace.meta.n_layers = m.value("n_layers", i64{0});
                trace.meta.n_buffers = m.value("n_buffers", i64{2});
                trace.meta.n_slabs = m.value("n_slabs", i64{12});
                trace.meta.embed_tile = m.value("embed_tile", i64{0});
                trace.meta.head_tile = m.value("head_tile", i64{0});
                meta_seen = true;
                continue;
            }
            StreamOp op;
            op.id = row.at("id").get<i64>();
            op.stream = stream_from_name(row.at("stream").get<std::string>());
            op.kind = kind_from_name(row.at("kind").get<std::string>());
            op.layer = row.value("layer", i64{-1});
            op.buf = row.value("buf", i64{-1});
            op.slab = row.value("slab", i64{-1});
            op.bytes = row.value("bytes", i64{0});
            op.flops = row.value("flops", i64{0});
            op.params = row.value("params", i64{0});
            op.pinned = row.value("pinned", true);
            op.deps = row.value("deps", std::vector<i64>{});
            if (op.id != static_cast<i64>(trace.ops.size()))
                throw ConfigError("trace line " + std::to_string(line_no) +
                                  ": op ids must be dense and in order");
            trace.ops.push_back(std::move(op));
        } catch (const json::exception& e) {
            throw ConfigError("trace line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!meta_seen && !trace.ops.empty())
        throw ConfigError("trace file is missing the leading meta row");
    return trace;
}

EventTrace trace_from_jsonl_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open trace file: " + path);
    return trace_from_jsonl(f);
}

void write_trace_file(const EventTrace& trace, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open trace file for writing: " + path);
    f << trace_to_jsonl(trace);
    if (!f) throw ConfigError("trace write failed: " + path);
}

}  // namespace hlm
