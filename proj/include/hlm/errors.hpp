// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hlm {

// Invalid or inconsistent user configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A region claim exceeded its fixed capacity, or the arena budget does not
// fit the requested model. Deterministic; never a silent growth. Exit code 3.
class ArenaOomError : public std::runtime_error {
public:
    ArenaOomError(std::string region, std::int64_t requested, std::int64_t capacity)
        : std::runtime_error("device arena out of memory in region '" + region +
                             "': requested " + std::to_string(requested) +
                             " bytes, capacity " + std::to_string(capacity)),
          region_(std::move(region)), requested_(requested), capacity_(capacity) {}

    const std::string& region() const { return region_; }
    std::int64_t requested() const { return requested_; }
    std::int64_t capacity() const { return capacity_; }

private:
    std::string region_;
    std::int64_t requested_;
    std::int64_t capacity_;
};

// Ordering or state-machine misuse between engine, buffers, slabs and
// templates. Always a bug in the caller, never a data condition.
class ProtocolError : public std::logic_error {
public:
    explicit ProtocolError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite values where finite ones are required (e.g. gradients entering
// the optimizer).
class NumericsError : public std::runtime_error {
public:
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hlm
