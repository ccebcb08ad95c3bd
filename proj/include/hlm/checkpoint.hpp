// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// HLM1 checkpoint container: 8-byte magic+version, little-endian header
// (tile counts, per-tile parameter counts, dtype code, alias table, Adam
// step), then each physical tile's raw payload at a 4096-aligned offset.

#pragma once

#include <string>

#include "hlm/host_store.hpp"

namespace hlm {

void save_checkpoint(const MasterStore& store, const std::string& path);

// Loads into an existing store with matching geometry; returns nothing,
// the Adam step counter is restored on the store itself.
void load_checkpoint(MasterStore& store, const std::string& path);

}  // namespace hlm
