#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "remap/diff/tensor.hpp"

namespace remap::diff {

/// Content hash over parameter names, shapes and value bytes, in order.
std::uint64_t parameter_hash(std::span<const Parameter* const> params);

/// Checkpoint container shared by encoders, modules and controllers:
///   {"format": "remap-checkpoint", "version": 1, "kind": <string>,
///    "spec": <object>, "parameters": [{"name", "shape", "trainable", "values"}],
///    "hash": <16 hex digits of parameter_hash>}
/// Doubles are written with round-trip precision.
nlohmann::json make_checkpoint(std::string_view kind, nlohmann::json spec,
                               std::span<const Parameter* const> params);

/// Copies stored values into `params` (matched by position and name) and
/// verifies the recorded hash. Throws InputError on any mismatch.
void restore_parameters(const nlohmann::json& checkpoint, std::span<Parameter* const> params);

/// Reads the parameter list without a destination (for loaders that rebuild
/// structure from the spec first).
std::vector<Parameter> read_parameters(const nlohmann::json& checkpoint);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace remap::diff
