#pragma once

#include <string>

#include "sgol/nn.hpp"

namespace sgol {

/// Binary parameter snapshot. Layout, all integers little-endian:
///   magic "SGOL", version u32, parameter count u32, then per parameter:
///   name length u16, name bytes, rank u8, one u32 per dimension, and the
///   values as IEEE doubles. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamRegistry& registry);

/// Restores a snapshot into a registry holding exactly the same parameter
/// names and shapes (any order). Throws TensorError on malformed files or
/// mismatched registries.
void load_checkpoint(const std::string& path, ParamRegistry& registry);

/// Copies every stored parameter whose name and shape both match an entry in
/// the registry; ignores the rest on either side. Returns the number of
/// parameters copied. Used to seed a larger model from a smaller one (for
/// example a conditioned detector from a plain multiclass checkpoint).
/// Still throws TensorError on malformed files.
std::size_t load_checkpoint_overlap(const std::string& path,
                                    ParamRegistry& registry);

}  // namespace sgol
