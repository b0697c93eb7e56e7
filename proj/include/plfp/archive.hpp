#pragma once

#include <cstdint>
#include <string>

#include "plfp/model.hpp"

namespace plfp {

// Binary weight archive. Layout (all integers little-endian):
//   magic "PLFPWA\n" (7 bytes), version byte (1)
//   u64 model seed, u32 layer count
//   per layer: u32 layer_id, u8 kind, 4 x u32 dims
//              (conv: C_out,C_in,K,K; linear: C_out,C_in,1,1; other: 0),
//              u64 value count, values as little-endian IEEE f64,
//              u64 FNV-1a checksum of the payload bytes
void save_archive(const ToyModel& m, const std::string& path);
ToyModel load_archive(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t n);

// Digest of the full model (structure + weights), for isolation checks.
std::uint64_t model_digest(const ToyModel& m);

}  // namespace plfp
