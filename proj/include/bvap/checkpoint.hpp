// Binary checkpoint format (little-endian):
//
//   "BVAP1"  u32 version  u64 entry_count
//   entry := u32 name_len, name bytes, u8 dtype (0 = f64), u32 rank,
//            rank x u64 dims, prod(dims) x f64 values
//
// Parameters are written as rank-4 tensors in store order. Each parameter is
// followed by its optimizer slots "<name>@square_avg" and "<name>@momentum".
#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>

#include "bvap/param_store.hpp"

namespace bvap {

inline constexpr char kCheckpointMagic[5] = {'B', 'V', 'A', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 0;

void save_checkpoint(std::span<const ParamStore* const> stores,
                     const std::filesystem::path& path);
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);

/// Entries come back in file order. Optimizer-slot entries are folded into
/// their parameter; a slot without its parameter is an error.
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace bvap
