#pragma once

#include <string>

#include "pansharp/tensor.hpp"

namespace ps {

// PSTF tensor file: magic "PSTF", u32 version (LE), u8 dtype (0=f32, 1=f64),
// u8 rank, rank extents as u64 LE, then the raw row-major LE payload.
inline constexpr std::uint32_t kPstfVersion = 1;

void save_pstf(const std::string& path, const Tensor& t, Dtype dtype);
void save_pstf(const std::string& path, const Tensor& t);  // active default dtype
Tensor load_pstf(const std::string& path);

}  // namespace ps
