#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "gfusion/fusion_model.hpp"

namespace gfusion {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'G', 'F', 'M', 'O', 'D', 'E', 'L', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//
//   magic        8 bytes  "GFMODEL1"
//   version      u32
//   shared_dim   u32
//   proj_dim     u32
//   n_modalities u32, then per active modality in canonical order:
//     tag u8 ('t' | 'a' | 'v'), raw_dim u32
//   n_blocks     u32, then per block in FusionParams::for_each_block order:
//     name_len u32, name bytes, rows u32, cols u32,
//     rows*cols float32 values, row-major
//
// Parameters are stored as float32; loading widens them back to double.
std::string encode_checkpoint(const FusionParams& p);
FusionParams decode_checkpoint(const std::string& bytes);

void save_checkpoint(const FusionParams& p, const std::filesystem::path& path);
FusionParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gfusion
