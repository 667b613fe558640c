#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mvstr/params.hpp"

namespace mvstr {

// Binary layout: "MVSTRCKPT1", then per parameter: u32 name length, UTF-8
// name, u32 rank, rank x u32 dims, float32 values. All integers and floats
// little-endian. There is no count field; records run to end of file.
inline constexpr char kCheckpointMagic[] = "MVSTRCKPT1";

void save_checkpoint(const ParamStore& params, const std::string& path);
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path);
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace mvstr
