#pragma once

// FNCK parameter checkpoints.
//
// Layout, version 1, all integers little-endian:
//   bytes 0-3   magic "FNCK"
//   byte  4     version = 1
//   u32 + blob  architecture config as JSON
//   u32         record count
//   records     u32 path length + path bytes, u8 rank, rank x u32 dims,
//               then prod(dims) x f32 payload
//
// Records are written in lexicographic path order, so encoding is a pure
// function of the parameters. Loading rejects paths the architecture does
// not declare, duplicate or missing paths, and shape mismatches.

#include <string>
#include <vector>

#include "model.hpp"

namespace fnet {

std::vector<unsigned char> encode_fnck(const NetworkParams& net);
NetworkParams decode_fnck(const unsigned char* bytes, std::size_t n);

NetworkParams read_fnck(const std::string& path);
void write_fnck(const NetworkParams& net, const std::string& path);

}  // namespace fnet
