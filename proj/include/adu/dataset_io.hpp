#pragma once

#include <cstddef>
#include <string>

#include "adu/channel.hpp"

namespace adu::sim {

// Fixed-layout little-endian file: header (magic, version, layout, count)
// followed by one fixed-size record per sample (seed, then Z and A entries
// as interleaved re/im doubles, row-major per matrix).
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

size_t dataset_header_size();
size_t dataset_record_size(const LayoutConfig& layout);

}  // namespace adu::sim
