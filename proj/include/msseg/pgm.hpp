#pragma once

#include "msseg/geometry.hpp"

#include <filesystem>

namespace msseg {

/// Reads a binary (P5) PGM with maxval <= 255.
GrayImage read_pgm(std::filesystem::path const & path);
void write_pgm(std::filesystem::path const & path, GrayImage const & image);

/// Masks are stored as PGM with values {0,255}; any non-zero value reads as set.
BinaryMask read_mask_pgm(std::filesystem::path const & path);
void write_mask_pgm(std::filesystem::path const & path, BinaryMask const & mask);

} // namespace msseg
