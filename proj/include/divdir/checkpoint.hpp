#pragma once

// Checkpoint container (all integers little-endian):
//
//   bytes 0..7   "DIVDIRCK"
//   u32          format version (1)
//   u64          header length L
//   L bytes      UTF-8 JSON: {"spec": {...}, "tensors": [{"name", "shape"}...], "meta": {...}}
//   ...          every tensor's values as IEEE-754 binary64, in header order
//
// Values are stored verbatim, so save/load round trips are bit-exact.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

#include "json.hpp"
#include "divdir/variational.hpp"

namespace divdir {

nlohmann::json spec_to_json(const NetworkSpec& spec);
/// Strict: unknown keys and malformed layers are rejected.
NetworkSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const BayesianNetwork& net,
                     const nlohmann::json& meta = nlohmann::json::object());
BayesianNetwork load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

namespace binio {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_doubles(std::ostream& os, std::span<const double> v);
std::uint32_t read_u32(std::istream& is, const std::string& what);
std::uint64_t read_u64(std::istream& is, const std::string& what);
void read_doubles(std::istream& is, std::span<double> out, const std::string& what);

}  // namespace binio

}  // namespace divdir
