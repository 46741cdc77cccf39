#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>

#include "aaf/tensor.hpp"

// Parameter files: a text header
//
//   AAFPARAMS v1
//   <count>
//   <name> <d0>x<d1>...      (one line per tensor)
//   END
//
// followed, per tensor in header order, by a little-endian uint64 value
// count and that many little-endian IEEE-754 doubles.
namespace aaf::fsod {

class ParamIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_params(const std::filesystem::path& path, std::span<const NamedParam> params);

/// Overwrites the values of `params` in place. Names and shapes must match
/// the file exactly.
void load_params(const std::filesystem::path& path, std::span<const NamedParam> params);

}  // namespace aaf::fsod
