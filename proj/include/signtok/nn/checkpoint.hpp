#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "signtok/nn/layers.hpp"

namespace signtok::nn {

// Versioned binary container:
//   "SGCK" | u32 version | str meta | u64 epoch | str rng_state
//   | u32 n | n x (str name | str component | u8 trainable | u64 rows | u64 cols | f64[rows*cols])
//   | u32 m | m x (str name | u64 len | f64[len])
// where str = u32 length + bytes; all integers and floats little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    Component component = Component::frame_adapter;
    bool trainable = true;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Scalar> values;
  };

  std::string meta;  // free-form JSON (config snapshot)
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<Entry> params;
  std::map<std::string, std::vector<Scalar>> optimizer;

  const Entry* find(std::string_view name) const;
  bool has_component(Component c) const;
};

Checkpoint capture(const ParameterSet& params);
// Copies every entry whose component is in `components` into the same-named
// parameter. Missing names or shape mismatches throw.
void restore(ParameterSet& params, const Checkpoint& ckpt, const std::vector<Component>& components);
// Restores all entries present in the set.
void restore_all(ParameterSet& params, const Checkpoint& ckpt);

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace signtok::nn
