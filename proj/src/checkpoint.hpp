#pragma once

// Single-file checkpoints: 8-byte magic, uint32 format version, uint64 header
// length, JSON header, then the float32 state tensors in header order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rprloc/nn/tensor.hpp"

namespace rprloc::detail {

using StateView = std::vector<std::pair<std::string, const nn::Buffer<float>*>>;
using MutableStateView = std::vector<std::pair<std::string, nn::Buffer<float>*>>;

void write_checkpoint(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                      nlohmann::json header, const StateView& state);

// Reads the header only; the caller builds the model and then calls
// read_checkpoint_state with its parameter views.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path, const char (&magic)[8],
                                      std::uint32_t version);
void read_checkpoint_state(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                           const MutableStateView& state);

}  // namespace rprloc::detail
