#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "rprloc/errors.hpp"

namespace rprloc::detail {

using nlohmann::json;

namespace {

constexpr std::uint64_t kMaxHeader = 1u << 26;

json read_header(std::ifstream& in, const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version) {
  char got[8];
  std::uint32_t v = 0;
  std::uint64_t len = 0;
  in.read(got, sizeof(got));
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(got, magic, sizeof(got)) != 0) {
    fail(ErrorKind::kIo, path.string() + " is not a " + std::string(magic, 8) + " checkpoint");
  }
  if (v != version) fail(ErrorKind::kIo, path.string() + ": unsupported checkpoint version " + std::to_string(v));
  if (len > kMaxHeader) fail(ErrorKind::kIo, path.string() + ": corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::kIo, path.string() + ": truncated checkpoint header");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": corrupt checkpoint header: " + e.what());
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version, json header,
                      const StateView& state) {
  json tensors = json::array();
  for (const auto& [name, values] : state) tensors.push_back({{"name", name}, {"size", values->size()}});
  header["format_version"] = version;
  header["dtype"] = "float32";
  header["tensors"] = tensors;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  const std::uint64_t len = text.size();
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, values] : state) {
    out.write(reinterpret_cast<const char*>(values->data()), static_cast<std::streamsize>(values->size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::kIo, "short write to checkpoint " + path.string());
}

json read_checkpoint_header(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  return read_header(in, path, magic, version);
}

void read_checkpoint_state(const std::filesystem::path& path, const char (&magic)[8], std::uint32_t version,
                           const MutableStateView& state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const json header = read_header(in, path, magic, version);
  const json& tensors = header.at("tensors");
  if (tensors.size() != state.size()) fail(ErrorKind::kIo, path.string() + ": checkpoint does not match architecture");
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, values] = state[i];
    if (tensors[i].at("name").get<std::string>() != name || tensors[i].at("size").get<std::size_t>() != values->size()) {
      fail(ErrorKind::kIo, path.string() + ": tensor " + name + " does not match architecture");
    }
    in.read(reinterpret_cast<char*>(values->data()), static_cast<std::streamsize>(values->size() * sizeof(float)));
  }
  if (!in) fail(ErrorKind::kIo, path.string() + ": truncated checkpoint");
}

}  // namespace rprloc::detail
