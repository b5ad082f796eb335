#include "triseg/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "triseg/error.hpp"

namespace triseg {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'S', 'E', 'G', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  require(static_cast<bool>(in), ErrorCode::IoError, "truncated model file " + path.string());
  return value;
}

}  // namespace

const Tensor& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  require(it != arrays.end(), ErrorCode::MissingModel, "model file has no array '" + name + "'");
  return it->second;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    const std::string manifest = archive.manifest.dump();
    put<std::uint64_t>(out, manifest.size());
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.arrays.size()));
    for (const auto& [name, t] : archive.arrays) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    require(static_cast<bool>(out), ErrorCode::IoError, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::IoError, "cannot move " + tmp.string() + " into place: " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::MissingModel, "cannot open model file " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorCode::IoError,
          path.string() + " is not a model file");
  const auto version = get<std::uint32_t>(in, path);
  require(version == kVersion, ErrorCode::IoError, "unsupported model file version " + std::to_string(version));
  Archive a;
  const auto mlen = get<std::uint64_t>(in, path);
  require(mlen < (1u << 30), ErrorCode::IoError, "corrupt manifest length in " + path.string());
  std::string manifest(mlen, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(mlen));
  require(static_cast<bool>(in), ErrorCode::IoError, "truncated model file " + path.string());
  try {
    a.manifest = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, "bad manifest in " + path.string() + ": " + e.what());
  }
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto nlen = get<std::uint32_t>(in, path);
    require(nlen < 4096, ErrorCode::IoError, "corrupt array name in " + path.string());
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rank = get<std::uint32_t>(in, path);
    require(rank <= 8, ErrorCode::IoError, "corrupt array rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) {
      d = get<std::int32_t>(in, path);
      require(d >= 0, ErrorCode::IoError, "negative dimension in " + path.string());
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    require(static_cast<bool>(in), ErrorCode::IoError, "truncated model file " + path.string());
    a.arrays.emplace(std::move(name), std::move(t));
  }
  return a;
}

}  // namespace triseg
