#include <cstring>
#include <fstream>

#include "json.hpp"
#include "lfts/tensor.hpp"

namespace lfts::tensor {

namespace {

constexpr char kMagic[8] = {'L', 'F', 'T', 'S', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& where) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + where);
  return v;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem) {
  const auto bin = with_ext(stem, ".bin");
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + bin.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));

  nlohmann::json manifest;
  manifest["format"] = "lfts-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["binary"] = bin.filename().string();
  manifest["scalars"] = store.scalar_count();
  auto& params = manifest["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.dims) put<std::uint64_t>(out, d);
    const auto offset = static_cast<std::uint64_t>(out.tellp());
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    params.push_back({{"name", p.name}, {"dims", p.dims}, {"offset", offset}, {"count", p.value.size()}});
  }
  if (!out) throw std::runtime_error("failed writing " + bin.string());

  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  js << manifest.dump(2) << '\n';
  if (!js) throw std::runtime_error("failed writing checkpoint manifest for " + stem.string());
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& stem) {
  const auto bin = with_ext(stem, ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + bin.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(bin.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " is not supported");
  const auto count = get<std::uint32_t>(in, "count");
  if (count != store.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                             std::to_string(store.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    Parameter* p = store.find(name);
    if (!p) throw std::runtime_error("checkpoint parameter '" + name + "' not in model");
    const auto rank = get<std::uint32_t>(in, name);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(get<std::uint64_t>(in, name));
    if (dims != p->dims) throw std::runtime_error("checkpoint parameter '" + name + "' has a different shape");
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated in '" + name + "'");
  }
}

}  // namespace lfts::tensor
