#include "hcmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hcmt/errors.hpp"

namespace hcmt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace {
constexpr char kMagic[8] = {'H', 'C', 'M', 'T', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
  return {{"in_channels", spec.in_channels},
          {"num_classes", spec.num_classes},
          {"num_scales", spec.num_scales},
          {"base_channels", spec.base_channels},
          {"encoder_depths", spec.encoder_depths},
          {"activation", to_string(spec.activation)},
          {"normalization", to_string(spec.normalization)},
          {"norm_groups", spec.norm_groups}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.num_scales = j.at("num_scales").get<int>();
  spec.base_channels = j.at("base_channels").get<int>();
  spec.encoder_depths = j.at("encoder_depths").get<std::vector<int>>();
  spec.activation = act_kind_from_string(j.at("activation").get<std::string>());
  spec.normalization = norm_kind_from_string(j.at("normalization").get<std::string>());
  spec.norm_groups = j.at("norm_groups").get<int>();
  spec.validate();
  return spec;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.tensors) {
    dir.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
    offset += tensor.size() * sizeof(double);
  }
  nlohmann::json header = {{"format_version", kFormatVersion},
                           {"network_spec", network_spec_to_json(ckpt.spec)},
                           {"iteration", ckpt.iteration},
                           {"extra", ckpt.extra},
                           {"tensors", dir}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, tensor] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  if (!out) throw IoError("short write while saving checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint archive: " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.at("format_version").get<std::uint32_t>() != kFormatVersion)
    throw IoError("unsupported checkpoint format version in " + path.string());

  Checkpoint ckpt;
  ckpt.spec = network_spec_from_json(header.at("network_spec"));
  ckpt.iteration = header.at("iteration").get<std::int64_t>();
  ckpt.extra = header.value("extra", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated tensor '" + name + "' in " + path.string());
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void load_params_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix, VNet& net) {
  for (auto& p : net.params()) {
    const auto it = ckpt.tensors.find(prefix + "/" + p.name);
    if (it == ckpt.tensors.end())
      throw IoError("checkpoint missing tensor '" + prefix + "/" + p.name + "'");
    if (it->second.shape() != p.value->shape())
      throw IoError("checkpoint tensor '" + prefix + "/" + p.name + "' has shape " +
                    shape_str(it->second.shape()) + ", expected " + shape_str(p.value->shape()));
    *p.value = it->second;
  }
}

void store_params_in_checkpoint(Checkpoint& ckpt, const std::string& prefix, VNet& net) {
  for (auto& p : net.params()) ckpt.tensors[prefix + "/" + p.name] = *p.value;
}

}  // namespace hcmt
