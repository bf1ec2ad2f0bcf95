#ifndef HCMT_CHECKPOINT_HPP
#define HCMT_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>

#include "hcmt/backbone.hpp"
#include "hcmt/tensor.hpp"

#include <json.hpp>

namespace hcmt {

nlohmann::json network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

// Named-tensor archive with the owning NetworkSpec embedded. Tensor names are
// namespaced by role: "student/...", "teacher/...", "opt/momentum/...".
struct Checkpoint {
  NetworkSpec spec;
  std::int64_t iteration = 0;
  std::map<std::string, Tensor> tensors;
  nlohmann::json extra = nlohmann::json::object();

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies all parameters with the given prefix into the network (throws
// IoError when a parameter is missing or shaped differently).
void load_params_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix, VNet& net);
void store_params_in_checkpoint(Checkpoint& ckpt, const std::string& prefix, VNet& net);

}  // namespace hcmt

#endif  // HCMT_CHECKPOINT_HPP
