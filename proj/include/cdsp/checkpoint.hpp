// Checkpoints: a directory of binary tensor files plus a manifest listing
// parameter names and shapes.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cdsp/tensor.hpp"

namespace cdsp {

using ParamMap = std::vector<std::pair<std::string, TensorData<float>>>;

void save_checkpoint(const std::string& dir, const ParamMap& params);
ParamMap load_checkpoint(const std::string& dir);

// Returns the tensor for `name`; errors when absent.
const TensorData<float>& checkpoint_get(const ParamMap& params, const std::string& name);

}  // namespace cdsp
