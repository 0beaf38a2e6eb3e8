#pragma once

#include <string>

#include "core/param.hpp"
#include "model/common.hpp"

namespace flowvid {

// Checkpoint directory: model.cfg, manifest.txt mapping parameter names to
// groups and ".ten" files, one file per parameter.
void save_checkpoint(const std::string& dir, const ParamStore& store, const ModelConfig& cfg);

// Loads parameter values into an existing store; names and shapes must match
// the manifest exactly.
void load_checkpoint(const std::string& dir, ParamStore& store);

ModelConfig checkpoint_config(const std::string& dir);

}  // namespace flowvid
