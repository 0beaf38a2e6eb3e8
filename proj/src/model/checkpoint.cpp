#include "model/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/check.hpp"

namespace flowvid {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const ParamStore& store, const ModelConfig& cfg) {
  fs::create_directories(dir);
  cfg.save(dir + "/model.cfg");
  std::ofstream manifest(dir + "/manifest.txt");
  FV_CHECK(manifest.good(), "cannot write " << dir << "/manifest.txt");
  for (const auto& e : store.entries()) {
    const std::string file = e.name + ".ten";
    manifest << "param " << e.name << " " << param_group_name(e.group) << " " << file << "\n";
    write_ten(dir + "/" + file, e.t);
  }
}

void load_checkpoint(const std::string& dir, ParamStore& store) {
  std::ifstream manifest(dir + "/manifest.txt");
  FV_CHECK(manifest.good(), "cannot read " << dir << "/manifest.txt");
  std::set<std::string> loaded;
  std::string tag;
  while (manifest >> tag) {
    FV_CHECK(tag == "param", "unexpected token '" << tag << "' in manifest");
    std::string name, group, file;
    manifest >> name >> group >> file;
    bool found = false;
    for (auto& e : store.entries()) {
      if (e.name != name) continue;
      FV_CHECK(param_group_name(e.group) == group,
               "parameter '" << name << "' group mismatch: checkpoint says " << group);
      Tensor t = read_ten(dir + "/" + file);
      FV_CHECK(t.shape() == e.t.shape(), "parameter '" << name << "' shape "
                                                       << shape_str(t.shape()) << " vs model "
                                                       << shape_str(e.t.shape()));
      std::memcpy(e.t.data(), t.data(), t.numel() * sizeof(float));
      found = true;
      break;
    }
    FV_CHECK(found, "checkpoint parameter '" << name << "' not present in this model");
    loaded.insert(name);
  }
  for (const auto& e : store.entries())
    FV_CHECK(loaded.count(e.name), "model parameter '" << e.name << "' missing from checkpoint "
                                                       << dir);
}

ModelConfig checkpoint_config(const std::string& dir) {
  return ModelConfig::load(dir + "/model.cfg");
}

}  // namespace flowvid
