#include "cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "core/check.hpp"

namespace flowvid {

RunConfig::RunConfig() {
  entries_ = {
      {"seed", "0", "master seed for the run"},
      {"init_seed", "1234", "model weight initialization seed"},
      {"resolution", "32", "frame height and width"},
      {"frames", "16", "frames per clip"},
      {"classes", "8", "number of scene classes / condition labels"},
      {"timesteps", "1000", "diffusion steps T of the training schedule"},
      {"beta_start", "0.0001", "linear schedule start"},
      {"beta_end", "0.02", "linear schedule end"},
      {"base_width", "32", "channel width at the top level"},
      {"levels", "3", "resolution levels (width doubles per level)"},
      {"cond_dim", "64", "condition token dimension"},
      {"cond_tokens", "4", "condition tokens per class"},
      {"time_dim", "64", "sinusoidal timestep feature size"},
      {"time_hidden", "128", "timestep embedding width"},
      {"frames_max", "32", "frame-position table size (>= frames+1)"},
      {"stage", "1", "training stage, 1 or 2"},
      {"epochs", "5", "training epochs"},
      {"lr", "0.002", "optimizer learning rate"},
      {"lambda", "0.1", "flow loss weight in stage 2"},
      {"batch_accum", "4", "micro-batches accumulated per optimizer step"},
      {"micro_batch", "1", "clips per micro-batch"},
      {"cond_dropout", "0.1", "null-condition rate during training"},
      {"max_steps", "0", "cap on training steps, 0 = none"},
      {"adapters_enabled", "1", "flow adapters on/off (ablation switch)"},
      {"infer_steps", "25", "inference denoising steps"},
      {"speedup_steps", "5", "early steps using latent interpolation"},
      {"guidance_scale", "15", "classifier-free guidance scale"},
      {"use_anchor", "1", "prepend an inpainted anchor frame"},
      {"use_interpolation", "1", "flow-warped latent interpolation"},
      {"use_cache", "1", "flow attention memory bank"},
      {"class_id", "0", "condition class for inference"},
      {"count", "16", "samples to generate"},
      {"kind", "br", "mask kind: br or or"},
      {"ppm", "0", "also dump frames as ppm"},
      {"bench_runs", "5", "timed runs per bench variant (median)"},
  };
}

const RunConfig::Entry* RunConfig::find(const std::string& key) const {
  for (const Entry& e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

RunConfig::Entry* RunConfig::find(const std::string& key) {
  for (Entry& e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

std::string nearest_key(const std::string& key, const std::vector<std::string>& known) {
  size_t best = (size_t)-1;
  std::string who;
  for (const std::string& k : known) {
    const size_t n = key.size(), m = k.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
      cur[0] = i;
      for (size_t j = 1; j <= m; ++j) {
        const size_t del = prev[j] + 1, ins = cur[j - 1] + 1;
        const size_t sub = prev[j - 1] + (key[i - 1] == k[j - 1] ? 0 : 1);
        cur[j] = std::min({del, ins, sub});
      }
      std::swap(prev, cur);
    }
    if (prev[m] < best) {
      best = prev[m];
      who = k;
    }
  }
  return who;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  Entry* e = find(key);
  if (!e) {
    std::vector<std::string> known;
    for (const Entry& k : entries_) known.push_back(k.key);
    FV_CHECK(false, "unknown config key '" << key << "' (did you mean '"
                                           << nearest_key(key, known) << "'?)");
  }
  e->value = value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  FV_CHECK(f.good(), "cannot read config file: " << path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    line = line.substr(first, last - first + 1);
    const size_t eq = line.find('=');
    FV_CHECK(eq != std::string::npos, path << ":" << lineno << ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t'))
      value.erase(value.begin());
    set(key, value);
  }
}

void RunConfig::apply_overrides(const std::vector<std::string>& kvs) {
  for (const std::string& kv : kvs) {
    const size_t eq = kv.find('=');
    FV_CHECK(eq != std::string::npos, "override '" << kv << "' is not key=value");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

int RunConfig::get_int(const std::string& key) const { return (int)get_long(key); }

long RunConfig::get_long(const std::string& key) const {
  const Entry* e = find(key);
  FV_CHECK(e, "unknown config key '" << key << "'");
  try {
    return std::stol(e->value);
  } catch (...) {
    FV_CHECK(false, "config key '" << key << "': '" << e->value << "' is not an integer");
  }
  return 0;
}

float RunConfig::get_float(const std::string& key) const {
  const Entry* e = find(key);
  FV_CHECK(e, "unknown config key '" << key << "'");
  try {
    return std::stof(e->value);
  } catch (...) {
    FV_CHECK(false, "config key '" << key << "': '" << e->value << "' is not a number");
  }
  return 0;
}

bool RunConfig::get_bool(const std::string& key) const {
  const Entry* e = find(key);
  FV_CHECK(e, "unknown config key '" << key << "'");
  if (e->value == "1" || e->value == "true" || e->value == "yes") return true;
  if (e->value == "0" || e->value == "false" || e->value == "no") return false;
  FV_CHECK(false, "config key '" << key << "': '" << e->value << "' is not a boolean");
  return false;
}

const std::string& RunConfig::get_str(const std::string& key) const {
  const Entry* e = find(key);
  FV_CHECK(e, "unknown config key '" << key << "'");
  return e->value;
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream f(path);
  FV_CHECK(f.good(), "cannot write resolved config: " << path);
  for (const Entry& e : entries_) f << e.key << "=" << e.value << "\n";
}

std::string RunConfig::help_text() const {
  std::ostringstream os;
  for (const Entry& e : entries_)
    os << "  " << e.key << " (default " << e.value << "): " << e.help << "\n";
  return os.str();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.res = get_int("resolution");
  m.frames_max = get_int("frames_max");
  m.base_width = get_int("base_width");
  m.levels = get_int("levels");
  m.cond_dim = get_int("cond_dim");
  m.cond_tokens = get_int("cond_tokens");
  m.num_classes = get_int("classes");
  m.time_dim = get_int("time_dim");
  m.time_hidden = get_int("time_hidden");
  FV_CHECK(m.frames_max >= get_int("frames") + 1,
           "frames_max " << m.frames_max << " too small for frames " << get_int("frames")
                         << " plus anchor");
  return m;
}

}  // namespace flowvid
