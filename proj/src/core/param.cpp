#include "core/param.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/check.hpp"

namespace flowvid {

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kSpatial: return "spatial";
    case ParamGroup::kMotion: return "motion";
    case ParamGroup::kFlowBranch: return "flow_branch";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kCondition: return "condition";
  }
  return "?";
}

ParamGroup param_group_from_name(const std::string& name) {
  for (int i = 0; i < kNumParamGroups; ++i)
    if (name == param_group_name((ParamGroup)i)) return (ParamGroup)i;
  FV_CHECK(false, "unknown param group '" << name << "'");
  return ParamGroup::kSpatial;
}

Tensor ParamStore::add(const std::string& name, ParamGroup group, Tensor init) {
  FV_CHECK(find(name) == nullptr, "duplicate parameter name '" << name << "'");
  init.set_requires_grad(trainable_[(int)group]);
  entries_.push_back({name, group, init});
  return init;
}

const ParamStore::Entry* ParamStore::find(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

void ParamStore::set_trainable(ParamGroup g, bool trainable) {
  trainable_[(int)g] = trainable;
  for (Entry& e : entries_)
    if (e.group == g) e.t.set_requires_grad(trainable);
}

void ParamStore::zero_grads() {
  for (Entry& e : entries_) e.t.zero_grad();
}

size_t ParamStore::total_params() const {
  size_t n = 0;
  for (const Entry& e : entries_) n += e.t.numel();
  return n;
}

Adam::Adam(ParamStore& store, float lr, float beta1, float beta2, float eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(store.entries().size());
  v_.resize(store.entries().size());
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, (float)t_);
  const float bc2 = 1.0f - std::pow(beta2_, (float)t_);
  FV_CHECK(m_.size() == store_.entries().size(),
           "optimizer state out of sync with parameter store");
  for (size_t i = 0; i < store_.entries().size(); ++i) {
    ParamStore::Entry& e = store_.entries()[i];
    if (!store_.is_trainable(e.group) || !e.t.has_grad()) continue;
    const size_t n = e.t.numel();
    if (m_[i].empty()) {
      m_[i].assign(n, 0.0f);
      v_[i].assign(n, 0.0f);
    }
    float* w = e.t.data();
    const float* g = e.t.grad_data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (size_t j = 0; j < n; ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
      const float mh = m[j] / bc1;
      const float vh = v[j] / bc2;
      w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::save_state(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream meta(dir + "/adam.txt");
  FV_CHECK(meta.good(), "cannot write " << dir << "/adam.txt");
  meta << "t " << t_ << "\nlr " << lr_ << "\n";
  for (size_t i = 0; i < m_.size(); ++i) {
    if (m_[i].empty()) continue;
    const auto& e = store_.entries()[i];
    meta << "state " << e.name << "\n";
    Tensor tm = Tensor::from({(int)m_[i].size()}, m_[i]);
    Tensor tv = Tensor::from({(int)v_[i].size()}, v_[i]);
    write_ten(dir + "/adam_m." + e.name + ".ten", tm);
    write_ten(dir + "/adam_v." + e.name + ".ten", tv);
  }
}

void Adam::load_state(const std::string& dir) {
  std::ifstream meta(dir + "/adam.txt");
  FV_CHECK(meta.good(), "cannot read " << dir << "/adam.txt");
  std::string key;
  m_.assign(store_.entries().size(), {});
  v_.assign(store_.entries().size(), {});
  while (meta >> key) {
    if (key == "t") {
      meta >> t_;
    } else if (key == "lr") {
      meta >> lr_;
    } else if (key == "state") {
      std::string name;
      meta >> name;
      size_t idx = 0;
      bool found = false;
      for (size_t i = 0; i < store_.entries().size(); ++i)
        if (store_.entries()[i].name == name) {
          idx = i;
          found = true;
          break;
        }
      FV_CHECK(found, "adam state for unknown parameter '" << name << "'");
      Tensor tm = read_ten(dir + "/adam_m." + name + ".ten");
      Tensor tv = read_ten(dir + "/adam_v." + name + ".ten");
      FV_CHECK(tm.numel() == store_.entries()[idx].t.numel(),
               "adam state size mismatch for '" << name << "'");
      m_[idx].assign(tm.data(), tm.data() + tm.numel());
      v_[idx].assign(tv.data(), tv.data() + tv.numel());
    }
  }
}

}  // namespace flowvid
