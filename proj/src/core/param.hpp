#pragma once

#include <array>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace flowvid {

enum class ParamGroup { kSpatial = 0, kMotion, kFlowBranch, kAdapter, kCondition };

constexpr int kNumParamGroups = 5;

const char* param_group_name(ParamGroup g);
ParamGroup param_group_from_name(const std::string& name);

// Flat registry of named model parameters. Every parameter belongs to exactly
// one group; trainability is flipped per group when the training stage is
// set, never per step.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor t;
  };

  Tensor add(const std::string& name, ParamGroup group, Tensor init);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Entry* find(const std::string& name) const;

  void set_trainable(ParamGroup g, bool trainable);
  bool is_trainable(ParamGroup g) const { return trainable_[(int)g]; }
  void zero_grads();
  size_t total_params() const;

 private:
  std::vector<Entry> entries_;
  std::array<bool, kNumParamGroups> trainable_{true, true, true, true, true};
};

// Adam with bias correction; state buffers are index-aligned with the store.
class Adam {
 public:
  Adam(ParamStore& store, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f);

  // Applies one update to every trainable parameter that has a gradient.
  // Frozen groups are never touched.
  void step();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  long step_count() const { return t_; }

  // Checkpoint support.
  void save_state(const std::string& dir) const;
  void load_state(const std::string& dir);

 private:
  ParamStore& store_;
  float lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace flowvid
