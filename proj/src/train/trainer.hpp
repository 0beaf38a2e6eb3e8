#pragma once

#include <string>
#include <vector>

#include "core/param.hpp"
#include "data/synth.hpp"
#include "diffusion/schedule.hpp"
#include "model/denoiser.hpp"

namespace flowvid {

struct TrainConfig {
  int stage = 1;
  int epochs = 5;
  float lr = 2e-3f;
  float lambda = 0.1f;  // flow loss weight, stage 2 only
  int batch_accum = 4;
  int micro_batch = 1;  // clips per train_step
  uint64_t seed = 0;
  float cond_dropout = 0.1f;     // null-condition rate, feeds guidance later
  bool use_anchor = true;        // training mirrors the anchored inference layout
  bool adapters_enabled = true;  // stage-2 ablation switch
  int max_steps = 0;             // 0 = run all epochs
  std::string out_dir;
  std::string resume_from;
  void validate() const;
};

struct LossReport {
  double diff = 0.0, flow = 0.0, total = 0.0;
  bool has_flow = false;
};

// Two-stage loop. Stage 1 trains motion layers on the denoising objective;
// stage 2 adds the flow branch and adapters with the weighted flow term.
class Trainer {
 public:
  Trainer(Model& model, const NoiseSchedule& schedule, const TrainConfig& cfg);

  // One micro-batch: forward, backward, gradient accumulation; applies the
  // optimizer every batch_accum calls. Throws on non-finite loss after
  // writing a diagnostic dump.
  LossReport train_step(const std::vector<const ClipSample*>& batch,
                        const std::vector<const Tensor*>& masks);

  // Full run over the dataset: shuffles and regenerates masks per epoch,
  // checkpoints per epoch into out_dir, supports resume.
  void run(const std::vector<ClipSample>& dataset);

  const std::vector<LossReport>& history() const { return history_; }
  Adam& optimizer() { return *adam_; }
  Rng& rng() { return rng_; }

 private:
  LossReport micro_step(const ClipSample& clip, const Tensor& mask);
  void save_state(const std::string& dir, int epoch, int step_in_epoch);
  void load_state(const std::string& dir, int& epoch, int& step_in_epoch);

  Model& model_;
  NoiseSchedule schedule_;
  TrainConfig cfg_;
  std::unique_ptr<Adam> adam_;
  Rng rng_;
  long micro_steps_ = 0;
  std::vector<LossReport> history_;
};

}  // namespace flowvid
