#pragma once

#include <string>
#include <vector>

#include "data/synth.hpp"
#include "diffusion/schedule.hpp"
#include "model/denoiser.hpp"
#include "sampler/sampler.hpp"

namespace flowvid {

// Efficiency harness: per-variant wall clock (median of timed runs, warm-up
// excluded), call counters, and quality on a fixed eval set.

struct BenchRow {
  std::string variant;
  double wall_ms = 0, wall_ms_min = 0, wall_ms_max = 0;
  long denoiser_frame_forwards = 0;
  long denoiser_calls = 0;
  long flow_branch_calls = 0;
  long kv_projection_calls = 0;
  double psnr = 0, ssim = 0;
  double speedup_vs_flow_every_step = 0;  // fractional reduction
};

struct SweepRow {
  int S = 0;
  double psnr = 0, ssim = 0, wall_ms = 0;
};

// The five efficiency variants. "flow-every-step" re-runs the flow branch
// each step and is the naive reference the speedup column is computed
// against; all others complete flow once.
extern const std::vector<std::string> kBenchVariants;

SamplerConfig variant_config(const std::string& variant, const SamplerConfig& base);

std::vector<BenchRow> run_bench(Sampler& sampler, const SamplerConfig& base,
                                const std::vector<std::string>& variants,
                                const std::vector<ClipSample>& eval_set, int timed_runs);

std::vector<SweepRow> sweep_speedup(Sampler& sampler, const SamplerConfig& base,
                                    const std::vector<int>& s_values,
                                    const std::vector<ClipSample>& eval_set, int timed_runs);

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

// Shared by bench and eval paths: one full sampling run over a sample.
Tensor sample_clip(Sampler& sampler, const SamplerConfig& cfg, const ClipSample& clip);

}  // namespace flowvid
