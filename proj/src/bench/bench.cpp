#include "bench/bench.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "core/check.hpp"
#include "metrics/metrics.hpp"

namespace flowvid {

const std::vector<std::string> kBenchVariants = {
    "baseline-no-flow", "flow-every-step", "flow-first-step", "+interpolation", "+cache"};

SamplerConfig variant_config(const std::string& variant, const SamplerConfig& base) {
  SamplerConfig c = base;
  c.flow_branch_every_step = false;
  if (variant == "baseline-no-flow") {
    c.adapters_enabled = false;
    c.use_interpolation = false;
    c.use_cache = false;
  } else if (variant == "flow-every-step") {
    c.adapters_enabled = true;
    c.use_interpolation = false;
    c.use_cache = false;
    c.flow_branch_every_step = true;
  } else if (variant == "flow-first-step") {
    c.adapters_enabled = true;
    c.use_interpolation = false;
    c.use_cache = false;
  } else if (variant == "+interpolation") {
    c.adapters_enabled = true;
    c.use_interpolation = true;
    c.use_cache = false;
  } else if (variant == "+cache") {
    c.adapters_enabled = true;
    c.use_interpolation = true;
    c.use_cache = true;
  } else {
    FV_CHECK(false, "unknown bench variant '" << variant << "'");
  }
  return c;
}

Tensor sample_clip(Sampler& sampler, const SamplerConfig& cfg, const ClipSample& clip) {
  FV_CHECK(clip.mask.defined(), "bench/eval sample has no mask");
  SampleInputs in;
  in.mask = clip.mask;
  in.v_m = clip.frames;  // the sampler re-applies the mask
  in.flow_source = clip.flow;
  in.cond = Cond{clip.class_id, false};
  if (cfg.use_anchor) {
    in.anchor = Tensor(Shape{clip.frames.dim(1), clip.frames.dim(2), clip.frames.dim(3)});
    std::memcpy(in.anchor.data(), clip.frames.data(), in.anchor.numel() * sizeof(float));
  }
  return sampler.sample(cfg, in);
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(Sampler& sampler, const SamplerConfig& base,
                                const std::vector<std::string>& variants,
                                const std::vector<ClipSample>& eval_set, int timed_runs) {
  FV_CHECK(!eval_set.empty(), "bench: empty eval set");
  FV_CHECK(timed_runs >= 1, "bench: need at least one timed run");
  std::vector<BenchRow> rows;
  for (const std::string& name : variants) {
    const SamplerConfig cfg = variant_config(name, base);
    BenchRow row;
    row.variant = name;

    // warm-up, excluded from timing
    sample_clip(sampler, cfg, eval_set[0]);

    std::vector<double> walls;
    double psnr_acc = 0, ssim_acc = 0;
    for (int r = 0; r < timed_runs; ++r) {
      double wall = 0;
      RunStats stats;
      for (const ClipSample& clip : eval_set) {
        Tensor out = sample_clip(sampler, cfg, clip);
        wall += sampler.last_wall_ms();
        stats = sampler.stats();  // per-clip counters are identical across runs
        if (r == 0) {
          psnr_acc += psnr(out, clip.frames);
          ssim_acc += ssim(out, clip.frames);
        }
      }
      walls.push_back(wall);
      if (r == 0) {
        row.denoiser_frame_forwards = stats.denoiser_frame_forwards;
        row.denoiser_calls = stats.denoiser_calls;
        row.flow_branch_calls = stats.flow_branch_calls;
        row.kv_projection_calls = stats.kv_total();
      }
    }
    row.wall_ms = median(walls);
    row.wall_ms_min = *std::min_element(walls.begin(), walls.end());
    row.wall_ms_max = *std::max_element(walls.begin(), walls.end());
    row.psnr = psnr_acc / (double)eval_set.size();
    row.ssim = ssim_acc / (double)eval_set.size();
    rows.push_back(row);
  }

  for (const BenchRow& ref : rows)
    if (ref.variant == "flow-every-step")
      for (BenchRow& r : rows)
        r.speedup_vs_flow_every_step = (ref.wall_ms - r.wall_ms) / ref.wall_ms;
  return rows;
}

std::vector<SweepRow> sweep_speedup(Sampler& sampler, const SamplerConfig& base,
                                    const std::vector<int>& s_values,
                                    const std::vector<ClipSample>& eval_set, int timed_runs) {
  FV_CHECK(std::is_sorted(s_values.begin(), s_values.end()),
           "sweep: S values must be ascending");
  std::vector<SweepRow> rows;
  for (int s : s_values) {
    SamplerConfig cfg = variant_config("+cache", base);
    cfg.speedup_steps = s;
    SweepRow row;
    row.S = s;
    sample_clip(sampler, cfg, eval_set[0]);  // warm-up
    std::vector<double> walls;
    for (int r = 0; r < timed_runs; ++r) {
      double wall = 0;
      for (const ClipSample& clip : eval_set) {
        Tensor out = sample_clip(sampler, cfg, clip);
        wall += sampler.last_wall_ms();
        if (r == 0) {
          row.psnr += psnr(out, clip.frames);
          row.ssim += ssim(out, clip.frames);
        }
      }
      walls.push_back(wall);
    }
    row.psnr /= (double)eval_set.size();
    row.ssim /= (double)eval_set.size();
    row.wall_ms = median(walls);
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream f(path);
  FV_CHECK(f.good(), "cannot write " << path);
  f << "variant,wall_ms,wall_ms_min,wall_ms_max,denoiser_frame_forwards,denoiser_calls,"
       "flow_branch_calls,kv_projection_calls,psnr,ssim,speedup_vs_flow_every_step\n";
  for (const BenchRow& r : rows)
    f << r.variant << "," << r.wall_ms << "," << r.wall_ms_min << "," << r.wall_ms_max << ","
      << r.denoiser_frame_forwards << "," << r.denoiser_calls << "," << r.flow_branch_calls
      << "," << r.kv_projection_calls << "," << r.psnr << "," << r.ssim << ","
      << r.speedup_vs_flow_every_step << "\n";
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  FV_CHECK(f.good(), "cannot write " << path);
  f << "S,psnr,ssim,wall_ms\n";
  for (const SweepRow& r : rows)
    f << r.S << "," << r.psnr << "," << r.ssim << "," << r.wall_ms << "\n";
}

}  // namespace flowvid
