#include "model/denoiser.hpp"

#include <cmath>
#include <fstream>

#include "core/check.hpp"
#include "core/ops.hpp"

namespace flowvid {

void ModelConfig::validate() const {
  FV_CHECK(levels >= 2, "model: need at least 2 levels, got " << levels);
  const int div = 1 << (levels - 1);
  FV_CHECK(res % div == 0, "model: resolution " << res << " not divisible by " << div);
  FV_CHECK(base_width >= 4 && cond_dim > 0 && cond_tokens > 0 && num_classes > 0,
           "model: bad widths/condition sizes");
  FV_CHECK(time_dim % 2 == 0, "model: time_dim must be even");
  FV_CHECK(frames_max >= 2, "model: frames_max too small");
}

void ModelConfig::save(const std::string& path) const {
  std::ofstream f(path);
  FV_CHECK(f.good(), "cannot write " << path);
  f << "res=" << res << "\nframes_max=" << frames_max << "\nin_channels=" << in_channels
    << "\nbase_width=" << base_width << "\nlevels=" << levels << "\ncond_dim=" << cond_dim
    << "\ncond_tokens=" << cond_tokens << "\nnum_classes=" << num_classes
    << "\ntime_dim=" << time_dim << "\ntime_hidden=" << time_hidden << "\n";
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream f(path);
  FV_CHECK(f.good(), "cannot read " << path);
  ModelConfig c;
  std::string line;
  while (std::getline(f, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const int val = std::stoi(line.substr(eq + 1));
    if (key == "res") c.res = val;
    else if (key == "frames_max") c.frames_max = val;
    else if (key == "in_channels") c.in_channels = val;
    else if (key == "base_width") c.base_width = val;
    else if (key == "levels") c.levels = val;
    else if (key == "cond_dim") c.cond_dim = val;
    else if (key == "cond_tokens") c.cond_tokens = val;
    else if (key == "num_classes") c.num_classes = val;
    else if (key == "time_dim") c.time_dim = val;
    else if (key == "time_hidden") c.time_hidden = val;
    else FV_CHECK(false, "unknown model config key '" << key << "' in " << path);
  }
  c.validate();
  return c;
}

std::pair<int, int> flow_pair_range(int clip_index, int num_pairs) {
  FV_CHECK(num_pairs >= 1, "flow_pair_range: no pairs");
  if (clip_index < 0) return {0, 1};  // anchor rides on the first pair
  const int start = clip_index > 0 ? clip_index - 1 : 0;
  const int end = clip_index < num_pairs ? clip_index : num_pairs - 1;
  FV_CHECK(end >= start, "flow_pair_range: frame " << clip_index << " beyond " << num_pairs
                                                   << " pairs");
  return {start, end - start + 1};
}

int frame_position(int clip_index, bool anchored) {
  if (clip_index < 0) return 0;
  return anchored ? clip_index + 1 : clip_index;
}

Denoiser::Block Denoiser::make_block(ParamStore& ps, const std::string& name, int channels,
                                     bool with_adapter, Rng& rng) {
  Block b;
  b.res = ResConvBlock(ps, name + ".res", ParamGroup::kSpatial, channels, rng, cfg_.time_hidden);
  b.sattn = SpatialSelfAttention(ps, name + ".sattn", ParamGroup::kSpatial, channels, rng);
  b.cattn = ConditionCrossAttention(ps, name + ".cattn", ParamGroup::kSpatial, channels,
                                    cfg_.cond_dim, rng);
  b.tattn = TemporalAttention(ps, name + ".tattn", ParamGroup::kMotion, channels,
                              cfg_.frames_max, rng);
  b.has_adapter = with_adapter;
  if (with_adapter)
    b.adapter = AdapterLayer(ps, name + ".adapter", ParamGroup::kAdapter, channels, rng);
  return b;
}

Denoiser::Denoiser(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int L = cfg.levels;
  cond_table_ = ps.add("cond.table", ParamGroup::kCondition,
                       Tensor::randn({cfg.num_classes + 1, cfg.cond_tokens * cfg.cond_dim}, rng,
                                     1.0f));
  time_l1_ = LinearLayer(ps, "time.l1", ParamGroup::kSpatial, cfg.time_dim, cfg.time_hidden, rng,
                         1.0f / std::sqrt((float)cfg.time_dim));
  time_l2_ = LinearLayer(ps, "time.l2", ParamGroup::kSpatial, cfg.time_hidden, cfg.time_hidden,
                         rng, 1.0f / std::sqrt((float)cfg.time_hidden));
  stem_ = Conv2dLayer(ps, "stem", ParamGroup::kSpatial, 2 * cfg.in_channels + 1, cfg.width(0), 3,
                      1, 1, rng);
  for (int l = 0; l + 1 < L; ++l) {
    down_.push_back(make_block(ps, "down" + std::to_string(l), cfg.width(l), false, rng));
    downsample_.emplace_back(ps, "ds" + std::to_string(l), ParamGroup::kSpatial, cfg.width(l),
                             cfg.width(l + 1), 3, 2, 1, rng);
  }
  mid_ = make_block(ps, "mid", cfg.width(L - 1), false, rng);
  for (int i = 0; i < L; ++i) {
    const int w = cfg.width(L - 1 - i);
    up_.push_back(make_block(ps, "up" + std::to_string(i), w, true, rng));
    if (i + 1 < L) {
      const int wn = cfg.width(L - 2 - i);
      up_conv_.emplace_back(ps, "us" + std::to_string(i), ParamGroup::kSpatial, w, wn, 3, 1, 1,
                            rng);
      skip_merge_.emplace_back(ps, "merge" + std::to_string(i), ParamGroup::kSpatial, 2 * wn, wn,
                               1, 1, 0, rng);
    }
  }
  head_norm_ = ChannelNorm(ps, "head_norm", ParamGroup::kSpatial, cfg.width(0));
  head_ = Conv2dLayer(ps, "head", ParamGroup::kSpatial, cfg.width(0), cfg.in_channels, 3, 1, 1,
                      rng);
}

Tensor Denoiser::cond_tokens(const Cond& cond) const {
  const int row = cond.is_null ? cfg_.num_classes : cond.class_id;
  FV_CHECK(row >= 0 && row <= cfg_.num_classes,
           "condition class " << cond.class_id << " out of " << cfg_.num_classes);
  Tensor r = ops::row_gather(cond_table_, {row});
  return r.reshaped({cfg_.cond_tokens, cfg_.cond_dim});
}

Denoiser::ScaleKV Denoiser::project_scale(int scale, const Tensor& feats_scale) {
  const Block& blk = up_[scale];
  FV_CHECK(feats_scale.rank() == 4 && feats_scale.dim(1) == blk.adapter.channels,
           "flow features at scale " << scale << " have shape " << shape_str(feats_scale.shape())
                                     << ", expected channels " << blk.adapter.channels);
  const int P = feats_scale.dim(0);
  const int hw = feats_scale.dim(2) * feats_scale.dim(3);
  Tensor tokens = ops::permute(feats_scale, {0, 2, 3, 1}).reshaped({P * hw, blk.adapter.channels});
  ScaleKV kv;
  kv.k = ops::linear_nobias(tokens, blk.adapter.key_proj);
  kv.v = ops::linear_nobias(tokens, blk.adapter.value_proj);
  if (stats_ && scale < (int)stats_->kv_projection_calls.size())
    ++stats_->kv_projection_calls[scale];
  return kv;
}

void Denoiser::fill_bank(const MultiScaleFlowFeatures& feats, MemoryBank& bank) {
  FV_CHECK(!bank.all_filled() && bank.scales.empty(),
           "memory bank already filled; entries are immutable for the run");
  FV_CHECK((int)feats.scales.size() == cfg_.levels,
           "fill_bank: " << feats.scales.size() << " scales, expected " << cfg_.levels);
  NoGradGuard ng;
  bank.scales.resize(cfg_.levels);
  for (int s = 0; s < cfg_.levels; ++s) {
    ScaleKV kv = project_scale(s, feats.scales[s]);
    bank.scales[s].keys = kv.k;
    bank.scales[s].values = kv.v;
    bank.scales[s].filled = true;
  }
}

Tensor Denoiser::run_block(const Block& blk, Tensor x, const Tensor& temb, const Tensor& cond,
                           const std::vector<int>& frame_pos, const ScaleKV* kv,
                           const std::vector<std::pair<int, int>>& pair_ranges) {
  x = blk.res.forward(x, temb);
  x = blk.sattn.forward(x);
  x = blk.cattn.forward(x, cond);
  if (kv) {
    const int F = x.dim(0), H = x.dim(2), W = x.dim(3), C = blk.cattn.channels;
    const int hw = H * W;
    FV_CHECK(kv->k.dim(0) % hw == 0, "adapter tokens misaligned with scale resolution");
    Tensor q = blk.cattn.project_queries(x);  // (F, HW, C)
    std::vector<Tensor> outs;
    outs.reserve(F);
    const float att_scale = 1.0f / std::sqrt((float)C);
    for (int f = 0; f < F; ++f) {
      Tensor qf = ops::slice(q, 0, f, 1).reshaped({hw, C});
      const auto [start, count] = pair_ranges[f];
      Tensor kf = ops::slice(kv->k, 0, start * hw, count * hw);
      Tensor vf = ops::slice(kv->v, 0, start * hw, count * hw);
      Tensor af = ops::softmax_attention(qf, kf, vf, att_scale);
      outs.push_back(af.reshaped({1, hw, C}));
    }
    Tensor a = ops::concat(0, outs).reshaped({F, H, W, C});
    Tensor o = ops::permute(a, {0, 3, 1, 2});
    x = ops::add(x, scale_by(o, blk.adapter.gamma));
  }
  x = blk.tattn.forward(x, frame_pos);
  return x;
}

Tensor Denoiser::forward(const DenoiserBatch& batch, const MultiScaleFlowFeatures* feats,
                         const MemoryBank* bank) {
  const int F = batch.z_t.dim(0);
  const int C = cfg_.in_channels, H = batch.z_t.dim(2), W = batch.z_t.dim(3);
  FV_CHECK(batch.z_t.rank() == 4 && batch.z_t.dim(1) == C,
           "denoiser: z_t " << shape_str(batch.z_t.shape()) << ", expected (F," << C << ",H,W)");
  FV_CHECK(batch.mask.shape() == Shape({F, 1, H, W}),
           "denoiser: mask " << shape_str(batch.mask.shape()) << " vs latents "
                             << shape_str(batch.z_t.shape()));
  FV_CHECK(batch.z_masked.shape() == batch.z_t.shape(),
           "denoiser: z_masked " << shape_str(batch.z_masked.shape()) << " vs z_t "
                                 << shape_str(batch.z_t.shape()));
  const int div = 1 << (cfg_.levels - 1);
  FV_CHECK(H % div == 0 && W % div == 0,
           "denoiser: spatial dims " << H << "x" << W << " not divisible by " << div);
  FV_CHECK((int)batch.clip_indices.size() == F,
           "denoiser: " << batch.clip_indices.size() << " clip indices for " << F << " frames");
  if (adapters_enabled_)
    FV_CHECK(feats != nullptr || bank != nullptr,
             "denoiser: adapters enabled but neither flow features nor a memory bank given");

  std::vector<int> frame_pos(F);
  for (int f = 0; f < F; ++f) {
    frame_pos[f] = frame_position(batch.clip_indices[f], batch.anchored);
    FV_CHECK(frame_pos[f] < cfg_.frames_max,
             "frame position " << frame_pos[f] << " exceeds table size " << cfg_.frames_max);
  }

  Tensor temb;
  {
    Tensor tf = timestep_features(batch.t, cfg_.time_dim).reshaped({1, cfg_.time_dim});
    temb = ops::silu(time_l2_.forward(ops::silu(time_l1_.forward(tf))));
    temb = temb.reshaped({cfg_.time_hidden});
  }
  Tensor cond = cond_tokens(batch.cond);

  // channel packing is fixed: [z_t | mask | z_masked]
  Tensor x = ops::concat(1, {batch.z_t, batch.mask, batch.z_masked});
  x = stem_.forward(x);

  const std::vector<std::pair<int, int>> no_ranges;
  std::vector<Tensor> skips;
  for (size_t l = 0; l < down_.size(); ++l) {
    x = run_block(down_[l], x, temb, cond, frame_pos, nullptr, no_ranges);
    skips.push_back(x);
    x = downsample_[l].forward(x);
  }
  x = run_block(mid_, x, temb, cond, frame_pos, nullptr, no_ranges);

  // prepared lazily per scale: pair ranges are resolution-independent
  std::vector<std::pair<int, int>> ranges(F);
  int num_pairs = -1;
  const int L = cfg_.levels;
  for (int i = 0; i < L; ++i) {
    const ScaleKV* kvp = nullptr;
    ScaleKV kv;
    if (adapters_enabled_) {
      if (bank) {
        FV_CHECK((int)bank->scales.size() == L && bank->scales[i].filled,
                 "memory bank entry at scale " << i << " is unfilled");
        kv.k = bank->scales[i].keys;
        kv.v = bank->scales[i].values;
      } else {
        FV_CHECK((int)feats->scales.size() == L,
                 "flow features carry " << feats->scales.size() << " scales, expected " << L);
        kv = project_scale(i, feats->scales[i]);
      }
      if (num_pairs < 0) {
        const int hw_s = x.dim(2) * x.dim(3);
        num_pairs = (int)(kv.k.dim(0) / hw_s);
        for (int f = 0; f < F; ++f) ranges[f] = flow_pair_range(batch.clip_indices[f], num_pairs);
      }
      kvp = &kv;
    }
    x = run_block(up_[i], x, temb, cond, frame_pos, kvp, ranges);
    if (i + 1 < L) {
      x = up_conv_[i].forward(ops::upsample2x(x));
      x = skip_merge_[i].forward(ops::concat(1, {x, skips[L - 2 - i]}));
    }
  }
  return head_.forward(ops::silu(head_norm_.forward(x)));
}

Model::Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  Rng rng(init_seed);
  denoiser_ = std::make_unique<Denoiser>(params_, cfg, rng);
  flow_net_ = std::make_unique<FlowNet>(params_, cfg, rng);
  set_stage(1);
}

void Model::set_stage(int stage) {
  FV_CHECK(stage == 1 || stage == 2, "unknown training stage " << stage);
  stage_ = stage;
  params_.set_trainable(ParamGroup::kSpatial, false);
  params_.set_trainable(ParamGroup::kCondition, false);
  params_.set_trainable(ParamGroup::kMotion, true);
  params_.set_trainable(ParamGroup::kFlowBranch, stage == 2);
  params_.set_trainable(ParamGroup::kAdapter, stage == 2);
}

void Model::set_stats(RunStats* stats) {
  denoiser_->set_stats(stats);
  flow_net_->set_stats(stats);
}

}  // namespace flowvid
