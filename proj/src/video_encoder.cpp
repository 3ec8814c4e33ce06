// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/video_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "mamfusion/errors.hpp"

namespace mamfusion {

Tensor sample_clips(const Tensor& frames, std::size_t num_clips) {
  if (!frames.defined() || frames.numel() == 0) throw DataError("sample_clips: video has no frames");
  if (num_clips == 0) throw ConfigError("sample_clips: clip count must be positive");
  const std::size_t mf = frames.rows(), width = frames.cols();
  const auto& x = frames.data();
  std::vector<double> out(num_clips * width, 0.0);
  for (std::size_t i = 0; i < num_clips; ++i) {
    std::size_t begin = i * mf / num_clips;
    std::size_t end = (i + 1) * mf / num_clips;
    if (end <= begin) {
      begin = std::min(mf - 1, (2 * i + 1) * mf / (2 * num_clips));
      end = begin + 1;
    }
    double* row = out.data() + i * width;
    for (std::size_t t = begin; t < end; ++t)
      for (std::size_t j = 0; j < width; ++j) row[j] += x[t * width + j];
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::size_t j = 0; j < width; ++j) row[j] *= inv;
  }
  return Tensor::from({num_clips, width}, std::move(out));
}

VideoEncoder::VideoEncoder(ParameterRegistry& reg, const std::string& name, const VideoEncoderConfig& config)
    : config_(config) {
  if (config.num_clips == 0 || config.max_frames == 0) {
    throw ConfigError("clip count and frame limit must be positive");
  }
  GaussianBlockConfig block = config.gaussian;
  block.d = config.d;
  SsmConfig ssm = config.ssm;
  ssm.d = config.d;
  const double pool_bound = 1.0 / std::sqrt(static_cast<double>(config.d));

  clip_fc = Linear(reg, name + ".clip.fc", config.d_vid, config.d);
  clip_pos = reg.zeros(name + ".clip.pos_emb", {config.num_clips, config.d});
  for (std::size_t i = 0; i < config.gaussian_layers; ++i)
    clip_blocks.emplace_back(reg, name + ".clip.gmm" + std::to_string(i), block);
  clip_mamba = MambaBlock(reg, name + ".clip.mamba", ssm);

  frame_fc = Linear(reg, name + ".frame.fc", config.d_vid, config.d);
  frame_pos = reg.zeros(name + ".frame.pos_emb", {config.max_frames, config.d});
  for (std::size_t i = 0; i < config.gaussian_layers; ++i)
    frame_blocks.emplace_back(reg, name + ".frame.gmm" + std::to_string(i), block);
  frame_mamba = MambaBlock(reg, name + ".frame.mamba", ssm);
  pool_w = reg.uniform(name + ".frame.pool_w", {1, config.d}, pool_bound);
}

void VideoEncoder::check_input(const Tensor& frames) const {
  if (!frames.defined() || frames.numel() == 0) throw DataError("video has no frames");
  if (frames.cols() != config_.d_vid) {
    throw DimensionError("video features have width " + std::to_string(frames.cols()) + ", expected " +
                         std::to_string(config_.d_vid));
  }
  if (frames.rows() > config_.max_frames) {
    throw DimensionError("video has " + std::to_string(frames.rows()) + " frames, limit is " +
                         std::to_string(config_.max_frames));
  }
}

Tensor VideoEncoder::encode_clips(const Tensor& frames, const VideoPathOptions& options,
                                  std::vector<Tensor>* attention) const {
  check_input(frames);
  Tensor h = add(relu(clip_fc.forward(sample_clips(frames, config_.num_clips))), clip_pos);
  if (options.gaussian_blocks) {
    for (const GaussianBlock& block : clip_blocks) {
      GaussianBlockOutput out = block.forward(h);
      h = out.out;
      if (attention) {
        attention->insert(attention->end(), out.per_variance_weights.begin(), out.per_variance_weights.end());
      }
    }
  }
  if (options.mamba) h = clip_mamba.forward(h);
  return h;
}

VideoRepr VideoEncoder::encode(const Tensor& frames, const VideoPathOptions& options) const {
  VideoRepr repr;
  repr.clips = encode_clips(frames, options, &repr.clip_attention);

  const std::size_t mf = frames.rows();
  Tensor h = add(relu(frame_fc.forward(frames)), slice_rows(frame_pos, 0, mf));
  if (options.gaussian_blocks) {
    for (const GaussianBlock& block : frame_blocks) {
      GaussianBlockOutput out = block.forward(h);
      h = out.out;
      repr.frame_attention.insert(repr.frame_attention.end(), out.per_variance_weights.begin(),
                                  out.per_variance_weights.end());
    }
  }
  repr.gaussian = h;
  repr.mamba = options.mamba ? frame_mamba.forward(h) : h;
  repr.frames = repr.mamba;
  PoolResult pooled = attention_pool(repr.mamba, pool_w);
  repr.pooled = pooled.vec;
  repr.alpha = pooled.alpha;
  return repr;
}

}  // namespace mamfusion
