// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mamfusion/gmmformer.hpp"
#include "mamfusion/nn.hpp"
#include "mamfusion/ssm.hpp"

namespace mamfusion {

struct VideoEncoderConfig {
  std::size_t d_vid = 1024;
  std::size_t d = 64;
  std::size_t num_clips = 32;
  std::size_t max_frames = 256;
  std::size_t gaussian_layers = 2;
  GaussianBlockConfig gaussian;
  SsmConfig ssm;
};

// Runtime switches for the video path. Disabled stages pass their input
// through unchanged; parameters are still constructed.
struct VideoPathOptions {
  bool mamba = true;
  bool gaussian_blocks = true;
};

/// Mean-pools frames into num_clips contiguous segments
/// [floor(i M_f / M_c), floor((i+1) M_f / M_c)). When a segment is empty
/// (M_f < M_c) the frame nearest the segment centre is used.
Tensor sample_clips(const Tensor& frames, std::size_t num_clips);

struct VideoRepr {
  Tensor clips;      // V_c, M_c x d
  Tensor frames;     // V_f, M_f x d, the sequence that is pooled
  Tensor gaussian;   // V_fg, M_f x d
  Tensor mamba;      // V_fm, M_f x d (equals V_fg when Mamba is disabled)
  Tensor pooled;     // V_v, 1 x d
  Tensor alpha;      // 1 x M_f
  // heads x L x L weights, one entry per (block, variance), for each branch.
  std::vector<Tensor> clip_attention;
  std::vector<Tensor> frame_attention;
};

class VideoEncoder {
 public:
  VideoEncoder() = default;
  VideoEncoder(ParameterRegistry& reg, const std::string& name, const VideoEncoderConfig& config);

  // sample_clips -> FC+ReLU -> +pos -> Gaussian blocks -> Mamba -> V_c.
  Tensor encode_clips(const Tensor& frames, const VideoPathOptions& options = {},
                      std::vector<Tensor>* attention = nullptr) const;
  // Full representation: clip branch plus the frame branch with pooling.
  VideoRepr encode(const Tensor& frames, const VideoPathOptions& options = {}) const;

  const VideoEncoderConfig& config() const { return config_; }

  Linear clip_fc;
  Tensor clip_pos;  // num_clips x d
  std::vector<GaussianBlock> clip_blocks;
  MambaBlock clip_mamba;

  Linear frame_fc;
  Tensor frame_pos;  // max_frames x d
  std::vector<GaussianBlock> frame_blocks;
  MambaBlock frame_mamba;
  Tensor pool_w;  // 1 x d

 private:
  void check_input(const Tensor& frames) const;

  VideoEncoderConfig config_;
};

}  // namespace mamfusion
