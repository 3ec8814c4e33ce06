// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mamfusion/nn.hpp"
#include "mamfusion/tensor.hpp"

namespace mamfusion {

class MamFusionModel;

// Feature file layout (all integers little-endian):
//   0  "MMFT"
//   4  u32 version = 1
//   8  u32 rows
//  12  u32 cols
//  16  rows * cols IEEE-754 binary32 values, row-major
inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 16;

std::vector<std::uint8_t> encode_feature_file(const Tensor& matrix);
Tensor decode_feature_file(const std::vector<std::uint8_t>& bytes);
void write_feature_file(const std::filesystem::path& path, const Tensor& matrix);
Tensor read_feature_file(const std::filesystem::path& path);

struct CaptionRecord {
  std::string caption_id;
  std::string text_feature_path;
  std::optional<std::string> raw_text;
};

struct VideoRecord {
  std::string video_id;
  std::string video_feature_path;
  std::vector<CaptionRecord> captions;
};

// One JSON object per line. Feature paths are relative to the manifest's
// directory unless absolute.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<VideoRecord> videos;

  std::filesystem::path resolve(const std::string& path) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
// Rejects duplicate ids, videos without captions and feature files that are
// missing or unreadable.
void validate_manifest(const Manifest& manifest);

struct VideoItem {
  std::string id;
  Tensor frames;  // M_f x D_vid
};

struct CaptionItem {
  std::string id;
  std::size_t video = 0;  // index into Corpus::videos
  Tensor words;           // N x D_text
};

struct Corpus {
  std::vector<VideoItem> videos;
  std::vector<CaptionItem> captions;

  const VideoItem& video_of(const CaptionItem& c) const { return videos[c.video]; }
  const CaptionItem* find_caption(const std::string& id) const;
  const VideoItem* find_video(const std::string& id) const;
};

Corpus load_corpus(const Manifest& manifest);

struct SyntheticSpec {
  std::size_t n_videos = 32;
  std::size_t frames_min = 16;
  std::size_t frames_max = 32;
  std::size_t caption_len_min = 4;
  std::size_t caption_len_max = 10;
  std::size_t captions_per_video = 1;
  std::size_t d_vid = 64;
  std::size_t d_text = 64;
  std::size_t latent_dim = 16;
  double span = 0.4;  // fraction of frames carrying the caption's event
  double noise_sigma = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

SyntheticSpec parse_synthetic_spec(const std::string& text);
SyntheticSpec read_synthetic_spec(const std::filesystem::path& path);

/// Planted-event corpus: each video carries a latent event vector in one
/// contiguous span of frames (noise elsewhere), and each of its captions is
/// a noisy projection of the same latent. Writes feature files and
/// manifest.jsonl under out_dir and returns the manifest.
Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// In-memory variant used by tests; ids match generate_synthetic.
Corpus synthesize_corpus(const SyntheticSpec& spec);

// Checkpoint layout: "MMCK", u32 version = 1, u32 count, then per tensor
// u32 name length, name bytes, and a block laid out like a feature file but
// with magic "MMFD" and binary64 payload so parameters round-trip exactly.
void save_checkpoint(const ParameterRegistry& params, const std::filesystem::path& path);
void load_checkpoint(ParameterRegistry& params, const std::filesystem::path& path);
std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path);

}  // namespace mamfusion
