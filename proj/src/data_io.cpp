// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mamfusion/config.hpp"
#include "mamfusion/errors.hpp"

namespace mamfusion {

namespace {

constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'T'};
constexpr char kDoubleMagic[4] = {'M', 'M', 'F', 'D'};
constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_magic(std::vector<std::uint8_t>& out, const char (&magic)[4]) {
  out.insert(out.end(), magic, magic + 4);
}

// Bounds-checked little-endian reader that reports byte offsets.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_magic(const char (&magic)[4], const char* what) {
    need(4, what);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
      throw ParseError(std::string("bad magic for ") + what + ", expected '" + std::string(magic, 4) + "'", pos_);
    }
    pos_ += 4;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                           std::to_string(remaining()),
                       bytes_.size());
    }
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

struct MatrixHeader {
  std::uint32_t rows;
  std::uint32_t cols;
};

MatrixHeader read_matrix_header(ByteReader& in, const char (&magic)[4], const char* what) {
  in.expect_magic(magic, what);
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32(what);
  if (version != kFeatureFileVersion) {
    throw ParseError(std::string(what) + ": unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = in.offset();
  MatrixHeader h{in.u32(what), in.u32(what)};
  if (h.rows == 0 || h.cols == 0) throw ParseError(std::string(what) + ": empty matrix", dims_at);
  return h;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void check_matrix(const Tensor& m, const char* what) {
  if (!m.defined() || m.rank() != 2) throw DimensionError(std::string(what) + ": expected a 2-D matrix");
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) throw DimensionError(std::string(what) + ": too large");
}

}  // namespace

std::vector<std::uint8_t> encode_feature_file(const Tensor& matrix) {
  check_matrix(matrix, "feature file");
  std::vector<std::uint8_t> out;
  out.reserve(kFeatureHeaderBytes + 4 * matrix.numel());
  put_magic(out, kFeatureMagic);
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.cols()));
  for (double v : matrix.data()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw NumericError("feature file: non-finite value");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Tensor decode_feature_file(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  const MatrixHeader h = read_matrix_header(in, kFeatureMagic, "feature file");
  const std::size_t count = static_cast<std::size_t>(h.rows) * h.cols;
  in.need(4 * count, "feature payload");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    const float f = std::bit_cast<float>(in.u32("feature payload"));
    if (!std::isfinite(f)) throw ParseError("feature file: non-finite value", at);
    values[i] = f;
  }
  if (in.remaining() != 0) throw ParseError("feature file: trailing bytes after payload", in.offset());
  return Tensor::from({h.rows, h.cols}, std::move(values));
}

void write_feature_file(const std::filesystem::path& path, const Tensor& matrix) {
  write_bytes(path, encode_feature_file(matrix));
}

Tensor read_feature_file(const std::filesystem::path& path) {
  try {
    return decode_feature_file(read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      VideoRecord v;
      v.video_id = j.at("video_id").get<std::string>();
      v.video_feature_path = j.at("video_feature_path").get<std::string>();
      for (const auto& c : j.at("captions")) {
        CaptionRecord rec;
        rec.caption_id = c.at("caption_id").get<std::string>();
        rec.text_feature_path = c.at("text_feature_path").get<std::string>();
        if (c.contains("raw_text")) rec.raw_text = c.at("raw_text").get<std::string>();
        v.captions.push_back(std::move(rec));
      }
      m.videos.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed manifest record: " + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const VideoRecord& v : manifest.videos) {
    nlohmann::json j;
    j["video_id"] = v.video_id;
    j["video_feature_path"] = v.video_feature_path;
    j["captions"] = nlohmann::json::array();
    for (const CaptionRecord& c : v.captions) {
      nlohmann::json cj;
      cj["caption_id"] = c.caption_id;
      cj["text_feature_path"] = c.text_feature_path;
      if (c.raw_text) cj["raw_text"] = *c.raw_text;
      j["captions"].push_back(std::move(cj));
    }
    out << j.dump() << '\n';
  }
}

void validate_manifest(const Manifest& manifest) {
  if (manifest.videos.empty()) throw DataError("manifest lists no videos");
  std::set<std::string> video_ids, caption_ids;
  for (const VideoRecord& v : manifest.videos) {
    if (!video_ids.insert(v.video_id).second) throw DataError("duplicate video id '" + v.video_id + "'");
    if (v.captions.empty()) throw DataError("video '" + v.video_id + "' has no captions");
    if (!std::filesystem::is_regular_file(manifest.resolve(v.video_feature_path))) {
      throw DataError("video '" + v.video_id + "': missing feature file " + v.video_feature_path);
    }
    for (const CaptionRecord& c : v.captions) {
      if (!caption_ids.insert(c.caption_id).second) {
        throw DataError("duplicate caption id '" + c.caption_id + "'");
      }
      if (!std::filesystem::is_regular_file(manifest.resolve(c.text_feature_path))) {
        throw DataError("caption '" + c.caption_id + "': missing feature file " + c.text_feature_path);
      }
    }
  }
}

const CaptionItem* Corpus::find_caption(const std::string& id) const {
  for (const CaptionItem& c : captions)
    if (c.id == id) return &c;
  return nullptr;
}

const VideoItem* Corpus::find_video(const std::string& id) const {
  for (const VideoItem& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

Corpus load_corpus(const Manifest& manifest) {
  validate_manifest(manifest);
  Corpus corpus;
  for (const VideoRecord& v : manifest.videos) {
    const std::size_t index = corpus.videos.size();
    corpus.videos.push_back({v.video_id, read_feature_file(manifest.resolve(v.video_feature_path))});
    for (const CaptionRecord& c : v.captions) {
      corpus.captions.push_back({c.caption_id, index, read_feature_file(manifest.resolve(c.text_feature_path))});
    }
  }
  return corpus;
}

void SyntheticSpec::validate() const {
  if (n_videos == 0) throw ConfigError("synthetic corpus needs at least one video");
  if (frames_min == 0 || frames_max < frames_min) throw ConfigError("invalid frame count range");
  if (caption_len_min == 0 || caption_len_max < caption_len_min) throw ConfigError("invalid caption length range");
  if (captions_per_video == 0) throw ConfigError("captions_per_video must be positive");
  if (d_vid == 0 || d_text == 0 || latent_dim == 0) throw ConfigError("feature dimensions must be positive");
  if (!(span > 0.0 && span <= 1.0)) throw ConfigError("span must lie in (0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec s;
  KeyValueReader r(parse_key_values(text));
  r.read("n_videos", s.n_videos);
  r.read("frames_min", s.frames_min);
  r.read("frames_max", s.frames_max);
  r.read("caption_len_min", s.caption_len_min);
  r.read("caption_len_max", s.caption_len_max);
  r.read("captions_per_video", s.captions_per_video);
  r.read("d_vid", s.d_vid);
  r.read("d_text", s.d_text);
  r.read("latent_dim", s.latent_dim);
  r.read("span", s.span);
  r.read("noise_sigma", s.noise_sigma);
  r.read("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

SyntheticSpec read_synthetic_spec(const std::filesystem::path& path) {
  return parse_synthetic_spec(read_text_file(path));
}

namespace {

std::string video_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%04zu", i);
  return buf;
}

std::string caption_id(std::size_t video, std::size_t k) { return video_id(video) + "_c" + std::to_string(k); }

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

Corpus synthesize_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));

  auto random_matrix = [&](std::size_t r, std::size_t c, double s) {
    std::vector<double> m(r * c);
    for (double& v : m) v = s * gauss(rng);
    return m;
  };
  const std::vector<double> to_video = random_matrix(spec.latent_dim, spec.d_vid, proj_scale);
  const std::vector<double> to_text = random_matrix(spec.latent_dim, spec.d_text, proj_scale);
  auto project = [&](const std::vector<double>& latent, const std::vector<double>& proj, std::size_t width) {
    std::vector<double> out(width, 0.0);
    for (std::size_t k = 0; k < latent.size(); ++k)
      for (std::size_t j = 0; j < width; ++j) out[j] += latent[k] * proj[k * width + j];
    return out;
  };

  Corpus corpus;
  for (std::size_t i = 0; i < spec.n_videos; ++i) {
    const std::vector<double> latent = random_matrix(1, spec.latent_dim, 1.0);
    const std::vector<double> event_v = project(latent, to_video, spec.d_vid);
    const std::vector<double> event_t = project(latent, to_text, spec.d_text);

    const std::size_t mf = uniform_size(rng, spec.frames_min, spec.frames_max);
    const std::size_t len = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.span * static_cast<double>(mf))), 1, mf);
    const std::size_t start = uniform_size(rng, 0, mf - len);
    std::vector<double> frames = random_matrix(mf, spec.d_vid, spec.noise_sigma);
    for (std::size_t t = start; t < start + len; ++t)
      for (std::size_t j = 0; j < spec.d_vid; ++j) frames[t * spec.d_vid + j] += event_v[j];
    corpus.videos.push_back({video_id(i), Tensor::from({mf, spec.d_vid}, std::move(frames))});

    for (std::size_t k = 0; k < spec.captions_per_video; ++k) {
      const std::size_t n = uniform_size(rng, spec.caption_len_min, spec.caption_len_max);
      std::vector<double> words = random_matrix(n, spec.d_text, spec.noise_sigma);
      for (std::size_t w = 0; w < n; ++w)
        for (std::size_t j = 0; j < spec.d_text; ++j) words[w * spec.d_text + j] += event_t[j];
      corpus.captions.push_back({caption_id(i, k), i, Tensor::from({n, spec.d_text}, std::move(words))});
    }
  }
  // Round through binary32 so in-memory and on-disk corpora agree exactly.
  auto to_f32 = [](Tensor& t) {
    for (double& v : t.mutable_data()) v = static_cast<float>(v);
  };
  for (auto& v : corpus.videos) to_f32(v.frames);
  for (auto& c : corpus.captions) to_f32(c.words);
  return corpus;
}

Manifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  const Corpus corpus = synthesize_corpus(spec);
  Manifest m;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const VideoItem& v = corpus.videos[i];
    VideoRecord rec{v.id, "videos/" + v.id + ".mmft", {}};
    write_feature_file(out_dir / rec.video_feature_path, v.frames);
    for (const CaptionItem& c : corpus.captions) {
      if (c.video != i) continue;
      CaptionRecord cr{c.id, "captions/" + c.id + ".mmft", std::nullopt};
      write_feature_file(out_dir / cr.text_feature_path, c.words);
      rec.captions.push_back(std::move(cr));
    }
    m.videos.push_back(std::move(rec));
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

void save_checkpoint(const ParameterRegistry& params, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  put_magic(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.params().size()));
  for (const Parameter& p : params.params()) {
    check_matrix(p.tensor, p.name.c_str());
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_magic(out, kDoubleMagic);
    put_u32(out, kFeatureFileVersion);
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.tensor.cols()));
    for (double v : p.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  write_bytes(path, out);
}

namespace {

struct StoredTensor {
  std::uint32_t rows;
  std::uint32_t cols;
  std::vector<double> values;
};

std::vector<std::pair<std::string, StoredTensor>> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader in(bytes);
  in.expect_magic(kCheckpointMagic, "checkpoint");
  const std::size_t version_at = in.offset();
  if (in.u32("checkpoint header") != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version", version_at);
  }
  const std::uint32_t count = in.u32("checkpoint header");
  std::vector<std::pair<std::string, StoredTensor>> out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t name_at = in.offset();
    std::string name = in.text(in.u32("tensor name length"), "tensor name");
    if (!names.insert(name).second) throw ParseError("checkpoint: duplicate tensor '" + name + "'", name_at);
    const MatrixHeader h = read_matrix_header(in, kDoubleMagic, "checkpoint tensor");
    const std::size_t n = static_cast<std::size_t>(h.rows) * h.cols;
    in.need(8 * n, "checkpoint payload");
    StoredTensor t{h.rows, h.cols, std::vector<double>(n)};
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t at = in.offset();
      t.values[k] = std::bit_cast<double>(in.u64("checkpoint payload"));
      if (!std::isfinite(t.values[k])) throw ParseError("checkpoint tensor '" + name + "': non-finite value", at);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  if (in.remaining() != 0) throw ParseError("checkpoint: trailing bytes", in.offset());
  return out;
}

}  // namespace

void load_checkpoint(ParameterRegistry& params, const std::filesystem::path& path) {
  std::map<std::string, StoredTensor> stored;
  for (auto& [name, t] : decode_checkpoint(read_bytes(path))) stored.emplace(name, std::move(t));

  for (const Parameter& p : params.params()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw DataError("checkpoint " + path.string() + " lacks tensor '" + p.name + "'");
    const StoredTensor& t = it->second;
    if (t.rows != p.tensor.rows() || t.cols != p.tensor.cols()) {
      throw DataError("checkpoint tensor '" + p.name + "' has shape [" + std::to_string(t.rows) + "x" +
                      std::to_string(t.cols) + "], model expects " + shape_to_string(p.tensor.shape()));
    }
  }
  if (stored.size() != params.params().size()) {
    for (const auto& [name, t] : stored) {
      if (!params.find(name)) throw DataError("checkpoint holds unknown tensor '" + name + "'");
    }
  }
  for (Parameter& p : params.params()) {
    const StoredTensor& t = stored.at(p.name);
    std::copy(t.values.begin(), t.values.end(), p.tensor.mutable_data().begin());
  }
}

std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (auto& [name, t] : decode_checkpoint(read_bytes(path))) names.push_back(name);
  return names;
}

}  // namespace mamfusion
