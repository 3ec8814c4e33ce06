// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "mamfusion/errors.hpp"
#include "mamfusion/fusion.hpp"
#include "mamfusion/model.hpp"
#include "mamfusion/retrieval.hpp"

using namespace mamfusion;
using testutil::random_tensor;

namespace {

TextRepr random_text(std::mt19937_64& rng, std::size_t n, std::size_t d, const Tensor& pool_w) {
  TextRepr t;
  t.words = random_tensor(rng, {n, d});
  PoolResult p = attention_pool(t.words, pool_w);
  t.pooled = p.vec;
  t.alpha = p.alpha;
  return t;
}

VideoRepr random_video(std::mt19937_64& rng, std::size_t mc, std::size_t mf, std::size_t d) {
  VideoRepr v;
  v.clips = random_tensor(rng, {mc, d});
  v.mamba = random_tensor(rng, {mf, d});
  v.frames = v.gaussian = v.mamba;
  PoolResult p = attention_pool(v.mamba, random_tensor(rng, {1, d}));
  v.pooled = p.vec;
  v.alpha = p.alpha;
  return v;
}

void zero_linear(Linear& l) {
  for (double& w : l.weight.mutable_data()) w = 0.0;
  if (l.bias.defined())
    for (double& b : l.bias.mutable_data()) b = 0.0;
}

// softmax(Q W_q (K W_k)^T / sqrt(dh)) V W_v per head, concatenated, times W_o.
std::vector<double> attention_oracle(const MultiHeadAttention& m, const Tensor& q, const Tensor& kv) {
  const std::size_t d = m.d(), dh = m.head_dim(), lq = q.rows(), lk = kv.rows();
  Tensor pq = m.w_q.forward(q), pk = m.w_k.forward(kv), pv = m.w_v.forward(kv);
  std::vector<double> merged(lq * d, 0.0);
  for (std::size_t h = 0; h < m.heads(); ++h)
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> s(lk, 0.0);
      for (std::size_t j = 0; j < lk; ++j) {
        for (std::size_t p = 0; p < dh; ++p) s[j] += pq.at(i, h * dh + p) * pk.at(j, h * dh + p);
        s[j] /= std::sqrt(static_cast<double>(dh));
      }
      auto w = testutil::naive_softmax(s);
      for (std::size_t j = 0; j < lk; ++j)
        for (std::size_t p = 0; p < dh; ++p) merged[i * d + h * dh + p] += w[j] * pv.at(j, h * dh + p);
    }
  return testutil::naive_matmul(merged, {m.w_o.weight.data().begin(), m.w_o.weight.data().end()}, lq, d, d);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i], na += a[i] * a[i], nb += b[i] * b[i];
  return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

void check_stochastic(const Tensor& w) {
  const std::size_t width = w.shape().back();
  for (std::size_t off = 0; off < w.numel(); off += width) {
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i) s += w[off + i];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

}  // namespace

TEST_CASE("text-to-video fusion") {
  ParameterRegistry reg(50);
  Fusion fusion(reg, "fusion", 8, 2);
  std::mt19937_64 rng(51);
  Tensor vfm = random_tensor(rng, {5, 8}), q = random_tensor(rng, {1, 8});

  AttentionOutput a = fusion.ttv(vfm, q);
  Tensor w = a.weights();
  CHECK(w.shape() == Shape{2, 5, 1});
  for (double x : w.data()) CHECK(x == 1.0);

  // Every row moves by the same value-path vector q W_v W_o.
  Tensor delta = fusion.ttv_attn.w_o.forward(fusion.ttv_attn.w_v.forward(q));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(a.out.at(i, j) - delta[j]) < 1e-12);

  zero_linear(fusion.ttv_attn.w_v);
  Tensor pw = random_tensor(rng, {1, 8});
  TextRepr text = random_text(rng, 3, 8, pw);
  VideoRepr video = random_video(rng, 4, 5, 8);
  text.pooled = Tensor::zeros({1, 8});
  FusedPair pair = fusion.fuse(text, video, pw, {true, false});
  CHECK(testutil::bit_equal(pair.video, video.mamba));
}

TEST_CASE("video-to-text fusion") {
  ParameterRegistry reg(52);
  Fusion fusion(reg, "fusion", 8, 2);
  std::mt19937_64 rng(53);

  SUBCASE("single frame gets all the weight") {
    AttentionOutput a = fusion.tvt(random_tensor(rng, {4, 8}), random_tensor(rng, {1, 8}));
    Tensor w = a.weights();
    for (double x : w.data()) CHECK(x == 1.0);
  }
  SUBCASE("identical frames give the same update to every word") {
    Tensor row = random_tensor(rng, {1, 8});
    Tensor frames = concat_rows({row, row, row});
    AttentionOutput a = fusion.tvt(random_tensor(rng, {4, 8}), frames);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(a.out.at(i, j) - a.out.at(0, j)) < 1e-12);
  }
  SUBCASE("direct oracle") {
    Tensor q = random_tensor(rng, {3, 8}), v = random_tensor(rng, {5, 8});
    AttentionOutput a = fusion.tvt(q, v);
    auto ref = attention_oracle(fusion.tvt_attn, q, v);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(a.out[i] - ref[i]) < 1e-6);
    CHECK(a.weights().shape() == Shape{2, 3, 5});
  }
}

TEST_CASE("fused pair") {
  std::mt19937_64 rng(54);
  SUBCASE("composition of the two oracles") {
    ParameterRegistry reg(55);
    Fusion fusion(reg, "fusion", 8, 2);
    Tensor pw = random_tensor(rng, {1, 8});
    TextRepr text = random_text(rng, 3, 8, pw);
    VideoRepr video = random_video(rng, 4, 6, 8);
    FusedPair pair = fusion.fuse(text, video, pw);

    auto ttv = attention_oracle(fusion.ttv_attn, video.mamba, text.pooled);
    std::vector<double> vft(video.mamba.data().begin(), video.mamba.data().end());
    for (std::size_t i = 0; i < vft.size(); ++i) vft[i] += ttv[i];
    for (std::size_t i = 0; i < vft.size(); ++i) CHECK(std::abs(pair.video[i] - vft[i]) < 1e-6);
    auto tvt = attention_oracle(fusion.tvt_attn, text.words, Tensor::from({6, 8}, vft));
    std::vector<double> qp(text.words.data().begin(), text.words.data().end());
    for (std::size_t i = 0; i < qp.size(); ++i) qp[i] += tvt[i];
    for (std::size_t i = 0; i < qp.size(); ++i) CHECK(std::abs(pair.words[i] - qp[i]) < 1e-6);
    PoolResult pooled = attention_pool(Tensor::from({3, 8}, qp), pw);
    CHECK(testutil::max_abs_diff(pair.pooled, pooled.vec) < 1e-6);
    check_stochastic(pair.ttv_weights);
    check_stochastic(pair.tvt_weights);
  }
  SUBCASE("zero value projections reduce to the text vector") {
    ParameterRegistry reg(56);
    Fusion fusion(reg, "fusion", 8, 2);
    zero_linear(fusion.ttv_attn.w_v);
    zero_linear(fusion.tvt_attn.w_v);
    Tensor pw = random_tensor(rng, {1, 8});
    TextRepr text = random_text(rng, 5, 8, pw);
    FusedPair pair = fusion.fuse(text, random_video(rng, 4, 7, 8), pw);
    CHECK(testutil::max_abs_diff(pair.pooled, text.pooled) < 1e-6);
  }
  SUBCASE("shape contract") {
    ParameterRegistry reg(57);
    Fusion fusion(reg, "fusion", 64, 4);
    Tensor pw = random_tensor(rng, {1, 64});
    FusedPair pair = fusion.fuse(random_text(rng, 12, 64, pw), random_video(rng, 32, 16, 64), pw);
    CHECK(pair.words.shape() == Shape{12, 64});
    CHECK(pair.video.shape() == Shape{16, 64});
    CHECK(pair.tvt_weights.shape() == Shape{4, 12, 16});
    CHECK(pair.ttv_weights.shape() == Shape{4, 16, 1});
  }
}

TEST_CASE("pair similarity") {
  std::mt19937_64 rng(58);
  SUBCASE("identical vectors score one") {
    VideoRepr v = random_video(rng, 3, 4, 6);
    Tensor q = v.pooled.clone();
    std::vector<double> clips(v.clips.data().begin(), v.clips.data().end());
    std::copy(q.data().begin(), q.data().end(), clips.begin() + 6);
    v.clips = Tensor::from({3, 6}, clips);
    CHECK(pair_similarity(q, v, {}).score == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal vectors score zero") {
    VideoRepr v;
    v.clips = Tensor::matrix({{0, 1, 0}, {0, 0, 2}});
    v.pooled = Tensor::row({0, 3, 4});
    CHECK(pair_similarity(Tensor::row({5, 0, 0}), v, {}).score == 0.0);
  }
  SUBCASE("brute-force clip loop") {
    for (int t = 0; t < 20; ++t) {
      VideoRepr v = random_video(rng, 1 + rng() % 6, 3, 5);
      Tensor q = random_tensor(rng, {1, 5});
      const SimilarityWeights w{0.3, 0.7};
      double best = -INFINITY;
      for (std::size_t i = 0; i < v.clips.rows(); ++i) best = std::max(best, cosine(q.data(), v.clips.data().subspan(i * 5, 5)));
      const double ref = 0.3 * best + 0.7 * cosine(q.data(), v.pooled.data());
      Similarity s = pair_similarity(q, v, w);
      CHECK(std::abs(s.score - ref) < 1e-12);
      CHECK(!s.zero_norm);
    }
  }
  SUBCASE("zero-norm vectors contribute zero and are flagged") {
    VideoRepr v;
    v.clips = Tensor::matrix({{1, 0}, {0, 1}});
    v.pooled = Tensor::row({1, 1});
    Similarity s = pair_similarity(Tensor::row({0, 0}), v, {});
    CHECK(s.score == 0.0);
    CHECK(s.zero_norm);
  }
  SUBCASE("weights must be a convex pair") {
    CHECK_THROWS_AS((SimilarityWeights{0.6, 0.6}.validate()), ConfigError);
    CHECK_THROWS_AS((SimilarityWeights{-0.1, 1.1}.validate()), ConfigError);
  }
}

TEST_CASE("ranking") {
  CHECK(rank_scores({{"b", 0.5}, {"c", 0.1}, {"a", 0.9}})[0].video_id == "a");
  auto r = rank_scores({{"b", 0.5}, {"c", 0.1}, {"a", 0.9}});
  CHECK(r[1].video_id == "b");
  CHECK(r[2].video_id == "c");
  CHECK(rank_scores({{"only", -3.0}}).size() == 1);

  std::mt19937_64 rng(59);
  for (int t = 0; t < 10; ++t) {
    std::vector<RankedVideo> scored;
    for (int i = 0; i < 20; ++i) {
      char id[8];
      std::snprintf(id, sizeof id, "v%02d", i);
      // Coarse scores inject ties.
      scored.push_back({id, static_cast<double>(rng() % 6) / 5.0});
    }
    std::shuffle(scored.begin(), scored.end(), rng);
    auto got = rank_scores(scored);
    // Oracle: selection sort with explicit tie rule.
    auto pending = scored;
    for (std::size_t pos = 0; pos < got.size(); ++pos) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < pending.size(); ++i) {
        if (pending[i].score > pending[best].score ||
            (pending[i].score == pending[best].score && pending[i].video_id < pending[best].video_id))
          best = i;
      }
      CHECK(got[pos].video_id == pending[best].video_id);
      pending.erase(pending.begin() + static_cast<long>(best));
    }
    // Positive rescaling leaves the order intact.
    for (auto& s : scored) s.score *= 7.25;
    auto scaled = rank_scores(scored);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(scaled[i].video_id == got[i].video_id);
  }
}

namespace {

RetrievalResult result_with_rank(std::size_t target_rank, std::size_t corpus) {
  RetrievalResult r;
  r.query_id = "q";
  r.target_id = "t";
  for (std::size_t i = 1; i <= corpus; ++i)
    r.ranking.push_back({i == target_rank ? "t" : "x" + std::to_string(i), 1.0 / static_cast<double>(i)});
  return r;
}

}  // namespace

TEST_CASE("recall examples") {
  std::vector<RetrievalResult> results;
  for (int i = 0; i < 10; ++i) results.push_back(result_with_rank(i < 3 ? 1 : 2, 20));
  CHECK(recall_at_k(results, 1) == 30.0);

  std::vector<RetrievalResult> third{result_with_rank(3, 50)};
  CHECK(recall_at_k(third, 1) == 0.0);
  CHECK(recall_at_k(third, 5) == 100.0);
  CHECK(recall_at_k(third, 10) == 100.0);
  CHECK(recall_at_k(third, 100) == 100.0);

  std::vector<RetrievalResult> small{result_with_rank(4, 4), result_with_rank(2, 4)};
  CHECK(recall_at_k(small, 100) == 100.0);

  CHECK_THROWS_AS(recall_at_k(small, 0), ConfigError);
  CHECK_THROWS_AS(recall_at_k({}, 1), DataError);
}

TEST_CASE("sum of recalls") {
  MetricsReport a{8.0, 25.4, 37.2, 76.8, 0.0, 0};
  CHECK(std::abs(sum_r(a) - 147.4) < 1e-9);
  MetricsReport b{2.0, 8.8, 14.2, 51.5, 0.0, 0};
  CHECK(std::abs(sum_r(b) - 76.5) < 1e-9);
  CHECK(sum_r(MetricsReport{}) == 0.0);
}

TEST_CASE("metrics match a brute-force count") {
  std::mt19937_64 rng(60);
  for (int t = 0; t < 30; ++t) {
    const std::size_t corpus = 1 + rng() % 100, queries = 1 + rng() % 100;
    std::vector<RetrievalResult> results;
    std::vector<std::size_t> ranks;
    for (std::size_t q = 0; q < queries; ++q) {
      ranks.push_back(1 + rng() % corpus);
      results.push_back(result_with_rank(ranks.back(), corpus));
    }
    MetricsReport m = compute_metrics(results);
    const double ks[4] = {1, 5, 10, 100};
    const double got[4] = {m.r1, m.r5, m.r10, m.r100};
    for (int i = 0; i < 4; ++i) {
      std::size_t hits = 0;
      for (std::size_t r : ranks) hits += r <= ks[i] ? 1 : 0;
      CHECK(got[i] == 100.0 * static_cast<double>(hits) / static_cast<double>(queries));
    }
    CHECK(m.sum_r == m.r1 + m.r5 + m.r10 + m.r100);
    CHECK(m.r1 <= m.r5);
    CHECK(m.r5 <= m.r10);
    CHECK(m.r10 <= m.r100);
    CHECK(format_report(m) == format_report(compute_metrics(results)));
  }
}

TEST_CASE("report format") {
  MetricsReport m{50.0, 75.0, 100.0, 100.0, 325.0, 4};
  CHECK(format_report(m) == "queries=4\nr1=50.0000\nr5=75.0000\nr10=100.0000\nr100=100.0000\nsum_r=325.0000\n");
}

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.d_text = 6;
  c.d_vid = 5;
  c.max_words = 8;
  c.max_frames = 16;
  c.num_clips = 3;
  c.d_state = 4;
  c.scan_chunk = 4;
  return c;
}

}  // namespace

TEST_CASE("model scoring paths") {
  MamFusionModel model(tiny_model(), 61);
  std::mt19937_64 rng(62);
  TextRepr text = model.encode_text(random_tensor(rng, {4, 6}));
  VideoRepr video = model.encode_video(random_tensor(rng, {9, 5}));

  SUBCASE("fast mode scores with the unfused sentence vector") {
    ForwardOptions fast;
    fast.fast_mode = true;
    Similarity s = model.similarity(text, video, fast);
    CHECK(s.score == pair_similarity(text.pooled, video, model.config().similarity).score);
  }
  SUBCASE("disabling both fusions equals fast mode") {
    ForwardOptions off;
    off.ttv = off.tvt = false;
    ForwardOptions fast;
    fast.fast_mode = true;
    CHECK(model.similarity(text, video, off).score == model.similarity(text, video, fast).score);
  }
  SUBCASE("zeroed fusion value projections leave scores unchanged") {
    ForwardOptions off;
    off.ttv = off.tvt = false;
    const double unfused = model.similarity(text, video, off).score;
    for (const char* name : {"fusion.ttv.w_v.weight", "fusion.ttv.w_v.bias", "fusion.tvt.w_v.weight", "fusion.tvt.w_v.bias"}) {
      const Parameter* p = model.registry().find(name);
      REQUIRE(p != nullptr);
      Tensor t = p->tensor;
      for (double& v : t.mutable_data()) v = 0.0;
    }
    CHECK(model.similarity(text, video).score == unfused);
  }
  SUBCASE("rank requires a corpus") {
    CHECK_THROWS_AS(rank(model, "q", "v", text, {}), DataError);
    RetrievalResult r = rank(model, "q", "v", text, {{"v", video}});
    CHECK(r.ranking.size() == 1);
    CHECK(r.target_rank() == 1);
  }
}
