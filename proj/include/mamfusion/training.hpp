// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mamfusion/data_io.hpp"
#include "mamfusion/model.hpp"
#include "mamfusion/nn.hpp"
#include "mamfusion/retrieval.hpp"

namespace mamfusion {

struct TrainConfig {
  double lr = 1e-3;
  double margin = 0.2;
  double temperature = 0.07;
  double lambda_triplet = 1.0;
  double lambda_infonce = 1.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables clipping
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::uint64_t seed = 42;
  ForwardOptions forward;  // fast mode and ablation toggles

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::int64_t wall_ms = 0;
};

using LossTrace = std::vector<EpochRecord>;

// max(0, margin + s_neg - s_pos)
double triplet_loss(double s_pos, double s_neg, double margin);

// sim is B x B with matched pairs on the diagonal. Averages the hinge over
// the hardest off-diagonal negative of every row and of every column.
// Zero (and gradient-free) when B = 1.
Tensor triplet_loss(const Tensor& sim, double margin);

// Symmetric cross-entropy of row- and column-wise softmax(sim / tau)
// against the diagonal, averaged over both directions and the batch.
Tensor infonce_loss(const Tensor& sim, double temperature);

/// Contrastive trainer: Adam on the model's registry, seeded shuffling,
/// in-batch negatives at both the clip and the video level.
class Trainer {
 public:
  Trainer(MamFusionModel& model, TrainConfig config);

  // One pass over the captions; returns the size-weighted mean batch loss.
  double train_epoch(const Corpus& corpus);
  // Same batches as train_epoch for the upcoming epoch, without updates.
  double evaluation_loss(const Corpus& corpus) const;

  // Loss of one batch of caption indices whose videos are pairwise distinct.
  Tensor batch_loss(const Corpus& corpus, std::span<const std::size_t> captions) const;
  std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus, std::size_t epoch) const;

  const LossTrace& trace() const { return trace_; }
  std::size_t epochs_done() const { return epoch_; }
  const TrainConfig& config() const { return config_; }

 private:
  MamFusionModel& model_;
  TrainConfig config_;
  AdamState adam_;
  LossTrace trace_;
  std::size_t epoch_ = 0;
};

struct Evaluation {
  std::vector<RetrievalResult> results;
  MetricsReport metrics;
};

// Every caption queries the full video corpus.
Evaluation evaluate(const MamFusionModel& model, const Corpus& corpus, const ForwardOptions& options = {});

void write_loss_csv(const std::filesystem::path& path, const LossTrace& trace);
LossTrace read_loss_csv(const std::filesystem::path& path);

// First epoch whose mean loss is at most (1 - fraction) of the first epoch's.
std::optional<std::size_t> epochs_to_reduction(const LossTrace& trace, double fraction);

}  // namespace mamfusion
