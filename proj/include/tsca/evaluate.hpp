#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "tsca/augment.hpp"
#include "tsca/checkpoint.hpp"
#include "tsca/dataio.hpp"
#include "tsca/encoder.hpp"

namespace tsca {

/// Monte-Carlo estimator settings for contrastive accuracy.
struct CAConfig {
  int draws = 10;       // sampled (query, key) transformation pairs
  int eval_batch = 256;  // disjoint-batch size for large evaluation sets
  std::uint64_t seed = 0;

  void validate() const {
    if (draws < 1) throw ArgumentError("CAConfig: draws must be >= 1");
    if (eval_batch < 2) throw ArgumentError("CAConfig: eval_batch must be >= 2");
  }
};

/// Rows whose argmax against the other view's rows (by cosine similarity,
/// lowest index on ties) lands on the diagonal.
int ca_batch_matches(const MatXf& proj_q, const MatXf& proj_k);

/// Maps a batch of canonical series plus one crop draw to projected
/// embeddings (rows). Lets tests substitute stub encoders.
using ViewProjector =
    std::function<MatXf(const std::vector<Eigen::VectorXd>&, const CropDraw&)>;

ViewProjector make_view_projector(const EncoderParamsT<float>& params);

/// Fraction of evaluation examples whose two augmented views are mutual
/// nearest neighbors within their disjoint batch, averaged over sampled
/// transformation pairs. Batches of size < 2 are skipped.
double contrastive_accuracy(const ViewProjector& projector,
                            const std::vector<Eigen::VectorXd>& eval_series,
                            const CAConfig& cfg, const CropResizeConfig& aug);
double contrastive_accuracy(const Checkpoint& ckpt,
                            const std::vector<Eigen::VectorXd>& eval_series,
                            const CAConfig& cfg, const CropResizeConfig& aug);

struct ProbeConfig {
  double lr = 2e-4;
  int epochs = 500;
  int batch = 256;
  int warmup_epochs = 10;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw ArgumentError("ProbeConfig: lr must be > 0");
    if (epochs < 0) throw ArgumentError("ProbeConfig: epochs must be >= 0");
    if (batch < 1) throw ArgumentError("ProbeConfig: batch must be >= 1");
    if (epochs > 0 && warmup_epochs >= epochs)
      throw ArgumentError("ProbeConfig: warmup_epochs must be < epochs");
  }
};

/// norm + linear classification head on top of the encoder embedding.
struct ProbeHead {
  MatXf gamma, beta;  // token_dim x 1
  MatXf w;            // token_dim x classes
  MatXf b;            // classes x 1
};

struct ProbeResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  bool degenerate = false;  // single-class task; excluded from averages
};

/// Head-only training on fixed embeddings (the frozen-encoder path, also
/// the seam for classifier tests).
ProbeHead fit_head(const MatXf& embeddings, const std::vector<int>& labels, int num_classes,
                   const ProbeConfig& cfg);
double head_accuracy(const ProbeHead& head, const MatXf& embeddings,
                     const std::vector<int>& labels);

/// Attaches a fresh head and trains on task.train; by default the whole
/// encoder is fine-tuned, with freeze_encoder only the head moves. No
/// augmentation is applied. Returns plain accuracy on both splits.
ProbeResult fit_probe(const Checkpoint& ckpt, const Dataset& task, const ProbeConfig& cfg);

/// Unweighted mean of per-task accuracies (train, test); degenerate tasks
/// are excluded. Every probe starts fresh from the checkpoint.
std::pair<double, double> avg_performance(const Checkpoint& ckpt,
                                          const std::vector<Dataset>& tasks,
                                          const ProbeConfig& cfg);

/// Sample Pearson correlation coefficient.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace tsca
