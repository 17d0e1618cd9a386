#include "tsca/training.hpp"

#include <algorithm>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tsca {

namespace {
int g_threads = 0;  // 0 = library default
}

void set_compute_threads(int n) {
  g_threads = n;
  if (n > 0) {
    Eigen::setNbThreads(n);
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
  }
}

int compute_threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

PretrainResult pretrain(const std::vector<Eigen::VectorXd>& pool, const TrainConfig& tc,
                        const EncoderConfig& ec, const CropResizeConfig& ac) {
  tc.validate();
  ec.validate();
  ac.validate();
  if (pool.empty()) throw ArgumentError("pretrain: empty pre-training set");
  const int n = static_cast<int>(pool.size());
  if (tc.drop_last && n < tc.batch)
    throw ArgumentError("pretrain: |train| < batch (set drop_last=false to allow)");
  for (const auto& s : pool) {
    if (static_cast<int>(s.size()) != ec.seq_len)
      throw ArgumentError("pretrain: series length != seq_len; canonicalize first");
  }

  PretrainResult out;
  auto params = init_params<float>(ec, tc.seed);
  auto state = OptimizerStateT<float>::zero(ec);
  auto rng = make_rng(tc.seed, 1);

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_at(epoch, tc);
    std::shuffle(perm.begin(), perm.end(), rng);

    double epoch_loss = 0;
    long examples = 0;
    for (int at = 0; at + 1 < n; at += tc.batch) {
      const int bsz = std::min(tc.batch, n - at);
      if (bsz < tc.batch && tc.drop_last) break;
      if (bsz < 2) break;

      std::vector<Eigen::VectorXd> batch;
      batch.reserve(static_cast<std::size_t>(bsz));
      for (int i = 0; i < bsz; ++i)
        batch.push_back(pool[static_cast<std::size_t>(perm[static_cast<std::size_t>(at + i)])]);

      std::vector<CropDraw> draws(static_cast<std::size_t>(2 * bsz));
      for (auto& d : draws) d = sample_crop(rng, ac, ec.seq_len);

      auto lg = loss_and_gradients(params, batch, draws, tc.temperature, tc.symmetric_loss);
      adamw_update(params, lg.grads, state, lr, tc);
      epoch_loss += lg.loss;
      examples += bsz;
    }
    if (examples == 0)
      throw ArgumentError("pretrain: no full batch available (pool too small)");
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(examples));
  }

  out.checkpoint.params = std::move(params);
  out.checkpoint.train = tc;
  out.checkpoint.aug = ac;
  out.checkpoint.seed = tc.seed;
  out.checkpoint.epochs_run = tc.epochs;
  out.checkpoint.final_loss = out.epoch_losses.empty() ? 0.0 : out.epoch_losses.back();
  return out;
}

PretrainResult pretrain(const Dataset& pre_set, const TrainConfig& tc, const EncoderConfig& ec,
                        const CropResizeConfig& ac) {
  return pretrain(series_pool(pre_set), tc, ec, ac);
}

}  // namespace tsca
