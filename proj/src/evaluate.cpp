#include "tsca/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "tsca/training.hpp"

namespace tsca {

namespace {

/// Lowest-index argmax (strict > comparison keeps the first maximum).
Eigen::Index first_argmax(const Eigen::Ref<const Eigen::RowVectorXf>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

MatXf embed_all(const EncoderParamsT<float>& params, const std::vector<Eigen::VectorXd>& series,
                int chunk = 256) {
  const int seq = params.cfg.seq_len;
  const int n = static_cast<int>(series.size());
  MatXf out(n, params.cfg.token_dim);
  for (int at = 0; at < n; at += chunk) {
    const int m = std::min(chunk, n - at);
    MatXf batch(m, seq);
    for (int i = 0; i < m; ++i) {
      const auto& s = series[static_cast<std::size_t>(at + i)];
      if (static_cast<int>(s.size()) != seq)
        throw ArgumentError("embed: series length != seq_len; canonicalize first");
      batch.row(i) = s.transpose().cast<float>();
    }
    out.middleRows(at, m) = encode_batch(params, batch);
  }
  return out;
}

std::vector<int> split_labels(const std::vector<TimeSeries>& split, const char* what) {
  std::vector<int> labels;
  labels.reserve(split.size());
  for (const auto& s : split) {
    if (!s.label) throw ArgumentError(std::string("fit_probe: unlabeled series in ") + what);
    labels.push_back(*s.label);
  }
  return labels;
}

std::vector<Eigen::VectorXd> split_values(const std::vector<TimeSeries>& split) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(split.size());
  for (const auto& s : split) out.push_back(s.values);
  return out;
}

}  // namespace

int ca_batch_matches(const MatXf& proj_q, const MatXf& proj_k) {
  if (proj_q.rows() != proj_k.rows() || proj_q.cols() != proj_k.cols())
    throw ArgumentError("ca_batch_matches: shape mismatch");
  const Eigen::Index m = proj_q.rows();
  const Eigen::Index d = proj_q.cols();

  // plain double-precision dot products: every (i, j) entry follows the
  // same instruction sequence, so identical rows give exact ties and the
  // lowest-index argmax is well defined
  const MatX<double> q = proj_q.transpose().cast<double>();  // d x m, columns contiguous
  const MatX<double> k = proj_k.transpose().cast<double>();
  Eigen::VectorXd qn(m), kn(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    qn[i] = q.col(i).norm();
    kn[i] = k.col(i).norm();
    if (!(qn[i] > 1e-12) || !(kn[i] > 1e-12))
      throw NumericError("ca_batch_matches: near-zero norm in row " + std::to_string(i));
  }

  int matches = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index best = 0;
    double best_val = -2.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      double dot = 0;
      for (Eigen::Index c = 0; c < d; ++c) dot += q(c, i) * k(c, j);
      const double sim = dot / (qn[i] * kn[j]);
      if (sim > best_val) {
        best_val = sim;
        best = j;
      }
    }
    if (best == i) ++matches;
  }
  return matches;
}

ViewProjector make_view_projector(const EncoderParamsT<float>& params) {
  auto shared = std::make_shared<EncoderParamsT<float>>(params);
  return [shared](const std::vector<Eigen::VectorXd>& series, const CropDraw& draw) -> MatXf {
    const int seq = shared->cfg.seq_len;
    const int m = static_cast<int>(series.size());
    MatXf batch(m, seq);
    for (int i = 0; i < m; ++i)
      batch.row(i) = apply_crop_resize(draw, series[static_cast<std::size_t>(i)], seq)
                         .transpose()
                         .cast<float>();
    return project_batch(*shared, encode_batch(*shared, batch));
  };
}

double contrastive_accuracy(const ViewProjector& projector,
                            const std::vector<Eigen::VectorXd>& eval_series,
                            const CAConfig& cfg, const CropResizeConfig& aug) {
  cfg.validate();
  aug.validate();
  const int n = static_cast<int>(eval_series.size());
  if (n < 2) throw ArgumentError("contrastive_accuracy: need >= 2 evaluation examples");
  const int in_len = static_cast<int>(eval_series.front().size());
  for (const auto& s : eval_series) {
    if (static_cast<int>(s.size()) != in_len)
      throw ArgumentError("contrastive_accuracy: evaluation series lengths differ");
  }

  long long matches = 0;
  long long counted = 0;
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int k = 0; k < cfg.draws; ++k) {
    auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(k));
    const CropDraw query_draw = sample_crop(rng, aug, in_len);
    const CropDraw key_draw = sample_crop(rng, aug, in_len);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    for (int at = 0; at < n; at += cfg.eval_batch) {
      const int m = std::min(cfg.eval_batch, n - at);
      if (m < 2) continue;
      std::vector<Eigen::VectorXd> batch;
      batch.reserve(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        batch.push_back(eval_series[static_cast<std::size_t>(perm[static_cast<std::size_t>(at + i)])]);
      MatXf q = projector(batch, query_draw);
      MatXf kk = projector(batch, key_draw);
      matches += ca_batch_matches(q, kk);
      counted += m;
    }
  }
  if (counted == 0) throw ArgumentError("contrastive_accuracy: no batch of size >= 2");
  return static_cast<double>(matches) / static_cast<double>(counted);
}

double contrastive_accuracy(const Checkpoint& ckpt,
                            const std::vector<Eigen::VectorXd>& eval_series,
                            const CAConfig& cfg, const CropResizeConfig& aug) {
  return contrastive_accuracy(make_view_projector(ckpt.params), eval_series, cfg, aug);
}

namespace {

struct HeadGrads {
  MatXf gamma, beta, w, b;
};

struct HeadState {
  long long step = 0;
  HeadGrads m, v;
};

ProbeHead init_head(int dim, int classes, std::uint64_t seed) {
  ProbeHead h;
  h.gamma = MatXf::Ones(dim, 1);
  h.beta = MatXf::Zero(dim, 1);
  h.w = MatXf::Zero(dim, classes);
  h.b = MatXf::Zero(classes, 1);
  std::mt19937_64 rng(mix_seed(seed, 77));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < h.w.size(); ++i)
    h.w.data()[i] = static_cast<float>(dist(rng));
  return h;
}

HeadGrads zero_grads(const ProbeHead& h) {
  return {MatXf::Zero(h.gamma.rows(), 1), MatXf::Zero(h.beta.rows(), 1),
          MatXf::Zero(h.w.rows(), h.w.cols()), MatXf::Zero(h.b.rows(), 1)};
}

struct HeadForward {
  MatXf xhat, ln_out;
  VecXf istd;
  MatXf logits;
};

void head_forward(const ProbeHead& h, const MatXf& emb, HeadForward& f) {
  f.ln_out = detail::layernorm_forward(emb, h.gamma, h.beta, f.xhat, f.istd);
  f.logits.noalias() = f.ln_out * h.w;
  f.logits.rowwise() += h.b.col(0).transpose();
}

/// Mean softmax cross-entropy and dlogits; returns the loss.
double ce_loss_grad(const MatXf& logits, const std::vector<int>& labels, MatXf& dlogits) {
  const Eigen::Index m = logits.rows();
  dlogits.resize(m, logits.cols());
  double loss = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::RowVectorXf row = logits.row(i);
    const float mx = row.maxCoeff();
    Eigen::RowVectorXf ex = (row.array() - mx).exp();
    const float denom = ex.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    loss += std::log(denom) + mx - row[y];
    Eigen::RowVectorXf p = ex / denom;
    p[y] -= 1.0f;
    dlogits.row(i) = p / static_cast<float>(m);
  }
  return loss / static_cast<double>(m);
}

/// dlogits -> head gradients; returns d(embeddings) if demb != nullptr.
void head_backward(const ProbeHead& h, const HeadForward& f, const MatXf& dlogits,
                   HeadGrads& g, MatXf* demb) {
  g.w.noalias() += f.ln_out.transpose() * dlogits;
  g.b += dlogits.colwise().sum().transpose();
  MatXf dln = dlogits * h.w.transpose();
  MatXf dx = detail::layernorm_backward(dln, h.gamma, f.xhat, f.istd, g.gamma, g.beta);
  if (demb) *demb = std::move(dx);
}

void head_adamw(ProbeHead& h, const HeadGrads& g, HeadState& st, double lr,
                const ProbeConfig& cfg) {
  ++st.step;
  detail::adamw_tensor(h.gamma, g.gamma, st.m.gamma, st.v.gamma, st.step, lr, cfg.weight_decay,
                       cfg.beta1, cfg.beta2, cfg.adam_eps);
  detail::adamw_tensor(h.beta, g.beta, st.m.beta, st.v.beta, st.step, lr, cfg.weight_decay,
                       cfg.beta1, cfg.beta2, cfg.adam_eps);
  detail::adamw_tensor(h.w, g.w, st.m.w, st.v.w, st.step, lr, cfg.weight_decay, cfg.beta1,
                       cfg.beta2, cfg.adam_eps);
  detail::adamw_tensor(h.b, g.b, st.m.b, st.v.b, st.step, lr, cfg.weight_decay, cfg.beta1,
                       cfg.beta2, cfg.adam_eps);
}

int count_correct(const MatXf& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (first_argmax(logits.row(i)) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return correct;
}

}  // namespace

ProbeHead fit_head(const MatXf& embeddings, const std::vector<int>& labels, int num_classes,
                   const ProbeConfig& cfg) {
  cfg.validate();
  if (embeddings.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ArgumentError("fit_head: embeddings/labels size mismatch");
  if (embeddings.rows() < 1) throw ArgumentError("fit_head: empty training set");
  if (num_classes < 1) throw ArgumentError("fit_head: num_classes must be >= 1");

  const int n = static_cast<int>(embeddings.rows());
  ProbeHead head = init_head(static_cast<int>(embeddings.cols()), num_classes, cfg.seed);
  HeadState st;
  st.m = zero_grads(head);
  st.v = zero_grads(head);
  auto rng = make_rng(cfg.seed, 31);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);

  HeadForward fwd;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.lr, cfg.epochs, cfg.warmup_epochs);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int at = 0; at < n; at += cfg.batch) {
      const int m = std::min(cfg.batch, n - at);
      MatXf emb(m, embeddings.cols());
      std::vector<int> lab(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        emb.row(i) = embeddings.row(perm[static_cast<std::size_t>(at + i)]);
        lab[static_cast<std::size_t>(i)] =
            labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(at + i)])];
      }
      head_forward(head, emb, fwd);
      MatXf dlogits;
      ce_loss_grad(fwd.logits, lab, dlogits);
      HeadGrads g = zero_grads(head);
      head_backward(head, fwd, dlogits, g, nullptr);
      head_adamw(head, g, st, lr, cfg);
    }
  }
  return head;
}

double head_accuracy(const ProbeHead& head, const MatXf& embeddings,
                     const std::vector<int>& labels) {
  if (embeddings.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ArgumentError("head_accuracy: embeddings/labels size mismatch");
  if (embeddings.rows() == 0) throw ArgumentError("head_accuracy: empty input");
  HeadForward fwd;
  head_forward(head, embeddings, fwd);
  return static_cast<double>(count_correct(fwd.logits, labels)) /
         static_cast<double>(embeddings.rows());
}

ProbeResult fit_probe(const Checkpoint& ckpt, const Dataset& task, const ProbeConfig& cfg) {
  cfg.validate();
  if (task.train.empty() || task.test.empty())
    throw ArgumentError("fit_probe: task needs at least one example per split");
  const auto train_labels = split_labels(task.train, "train");
  const auto test_labels = split_labels(task.test, "test");
  const int num_classes = task.num_classes;
  for (int y : train_labels)
    if (y < 0 || y >= num_classes) throw ArgumentError("fit_probe: label out of range");
  for (int y : test_labels)
    if (y < 0 || y >= num_classes) throw ArgumentError("fit_probe: label out of range");

  if (num_classes < 2) {
    // trivial classifier; flagged so averages can exclude it
    return {1.0, 1.0, true};
  }

  const auto train_series = split_values(task.train);
  const auto test_series = split_values(task.test);

  if (cfg.freeze_encoder) {
    MatXf train_emb = embed_all(ckpt.params, train_series);
    MatXf test_emb = embed_all(ckpt.params, test_series);
    ProbeHead head = fit_head(train_emb, train_labels, num_classes, cfg);
    return {head_accuracy(head, train_emb, train_labels),
            head_accuracy(head, test_emb, test_labels), false};
  }

  // fine-tune the encoder together with the head
  EncoderParamsT<float> params = ckpt.params;
  const int seq = params.cfg.seq_len;
  ProbeHead head = init_head(params.cfg.token_dim, num_classes, cfg.seed);
  HeadState hstate;
  hstate.m = zero_grads(head);
  hstate.v = zero_grads(head);
  auto estate = OptimizerStateT<float>::zero(params.cfg);

  TrainConfig shim;  // optimizer hyperparameters for the encoder side
  shim.weight_decay = cfg.weight_decay;
  shim.beta1 = cfg.beta1;
  shim.beta2 = cfg.beta2;
  shim.adam_eps = cfg.adam_eps;

  const int n = static_cast<int>(train_series.size());
  auto rng = make_rng(cfg.seed, 32);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg.lr, cfg.epochs, cfg.warmup_epochs);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int at = 0; at < n; at += cfg.batch) {
      const int m = std::min(cfg.batch, n - at);
      MatXf batch(m, seq);
      std::vector<int> lab(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        const auto& s = train_series[static_cast<std::size_t>(perm[static_cast<std::size_t>(at + i)])];
        if (static_cast<int>(s.size()) != seq)
          throw ArgumentError("fit_probe: series length != seq_len; canonicalize first");
        batch.row(i) = s.transpose().cast<float>();
        lab[static_cast<std::size_t>(i)] =
            train_labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(at + i)])];
      }
      ForwardCache<float> cache;
      MatXf emb = encode_batch(params, batch, &cache);
      HeadForward fwd;
      head_forward(head, emb, fwd);
      MatXf dlogits;
      ce_loss_grad(fwd.logits, lab, dlogits);
      HeadGrads hg = zero_grads(head);
      MatXf demb;
      head_backward(head, fwd, dlogits, hg, &demb);
      auto grads = allocate_params<float>(params.cfg);
      encoder_backward(params, cache, demb, grads);
      adamw_update(params, grads, estate, lr, shim, "projector.");
      head_adamw(head, hg, hstate, lr, cfg);
    }
  }

  MatXf train_emb = embed_all(params, train_series);
  MatXf test_emb = embed_all(params, test_series);
  return {head_accuracy(head, train_emb, train_labels),
          head_accuracy(head, test_emb, test_labels), false};
}

std::pair<double, double> avg_performance(const Checkpoint& ckpt,
                                          const std::vector<Dataset>& tasks,
                                          const ProbeConfig& cfg) {
  if (tasks.empty()) throw ArgumentError("avg_performance: no tasks");
  double train_sum = 0, test_sum = 0;
  int counted = 0;
  for (const auto& task : tasks) {
    const ProbeResult r = fit_probe(ckpt, task, cfg);
    if (r.degenerate) continue;
    train_sum += r.train_accuracy;
    test_sum += r.test_accuracy;
    ++counted;
  }
  if (counted == 0) throw ArgumentError("avg_performance: all tasks degenerate");
  return {train_sum / counted, test_sum / counted};
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ArgumentError("pearson: length mismatch");
  if (xs.size() < 2) throw ArgumentError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0 || syy <= 0) throw NumericError("pearson: constant input list");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace tsca
