#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tsca/augment.hpp"
#include "tsca/checkpoint.hpp"
#include "tsca/dataio.hpp"
#include "tsca/encoder.hpp"
#include "tsca/train_config.hpp"

namespace tsca {

template <class S>
S cosine_similarity(const VecX<S>& q, const VecX<S>& k) {
  if (q.size() != k.size()) throw ArgumentError("cosine_similarity: size mismatch");
  const S nq = q.norm();
  const S nk = k.norm();
  if (nq <= S(1e-12) || nk <= S(1e-12))
    throw NumericError("cosine_similarity: near-zero norm");
  return q.dot(k) / (nq * nk);
}

namespace detail {

/// Rows scaled to unit norm; throws when a row is numerically zero.
template <class S>
MatX<S> normalize_rows(const MatX<S>& m, const char* what) {
  VecX<S> norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > S(1e-12)))
      throw NumericError(std::string(what) + ": near-zero norm in row " + std::to_string(i));
  }
  return (m.array().colwise() / norms.array()).matrix();
}

}  // namespace detail

/// Pairwise cosine similarities: entry (i, j) compares row i of a with
/// row j of b.
template <class S>
MatX<S> similarity_rows(const MatX<S>& a, const MatX<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("similarity_rows: shape mismatch");
  if (a.rows() < 1) throw ArgumentError("similarity_rows: empty input");
  MatX<S> an = detail::normalize_rows(a, "similarity_rows(a)");
  MatX<S> bn = detail::normalize_rows(b, "similarity_rows(b)");
  return an * bn.transpose();
}

namespace detail {

/// Row-wise softmax cross-entropy against the diagonal: loss contribution
/// logsumexp(row/T) - row[i]/T for row i, and optionally the gradient
/// (softmax - identity)/T accumulated into *grad.
template <class S>
double softmax_ce_diagonal(const MatX<S>& sim, double temperature, MatX<S>* grad) {
  const Eigen::Index b = sim.rows();
  double loss = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    VecX<S> logits = sim.row(i).transpose() / S(temperature);
    const S mx = logits.maxCoeff();
    VecX<S> ex = (logits.array() - mx).exp();
    const S denom = ex.sum();
    loss += static_cast<double>(std::log(denom) + mx - logits[i]);
    if (grad) {
      VecX<S> p = ex / denom;
      p[i] -= S(1);
      grad->row(i) += p.transpose() / S(temperature);
    }
  }
  return loss;
}

}  // namespace detail

/// Sum over rows of cross-entropy between softmax(row/T) and the row
/// index as target.
template <class S>
double info_nce(const MatX<S>& sim, double temperature) {
  if (sim.rows() != sim.cols() || sim.rows() < 1)
    throw ArgumentError("info_nce: similarity matrix must be square and non-empty");
  if (!(temperature > 0)) throw ArgumentError("info_nce: temperature must be > 0");
  if (!sim.allFinite()) throw NumericError("info_nce: non-finite similarity entries");
  return detail::softmax_ce_diagonal(sim, temperature, static_cast<MatX<S>*>(nullptr));
}

template <class S>
struct LossGrad {
  double loss = 0;
  EncoderParamsT<S> grads;
};

/// Contrastive loss and exact parameter gradients for one batch. draws
/// holds 2b crop draws: the first b produce the query views, the last b
/// the key views. Gradients flow through both views of the shared
/// encoder and projector.
template <class S>
LossGrad<S> loss_and_gradients(const EncoderParamsT<S>& params,
                               const std::vector<Eigen::VectorXd>& batch,
                               const std::vector<CropDraw>& draws, double temperature,
                               bool symmetric = false) {
  const int b = static_cast<int>(batch.size());
  if (b < 2) throw ArgumentError("loss_and_gradients: batch must have >= 2 examples");
  if (draws.size() != 2 * batch.size())
    throw ArgumentError("loss_and_gradients: need exactly 2b crop draws");
  if (!(temperature > 0)) throw ArgumentError("loss_and_gradients: temperature must be > 0");
  const int seq = params.cfg.seq_len;

  MatX<S> views(2 * b, seq);
  for (int i = 0; i < b; ++i) {
    views.row(i) = apply_crop_resize(draws[static_cast<std::size_t>(i)], batch[static_cast<std::size_t>(i)], seq)
                       .transpose()
                       .cast<S>();
    views.row(b + i) =
        apply_crop_resize(draws[static_cast<std::size_t>(b + i)], batch[static_cast<std::size_t>(i)], seq)
            .transpose()
            .cast<S>();
  }

  ForwardCache<S> cache;
  MatX<S> emb = encode_batch(params, views, &cache);
  ProjCache<S> pcache;
  MatX<S> proj = project_batch(params, emb, &pcache);

  MatX<S> nrm = detail::normalize_rows(proj, "loss_and_gradients");
  const auto qn = nrm.topRows(b);
  const auto kn = nrm.bottomRows(b);
  MatX<S> sim = qn * kn.transpose();

  MatX<S> gsim = MatX<S>::Zero(b, b);
  double loss = detail::softmax_ce_diagonal(sim, temperature, &gsim);
  if (symmetric) {
    MatX<S> simT = sim.transpose();
    MatX<S> gT = MatX<S>::Zero(b, b);
    loss += detail::softmax_ce_diagonal(simT, temperature, &gT);
    gsim += gT.transpose();
  }

  MatX<S> dnrm(2 * b, proj.cols());
  dnrm.topRows(b).noalias() = gsim * kn;
  dnrm.bottomRows(b).noalias() = gsim.transpose() * qn;

  // undo the row normalization: da = (dn - (n . dn) n) / |a|
  VecX<S> norms = proj.rowwise().norm();
  MatX<S> dproj(2 * b, proj.cols());
  for (Eigen::Index i = 0; i < dnrm.rows(); ++i) {
    const S dot = nrm.row(i).dot(dnrm.row(i));
    dproj.row(i) = (dnrm.row(i) - dot * nrm.row(i)) / norms[i];
  }

  LossGrad<S> out;
  out.loss = loss;
  out.grads = allocate_params<S>(params.cfg);
  MatX<S> demb = projector_backward(params, pcache, dproj, out.grads);
  encoder_backward(params, cache, demb, out.grads);
  return out;
}

template <class S>
struct OptimizerStateT {
  long long step = 0;
  EncoderParamsT<S> m, v;

  static OptimizerStateT zero(const EncoderConfig& cfg) {
    OptimizerStateT st;
    st.m = allocate_params<S>(cfg);
    st.v = allocate_params<S>(cfg);
    return st;
  }
};

namespace detail {

/// One AdamW step on a single tensor. Decay is decoupled and applied
/// before the moment update; bias correction uses the given step (1-based).
template <class S>
void adamw_tensor(MatX<S>& p, const MatX<S>& g, MatX<S>& m, MatX<S>& v, long long step,
                  double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (p.rows() != g.rows() || p.cols() != g.cols())
    throw ArgumentError("adamw: gradient shape does not match parameter shape");
  p *= S(1.0 - lr * weight_decay);
  m = S(beta1) * m + S(1.0 - beta1) * g;
  v = (S(beta2) * v.array() + S(1.0 - beta2) * g.array().square()).matrix();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  p.array() -= S(lr) * (m.array() / S(c1)) / ((v.array() / S(c2)).sqrt() + S(eps));
}

}  // namespace detail

/// Tensors whose name starts with skip_prefix are left untouched (used by
/// probe fine-tuning, where the contrastive projector is not part of the
/// optimized model).
template <class S>
void adamw_update(EncoderParamsT<S>& params, const EncoderParamsT<S>& grads,
                  OptimizerStateT<S>& st, double lr, const TrainConfig& cfg,
                  const char* skip_prefix = nullptr) {
  ++st.step;
  std::vector<const MatX<S>*> gs;
  grads.for_each_tensor([&gs](const std::string&, const MatX<S>& t) { gs.push_back(&t); });
  std::vector<MatX<S>*> ms, vs;
  st.m.for_each_tensor([&ms](const std::string&, MatX<S>& t) { ms.push_back(&t); });
  st.v.for_each_tensor([&vs](const std::string&, MatX<S>& t) { vs.push_back(&t); });
  std::size_t i = 0;
  const std::string_view skip = skip_prefix ? skip_prefix : "";
  params.for_each_tensor([&](const std::string& name, MatX<S>& p) {
    if (skip.empty() || name.rfind(skip, 0) != 0) {
      detail::adamw_tensor(p, *gs[i], *ms[i], *vs[i], st.step, lr, cfg.weight_decay, cfg.beta1,
                           cfg.beta2, cfg.adam_eps);
    }
    ++i;
  });
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // mean per-example loss per epoch
};

/// Contrastive pre-training over an unlabeled pool of canonical series.
PretrainResult pretrain(const std::vector<Eigen::VectorXd>& pool, const TrainConfig& tc,
                        const EncoderConfig& ec, const CropResizeConfig& ac);
PretrainResult pretrain(const Dataset& pre_set, const TrainConfig& tc, const EncoderConfig& ec,
                        const CropResizeConfig& ac);

}  // namespace tsca
