#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmdr/autograd.hpp"
#include "mmdr/error.hpp"
#include "mmdr/matrix.hpp"

namespace mmdr {

// Objective configuration. lambda mixes the contrastive and distillation
// terms; student_temp is the forward value of the trainable student
// temperature; teacher_temps holds one fixed temperature per stored teacher.
struct LossConfig {
  double lambda = 0.75;
  double student_temp = 0.07;
  std::vector<double> teacher_temps;

  std::size_t teacher_count() const { return teacher_temps.size(); }

  void validate() const {
    require(lambda >= 0.0 && lambda <= 1.0, Errc::invalid_argument,
            "lambda must lie in [0,1], got " + std::to_string(lambda));
    require(student_temp > 0.0, Errc::non_positive_temperature,
            "student temperature must be positive");
    for (double t : teacher_temps)
      require(t > 0.0, Errc::non_positive_temperature, "teacher temperature must be positive");
    require(lambda == 0.0 || !teacher_temps.empty(), Errc::teacher_count_mismatch,
            "distillation term needs at least one teacher temperature");
  }
};

// One training batch: student embeddings plus the per-teacher embedding
// matrices loaded from the store. All rows unit-norm, b rows each.
template <typename T>
struct BatchEmbeddings {
  Matrix<T> student_img;
  Matrix<T> student_txt;
  std::vector<Matrix<T>> teacher_img;
  std::vector<Matrix<T>> teacher_txt;

  std::size_t batch_size() const { return student_img.rows(); }
};

namespace detail {

template <typename T>
void check_unit_rows(const Matrix<T>& m, const char* name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double norm = double(row_norm(m, r));
    require(std::abs(norm - 1.0) <= 1e-3, Errc::non_unit_rows,
            std::string(name) + " row " + std::to_string(r) + " has norm " +
                std::to_string(norm));
  }
}

inline double safe_log(double v) { return std::log(std::max(v, 1e-12)); }

// Sum of p*log(p) with the 0*log(0)=0 convention (negated entropy).
template <typename T>
double plogp_sum(const Matrix<T>& p) {
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pv = double(p.data()[i]);
    if (pv > 0) acc += pv * std::log(pv);
  }
  return acc;
}

}  // namespace detail

// Row-stochastic affinity matrix: row_softmax(u v^T / temp).
template <typename T>
Matrix<T> similarity(const Matrix<T>& u, const Matrix<T>& v, T temp) {
  require(u.rows() == v.rows() && u.cols() == v.cols(), Errc::shape_mismatch,
          "similarity: embedding matrices must share shape");
  detail::check_unit_rows(u, "u");
  detail::check_unit_rows(v, "v");
  return row_softmax(matmul(u, transpose(v)), temp);
}

// Symmetric InfoNCE with diagonal ground truth, averaged over the batch.
template <typename T>
double clip_loss(const BatchEmbeddings<T>& emb, T temp) {
  const std::size_t b = emb.batch_size();
  require(emb.student_txt.rows() == b, Errc::shape_mismatch,
          "clip_loss: image/text row counts differ");
  Matrix<T> s_i2t = similarity(emb.student_img, emb.student_txt, temp);
  Matrix<T> s_t2i = similarity(emb.student_txt, emb.student_img, temp);
  double acc = 0;
  for (std::size_t i = 0; i < b; ++i)
    acc -= detail::safe_log(double(s_i2t(i, i))) + detail::safe_log(double(s_t2i(i, i)));
  return acc / (2.0 * double(b));
}

// Affinity mimicking: mean per-teacher KL between teacher and student
// affinity matrices, both softmax directions averaged.
template <typename T>
double distill_loss(const BatchEmbeddings<T>& emb, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t K = cfg.teacher_count();
  require(K >= 1, Errc::teacher_count_mismatch, "distill_loss needs at least one teacher");
  require(emb.teacher_img.size() == K && emb.teacher_txt.size() == K,
          Errc::teacher_count_mismatch,
          "expected " + std::to_string(K) + " teacher matrix pairs, got " +
              std::to_string(emb.teacher_img.size()) + "/" + std::to_string(emb.teacher_txt.size()));
  const std::size_t b = emb.batch_size();
  const T temp = T(cfg.student_temp);
  Matrix<T> q_i2t = similarity(emb.student_img, emb.student_txt, temp);
  Matrix<T> q_t2i = similarity(emb.student_txt, emb.student_img, temp);
  double i2t = 0, t2i = 0;
  for (std::size_t k = 0; k < K; ++k) {
    require(emb.teacher_img[k].rows() == b && emb.teacher_txt[k].rows() == b,
            Errc::shape_mismatch, "teacher batch " + std::to_string(k) + " row count mismatch");
    const T tk = T(cfg.teacher_temps[k]);
    i2t += kl_rows(similarity(emb.teacher_img[k], emb.teacher_txt[k], tk), q_i2t);
    t2i += kl_rows(similarity(emb.teacher_txt[k], emb.teacher_img[k], tk), q_t2i);
  }
  const double denom = double(b) * double(K);
  return 0.5 * i2t / denom + 0.5 * t2i / denom;
}

// Convex mix of the two terms. The endpoints return the underlying loss
// value itself so lambda in {0,1} is exact, not just within rounding.
template <typename T>
double total_loss(const BatchEmbeddings<T>& emb, const LossConfig& cfg) {
  cfg.validate();
  if (cfg.lambda == 0.0) return clip_loss(emb, T(cfg.student_temp));
  if (cfg.lambda == 1.0) return distill_loss(emb, cfg);
  return (1.0 - cfg.lambda) * clip_loss(emb, T(cfg.student_temp)) +
         cfg.lambda * distill_loss(emb, cfg);
}

// Sum over the real-caption and synthetic-caption batches.
template <typename T>
double reinforced_batch_loss(const BatchEmbeddings<T>& real_batch,
                             const BatchEmbeddings<T>& syn_batch, const LossConfig& cfg) {
  require(real_batch.student_img.same_shape(syn_batch.student_img), Errc::shape_mismatch,
          "reinforced_batch_loss: batches must share image rows");
  return total_loss(real_batch, cfg) + total_loss(syn_batch, cfg);
}

// ---------------------------------------------------------------------------
// Graph builders. Teacher affinities are constants, so their softmaxes are
// computed outside the graph; only the student side carries gradients.
// KL(P||Q) enters as sum(P.*log P) - sum(P.*log Q) with the first term a
// folded constant.

template <typename T>
struct LossNodes {
  typename Graph<T>::Id total = -1;
  typename Graph<T>::Id clip = -1;     // -1 when lambda == 1
  typename Graph<T>::Id distill = -1;  // -1 when lambda == 0
};

// Builds L_Total over one batch. img_raw/txt_raw are b x d student nodes
// (normalized here, so encoders may feed projections directly), log_scale
// is the 1x1 trainable node with alpha = exp(log_scale) = 1/student_temp.
// Teacher matrices must be unit-norm; they are not touched when lambda==0.
template <typename T>
LossNodes<T> build_total_loss(Graph<T>& g, typename Graph<T>::Id img_raw,
                              typename Graph<T>::Id txt_raw, typename Graph<T>::Id log_scale,
                              const std::vector<Matrix<T>>& teacher_img,
                              const std::vector<Matrix<T>>& teacher_txt, const LossConfig& cfg) {
  using Id = typename Graph<T>::Id;
  cfg.validate();
  Id img = g.l2_normalize_rows(img_raw);
  Id txt = g.l2_normalize_rows(txt_raw);
  const std::size_t b = g.value(img).rows();
  Id alpha = g.exp(log_scale);
  Id logits_i2t = g.mul_scalar(g.matmul(img, g.transpose(txt)), alpha);
  Id q_i2t = g.row_softmax(logits_i2t, T(1));
  Id q_t2i = g.row_softmax(g.transpose(logits_i2t), T(1));
  Id log_q_i2t = g.log(q_i2t);
  Id log_q_t2i = g.log(q_t2i);

  LossNodes<T> out;
  if (cfg.lambda < 1.0) {
    Matrix<T> diag(b, b);
    for (std::size_t i = 0; i < b; ++i) diag(i, i) = T(1);
    Id mask = g.constant(std::move(diag));
    Id ce = g.add(g.sum(g.mul(mask, log_q_i2t)), g.sum(g.mul(mask, log_q_t2i)));
    out.clip = g.scale(ce, T(-0.5) / T(b));
  }
  if (cfg.lambda > 0.0) {
    const std::size_t K = cfg.teacher_count();
    require(teacher_img.size() == K && teacher_txt.size() == K, Errc::teacher_count_mismatch,
            "expected " + std::to_string(K) + " teacher matrix pairs");
    double plogp = 0;
    Id cross = -1;
    for (std::size_t k = 0; k < K; ++k) {
      const T tk = T(cfg.teacher_temps[k]);
      Matrix<T> p_i2t = similarity(teacher_img[k], teacher_txt[k], tk);
      Matrix<T> p_t2i = similarity(teacher_txt[k], teacher_img[k], tk);
      require(p_i2t.rows() == b, Errc::shape_mismatch,
              "teacher batch " + std::to_string(k) + " row count mismatch");
      plogp += detail::plogp_sum(p_i2t) + detail::plogp_sum(p_t2i);
      Id term = g.add(g.sum(g.mul(g.constant(std::move(p_i2t)), log_q_i2t)),
                      g.sum(g.mul(g.constant(std::move(p_t2i)), log_q_t2i)));
      cross = (cross < 0) ? term : g.add(cross, term);
    }
    Id kl = g.add(g.constant_scalar(T(plogp)), g.scale(cross, T(-1)));
    out.distill = g.scale(kl, T(0.5) / (T(b) * T(K)));
  }
  if (cfg.lambda == 0.0) {
    out.total = out.clip;
  } else if (cfg.lambda == 1.0) {
    out.total = out.distill;
  } else {
    out.total =
        g.add(g.scale(out.clip, T(1.0 - cfg.lambda)), g.scale(out.distill, T(cfg.lambda)));
  }
  return out;
}

template <typename T>
struct ReinforcedLossNodes {
  LossNodes<T> real;
  LossNodes<T> syn;
  typename Graph<T>::Id total = -1;
  bool has_syn = false;
};

// Eq-style final objective: the real-caption term plus, when a synthetic
// caption batch exists, the synthetic-caption term on the same image rows.
template <typename T>
ReinforcedLossNodes<T> build_reinforced_loss(
    Graph<T>& g, typename Graph<T>::Id img_raw, typename Graph<T>::Id real_txt_raw,
    typename Graph<T>::Id syn_txt_raw /* -1 when absent */, typename Graph<T>::Id log_scale,
    const std::vector<Matrix<T>>& teacher_img, const std::vector<Matrix<T>>& teacher_real_txt,
    const std::vector<Matrix<T>>& teacher_syn_txt, const LossConfig& cfg) {
  ReinforcedLossNodes<T> out;
  out.real =
      build_total_loss(g, img_raw, real_txt_raw, log_scale, teacher_img, teacher_real_txt, cfg);
  if (syn_txt_raw >= 0) {
    out.syn =
        build_total_loss(g, img_raw, syn_txt_raw, log_scale, teacher_img, teacher_syn_txt, cfg);
    out.total = g.add(out.real.total, out.syn.total);
    out.has_syn = true;
  } else {
    out.total = out.real.total;
  }
  return out;
}

}  // namespace mmdr
