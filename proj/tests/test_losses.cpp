#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mmdr/autograd.hpp"
#include "mmdr/losses.hpp"
#include "mmdr/matrix.hpp"
#include "mmdr/rng.hpp"

using namespace mmdr;

namespace {

// ---------------------------------------------------------------------------
// Independent scalar-loop oracle. Deliberately written with nested loops and
// std::vector only, sharing no code with the library kernels.
namespace oracle {

using Mat = std::vector<std::vector<double>>;

Mat affinity(const Mat& u, const Mat& v, double temp) {
  const std::size_t b = u.size(), d = u[0].size();
  Mat out(b, std::vector<double>(b, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> logits(b, 0.0);
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += u[i][k] * v[j][k];
      logits[j] = dot / temp;
    }
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double z = 0;
    for (std::size_t j = 0; j < b; ++j) {
      out[i][j] = std::exp(logits[j] - mx);
      z += out[i][j];
    }
    for (std::size_t j = 0; j < b; ++j) out[i][j] /= z;
  }
  return out;
}

double clip(const Mat& img, const Mat& txt, double temp) {
  Mat s1 = affinity(img, txt, temp);
  Mat s2 = affinity(txt, img, temp);
  const std::size_t b = img.size();
  double acc = 0;
  for (std::size_t i = 0; i < b; ++i)
    acc += -std::log(std::max(s1[i][i], 1e-12)) - std::log(std::max(s2[i][i], 1e-12));
  return acc / (2.0 * double(b));
}

double kl(const Mat& p, const Mat& q) {
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j)
      if (p[i][j] > 0) acc += p[i][j] * std::log(p[i][j] / std::max(q[i][j], 1e-12));
  return acc;
}

double distill(const Mat& s_img, const Mat& s_txt, const std::vector<Mat>& t_img,
               const std::vector<Mat>& t_txt, double student_temp,
               const std::vector<double>& teacher_temps) {
  const std::size_t b = s_img.size(), K = t_img.size();
  Mat q1 = affinity(s_img, s_txt, student_temp);
  Mat q2 = affinity(s_txt, s_img, student_temp);
  double i2t = 0, t2i = 0;
  for (std::size_t k = 0; k < K; ++k) {
    i2t += kl(affinity(t_img[k], t_txt[k], teacher_temps[k]), q1);
    t2i += kl(affinity(t_txt[k], t_img[k], teacher_temps[k]), q2);
  }
  return 0.5 * i2t / (double(b) * double(K)) + 0.5 * t2i / (double(b) * double(K));
}

Mat unit_rows(Rng& rng, std::size_t b, std::size_t d) {
  Mat m(b, std::vector<double>(d));
  for (auto& row : m) {
    double norm = 0;
    for (auto& v : row) {
      v = rng.uniform(-1, 1);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : row) v /= norm;
  }
  return m;
}

}  // namespace oracle

template <typename T>
Matrix<T> to_matrix(const oracle::Mat& m) {
  Matrix<T> out(m.size(), m[0].size());
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < m[r].size(); ++c) out(r, c) = T(m[r][c]);
  return out;
}

BatchEmbeddings<double> random_batch(Rng& rng, std::size_t b, std::size_t d, std::size_t K) {
  BatchEmbeddings<double> emb;
  emb.student_img = to_matrix<double>(oracle::unit_rows(rng, b, d));
  emb.student_txt = to_matrix<double>(oracle::unit_rows(rng, b, d));
  for (std::size_t k = 0; k < K; ++k) {
    emb.teacher_img.push_back(to_matrix<double>(oracle::unit_rows(rng, b, d)));
    emb.teacher_txt.push_back(to_matrix<double>(oracle::unit_rows(rng, b, d)));
  }
  return emb;
}

TEST(Similarity, IdentityPairFrozenValue) {
  Matrix<double> eye = Matrix<double>::identity(2);
  Matrix<double> s = similarity(eye, eye, 1.0);
  EXPECT_NEAR(s(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(s(0, 1), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(s(1, 0), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(s(1, 1), 0.7310585786300049, 1e-12);
}

TEST(Similarity, SingleRowIsOne) {
  Matrix<double> u{{1.0, 0.0, 0.0}};
  for (double temp : {0.01, 1.0, 100.0}) {
    Matrix<double> s = similarity(u, u, temp);
    ASSERT_EQ(s.rows(), 1u);
    EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  }
}

TEST(Similarity, InfiniteTemperatureLimit) {
  Rng rng(31);
  Matrix<double> u = to_matrix<double>(oracle::unit_rows(rng, 5, 8));
  Matrix<double> v = to_matrix<double>(oracle::unit_rows(rng, 5, 8));
  Matrix<double> s = similarity(u, v, 1e6);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.data()[i], 0.2, 1e-6);
}

TEST(Similarity, RejectsNonUnitRows) {
  Matrix<double> u{{1.0, 0.0}, {0.0, 1.0}};
  Matrix<double> bad{{2.0, 0.0}, {0.0, 1.0}};
  try {
    similarity(u, bad, 1.0);
    FAIL() << "expected NonUnitRows";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_unit_rows);
  }
  try {
    similarity(bad, u, 1.0);
    FAIL() << "expected NonUnitRows";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_unit_rows);
  }
}

TEST(Similarity, RejectsShapeMismatch) {
  Matrix<double> u = Matrix<double>::identity(2);
  Matrix<double> v = Matrix<double>::identity(3);
  EXPECT_THROW(similarity(u, v, 1.0), Error);
}

TEST(ClipLoss, TwoIdentityRowsFrozenValue) {
  BatchEmbeddings<double> emb;
  emb.student_img = Matrix<double>::identity(2);
  emb.student_txt = Matrix<double>::identity(2);
  // -log(0.7310585786300049), frozen from an independent oracle.
  EXPECT_NEAR(clip_loss(emb, 1.0), 0.3132616875182228, 1e-12);
}

TEST(ClipLoss, SingleRowBatchIsZero) {
  BatchEmbeddings<double> emb;
  emb.student_img = Matrix<double>{{1.0, 0.0}};
  emb.student_txt = Matrix<double>{{0.0, 1.0}};
  EXPECT_DOUBLE_EQ(clip_loss(emb, 0.5), 0.0);
}

TEST(ClipLoss, AlignedOrthonormalPairsVanishAtLowTemperature) {
  BatchEmbeddings<double> emb;
  emb.student_img = Matrix<double>::identity(4);
  emb.student_txt = Matrix<double>::identity(4);
  EXPECT_NEAR(clip_loss(emb, 0.01), 0.0, 1e-12);
}

TEST(ClipLoss, MatchesScalarOracleOnRandomBatches) {
  Rng rng(32);
  for (int it = 0; it < 20; ++it) {
    oracle::Mat img = oracle::unit_rows(rng, 5, 12);
    oracle::Mat txt = oracle::unit_rows(rng, 5, 12);
    BatchEmbeddings<double> emb;
    emb.student_img = to_matrix<double>(img);
    emb.student_txt = to_matrix<double>(txt);
    double temp = rng.uniform(0.05, 2.0);
    EXPECT_NEAR(clip_loss(emb, temp), oracle::clip(img, txt, temp), 1e-6);
  }
}

TEST(DistillLoss, StudentEqualsTeacherIsZero) {
  Rng rng(33);
  oracle::Mat img = oracle::unit_rows(rng, 4, 8);
  oracle::Mat txt = oracle::unit_rows(rng, 4, 8);
  BatchEmbeddings<double> emb;
  emb.student_img = to_matrix<double>(img);
  emb.student_txt = to_matrix<double>(txt);
  emb.teacher_img = {emb.student_img};
  emb.teacher_txt = {emb.student_txt};
  LossConfig cfg;
  cfg.lambda = 1.0;
  cfg.student_temp = 0.4;
  cfg.teacher_temps = {0.4};
  EXPECT_NEAR(distill_loss(emb, cfg), 0.0, 1e-9);
}

TEST(DistillLoss, DuplicateTeachersMatchSingle) {
  Rng rng(34);
  BatchEmbeddings<double> emb = random_batch(rng, 4, 8, 1);
  LossConfig one;
  one.student_temp = 0.3;
  one.teacher_temps = {0.7};
  double v1 = distill_loss(emb, one);
  BatchEmbeddings<double> dup = emb;
  dup.teacher_img.push_back(emb.teacher_img[0]);
  dup.teacher_txt.push_back(emb.teacher_txt[0]);
  LossConfig two = one;
  two.teacher_temps = {0.7, 0.7};
  EXPECT_NEAR(distill_loss(dup, two), v1, 1e-12);
}

TEST(DistillLoss, MatchesScalarOracleOnRandomInstances) {
  Rng rng(35);
  for (int it = 0; it < 20; ++it) {
    const std::size_t b = 4, d = 8, K = 2;
    oracle::Mat s_img = oracle::unit_rows(rng, b, d);
    oracle::Mat s_txt = oracle::unit_rows(rng, b, d);
    std::vector<oracle::Mat> t_img, t_txt;
    for (std::size_t k = 0; k < K; ++k) {
      t_img.push_back(oracle::unit_rows(rng, b, d));
      t_txt.push_back(oracle::unit_rows(rng, b, d));
    }
    LossConfig cfg;
    cfg.student_temp = rng.uniform(0.05, 1.0);
    cfg.teacher_temps = {rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)};
    BatchEmbeddings<double> emb;
    emb.student_img = to_matrix<double>(s_img);
    emb.student_txt = to_matrix<double>(s_txt);
    for (std::size_t k = 0; k < K; ++k) {
      emb.teacher_img.push_back(to_matrix<double>(t_img[k]));
      emb.teacher_txt.push_back(to_matrix<double>(t_txt[k]));
    }
    double want = oracle::distill(s_img, s_txt, t_img, t_txt, cfg.student_temp, cfg.teacher_temps);
    double got = distill_loss(emb, cfg);
    EXPECT_NEAR(got, want, 1e-7 * std::max(1.0, std::abs(want)));
  }
}

TEST(DistillLoss, TeacherCountMismatchRejected) {
  Rng rng(36);
  BatchEmbeddings<double> emb = random_batch(rng, 3, 6, 1);
  LossConfig cfg;
  cfg.teacher_temps = {0.5, 0.5};
  try {
    distill_loss(emb, cfg);
    FAIL() << "expected TeacherCountMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::teacher_count_mismatch);
  }
}

TEST(DistillLoss, TeacherScaleInvariance) {
  // Scaling raw teacher embeddings then renormalizing leaves the affinity
  // targets, and hence the loss, unchanged.
  Rng rng(37);
  const std::size_t b = 5, d = 10;
  Matrix<double> raw_img = Matrix<double>::random_uniform(b, d, rng);
  Matrix<double> raw_txt = Matrix<double>::random_uniform(b, d, rng);
  BatchEmbeddings<double> emb = random_batch(rng, b, d, 0);
  emb.teacher_img = {l2_normalize_rows(raw_img)};
  emb.teacher_txt = {l2_normalize_rows(raw_txt)};
  LossConfig cfg;
  cfg.student_temp = 0.2;
  cfg.teacher_temps = {0.1};
  double base = distill_loss(emb, cfg);
  emb.teacher_img = {l2_normalize_rows(scale(raw_img, 3.7))};
  emb.teacher_txt = {l2_normalize_rows(scale(raw_txt, 0.04))};
  EXPECT_NEAR(distill_loss(emb, cfg), base, 1e-7);
}

TEST(Losses, BatchPermutationEquivariance) {
  Rng rng(38);
  const std::size_t b = 6, d = 8;
  BatchEmbeddings<double> emb = random_batch(rng, b, d, 2);
  LossConfig cfg;
  cfg.lambda = 0.6;
  cfg.student_temp = 0.3;
  cfg.teacher_temps = {0.2, 0.9};
  double base_clip = clip_loss(emb, cfg.student_temp);
  double base_distill = distill_loss(emb, cfg);
  double base_total = total_loss(emb, cfg);

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  auto permute = [&](const Matrix<double>& m) {
    Matrix<double> out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(perm[r], c);
    return out;
  };
  BatchEmbeddings<double> p;
  p.student_img = permute(emb.student_img);
  p.student_txt = permute(emb.student_txt);
  for (std::size_t k = 0; k < 2; ++k) {
    p.teacher_img.push_back(permute(emb.teacher_img[k]));
    p.teacher_txt.push_back(permute(emb.teacher_txt[k]));
  }
  EXPECT_NEAR(clip_loss(p, cfg.student_temp), base_clip, 1e-7);
  EXPECT_NEAR(distill_loss(p, cfg), base_distill, 1e-7);
  EXPECT_NEAR(total_loss(p, cfg), base_total, 1e-7);
}

TEST(TotalLoss, EndpointsAreExact) {
  Rng rng(39);
  BatchEmbeddings<double> emb = random_batch(rng, 4, 8, 2);
  LossConfig cfg;
  cfg.student_temp = 0.25;
  cfg.teacher_temps = {0.15, 0.45};
  cfg.lambda = 0.0;
  EXPECT_EQ(total_loss(emb, cfg), clip_loss(emb, cfg.student_temp));
  cfg.lambda = 1.0;
  EXPECT_EQ(total_loss(emb, cfg), distill_loss(emb, cfg));
}

TEST(TotalLoss, ConvexCombinationAtDefaultMix) {
  Rng rng(40);
  BatchEmbeddings<double> emb = random_batch(rng, 5, 6, 1);
  LossConfig cfg;
  cfg.student_temp = 0.3;
  cfg.teacher_temps = {0.2};
  cfg.lambda = 0.75;
  double want = 0.25 * clip_loss(emb, cfg.student_temp) + 0.75 * distill_loss(emb, cfg);
  EXPECT_NEAR(total_loss(emb, cfg), want, 1e-9);
}

TEST(TotalLoss, AffineInLambda) {
  Rng rng(41);
  BatchEmbeddings<double> emb = random_batch(rng, 4, 8, 2);
  LossConfig cfg;
  cfg.student_temp = 0.4;
  cfg.teacher_temps = {0.3, 0.6};
  double c = clip_loss(emb, cfg.student_temp);
  double d = distill_loss(emb, cfg);
  for (double lam : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    cfg.lambda = lam;
    EXPECT_NEAR(total_loss(emb, cfg), (1 - lam) * c + lam * d, 1e-9);
  }
}

TEST(ReinforcedLoss, DuplicateBatchDoubles) {
  Rng rng(42);
  BatchEmbeddings<double> emb = random_batch(rng, 4, 8, 1);
  LossConfig cfg;
  cfg.lambda = 0.5;
  cfg.student_temp = 0.3;
  cfg.teacher_temps = {0.25};
  EXPECT_DOUBLE_EQ(reinforced_batch_loss(emb, emb, cfg), 2.0 * total_loss(emb, cfg));
}

TEST(ReinforcedLoss, AdditivityOverBatches) {
  Rng rng(43);
  BatchEmbeddings<double> real = random_batch(rng, 4, 8, 2);
  BatchEmbeddings<double> syn = random_batch(rng, 4, 8, 2);
  syn.student_img = real.student_img;  // same image rows by construction
  syn.teacher_img = real.teacher_img;
  LossConfig cfg;
  cfg.lambda = 0.75;
  cfg.student_temp = 0.2;
  cfg.teacher_temps = {0.3, 0.5};
  EXPECT_NEAR(reinforced_batch_loss(real, syn, cfg), total_loss(real, cfg) + total_loss(syn, cfg),
              1e-9);
}

TEST(GraphLoss, MatchesPlainEvaluation) {
  // The tape-built objective and the plain functions agree when the
  // log-scale equals -log(student_temp).
  Rng rng(44);
  const std::size_t b = 5, d = 8;
  Matrix<double> img_raw = Matrix<double>::random_uniform(b, d, rng, 0.2, 1.0);
  Matrix<double> txt_raw = Matrix<double>::random_uniform(b, d, rng, 0.2, 1.0);
  LossConfig cfg;
  cfg.lambda = 0.6;
  cfg.student_temp = 0.21;
  cfg.teacher_temps = {0.4, 0.9};
  std::vector<Matrix<double>> t_img, t_txt;
  for (int k = 0; k < 2; ++k) {
    t_img.push_back(l2_normalize_rows(Matrix<double>::random_uniform(b, d, rng)));
    t_txt.push_back(l2_normalize_rows(Matrix<double>::random_uniform(b, d, rng)));
  }
  Graph<double> g;
  auto img_id = g.leaf(img_raw, true);
  auto txt_id = g.leaf(txt_raw, true);
  Matrix<double> ls(1, 1);
  ls(0, 0) = -std::log(cfg.student_temp);
  auto ls_id = g.leaf(ls, true);
  auto nodes = build_total_loss(g, img_id, txt_id, ls_id, t_img, t_txt, cfg);

  BatchEmbeddings<double> emb;
  emb.student_img = l2_normalize_rows(img_raw);
  emb.student_txt = l2_normalize_rows(txt_raw);
  emb.teacher_img = t_img;
  emb.teacher_txt = t_txt;
  EXPECT_NEAR(g.scalar(nodes.clip), clip_loss(emb, cfg.student_temp), 1e-9);
  EXPECT_NEAR(g.scalar(nodes.distill), distill_loss(emb, cfg), 1e-9);
  EXPECT_NEAR(g.scalar(nodes.total), total_loss(emb, cfg), 1e-9);
}

TEST(GraphLoss, LambdaZeroBuildsNoTeacherNodes) {
  // At lambda=0 the builder must not read the teacher matrices at all; an
  // empty teacher list is acceptable then.
  Rng rng(45);
  Matrix<double> img = Matrix<double>::random_uniform(3, 4, rng, 0.2, 1.0);
  Matrix<double> txt = Matrix<double>::random_uniform(3, 4, rng, 0.2, 1.0);
  Graph<double> g;
  LossConfig cfg;
  cfg.lambda = 0.0;
  cfg.teacher_temps = {0.5};
  auto nodes = build_total_loss(g, g.leaf(img, true), g.leaf(txt, true),
                                g.leaf(Matrix<double>(1, 1), true), {}, {}, cfg);
  EXPECT_EQ(nodes.distill, -1);
  EXPECT_EQ(nodes.total, nodes.clip);
}

}  // namespace
