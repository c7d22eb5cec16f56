#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mmdr/error.hpp"
#include "mmdr/matrix.hpp"

namespace mmdr {

// Reverse-mode tape over a closed op set. Forward is eager: every op call
// computes its value immediately and appends a node; backward walks the tape
// once. The op set is fixed; adding an op means adding a forward case and a
// matching backward case below, plus coverage in the finite-difference suite.
//
// Templated on the scalar type so the training path (float) and the
// gradient-check suite (double) run the same code.
template <typename T>
class Graph {
 public:
  using Id = int;

  enum class Op {
    leaf,
    matmul,
    transpose,
    add,
    scale,
    row_softmax,
    log,
    mul,
    l2_normalize_rows,
    sum,
    mean,
    exp,
    add_bias_row,
    mul_scalar,
    gelu,
    layernorm_rows,
    batchnorm_cols,
    depthwise_conv1d,
    attention,
    embedding_gather,
    gather_rows,
    mean_pool_blocks,
    add_rows_block,
  };

  Id leaf(Matrix<T> value, bool trainable = false) {
    Node n;
    n.op = Op::leaf;
    n.val = std::move(value);
    n.trainable = trainable;
    n.requires_grad = trainable;
    return push(std::move(n));
  }

  Id constant(Matrix<T> value) { return leaf(std::move(value), false); }

  Id constant_scalar(T v) {
    Matrix<T> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Id matmul(Id a, Id b) {
    Node n = make(Op::matmul, {a, b});
    n.val = mmdr::matmul(val(a), val(b));
    return push(std::move(n));
  }

  Id transpose(Id a) {
    Node n = make(Op::transpose, {a});
    n.val = mmdr::transpose(val(a));
    return push(std::move(n));
  }

  Id add(Id a, Id b) {
    Node n = make(Op::add, {a, b});
    n.val = mmdr::add(val(a), val(b));
    return push(std::move(n));
  }

  Id scale(Id a, T s) {
    Node n = make(Op::scale, {a});
    n.scalar_arg = s;
    n.val = mmdr::scale(val(a), s);
    return push(std::move(n));
  }

  Id row_softmax(Id a, T temp) {
    Node n = make(Op::row_softmax, {a});
    n.scalar_arg = temp;
    n.val = mmdr::row_softmax(val(a), temp);
    return push(std::move(n));
  }

  // Elementwise log with the same 1e-12 floor the KL helper uses, so f32
  // softmax underflow cannot produce -inf. Below the floor the derivative
  // is zero.
  Id log(Id a) {
    Node n = make(Op::log, {a});
    const Matrix<T>& x = val(a);
    n.val = Matrix<T>(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i)
      n.val.data()[i] = std::log(std::max(x.data()[i], T(1e-12)));
    return push(std::move(n));
  }

  Id mul(Id a, Id b) {
    Node n = make(Op::mul, {a, b});
    n.val = hadamard(val(a), val(b));
    return push(std::move(n));
  }

  Id l2_normalize_rows(Id a) {
    Node n = make(Op::l2_normalize_rows, {a});
    const Matrix<T>& x = val(a);
    Matrix<T> inv_norm(1, x.rows());
    n.val = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      T norm = row_norm(x, r);
      require(norm > T(0), Errc::zero_row, "row " + std::to_string(r) + " has zero norm");
      inv_norm(0, r) = T(1) / norm;
      T* p = n.val.row(r);
      for (std::size_t j = 0; j < x.cols(); ++j) p[j] *= inv_norm(0, r);
    }
    n.aux.push_back(std::move(inv_norm));
    return push(std::move(n));
  }

  Id sum(Id a) {
    Node n = make(Op::sum, {a});
    Matrix<T> m(1, 1);
    m(0, 0) = mmdr::sum(val(a));
    n.val = std::move(m);
    return push(std::move(n));
  }

  Id mean(Id a) {
    Node n = make(Op::mean, {a});
    Matrix<T> m(1, 1);
    m(0, 0) = mmdr::mean(val(a));
    n.val = std::move(m);
    return push(std::move(n));
  }

  Id exp(Id a) {
    Node n = make(Op::exp, {a});
    const Matrix<T>& x = val(a);
    n.val = Matrix<T>(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) n.val.data()[i] = std::exp(x.data()[i]);
    return push(std::move(n));
  }

  // X (n x c) plus a broadcast 1 x c bias row.
  Id add_bias_row(Id x, Id bias) {
    const Matrix<T>& xv = val(x);
    const Matrix<T>& bv = val(bias);
    require(bv.rows() == 1 && bv.cols() == xv.cols(), Errc::shape_mismatch,
            "add_bias_row: bias must be 1x" + std::to_string(xv.cols()));
    Node n = make(Op::add_bias_row, {x, bias});
    n.val = xv;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      T* p = n.val.row(r);
      for (std::size_t j = 0; j < xv.cols(); ++j) p[j] += bv(0, j);
    }
    return push(std::move(n));
  }

  // X times a 1x1 node (trainable logit scale and friends).
  Id mul_scalar(Id x, Id s) {
    const Matrix<T>& sv = val(s);
    require(sv.rows() == 1 && sv.cols() == 1, Errc::shape_mismatch,
            "mul_scalar: scale operand must be 1x1");
    Node n = make(Op::mul_scalar, {x, s});
    n.val = mmdr::scale(val(x), sv(0, 0));
    return push(std::move(n));
  }

  // Exact erf form, y = x/2 * (1 + erf(x/sqrt(2))).
  Id gelu(Id x) {
    Node n = make(Op::gelu, {x});
    const Matrix<T>& xv = val(x);
    n.val = Matrix<T>(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      T v = xv.data()[i];
      n.val.data()[i] = T(0.5) * v * (T(1) + T(std::erf(double(v) * 0.7071067811865476)));
    }
    return push(std::move(n));
  }

  // Per-row standardization with learned 1 x c gain/shift. Biased variance.
  Id layernorm_rows(Id x, Id gamma, Id beta, T eps) {
    const Matrix<T>& xv = val(x);
    const Matrix<T>& gv = val(gamma);
    const Matrix<T>& bv = val(beta);
    require(gv.rows() == 1 && gv.cols() == xv.cols() && bv.rows() == 1 && bv.cols() == xv.cols(),
            Errc::shape_mismatch, "layernorm_rows: gamma/beta must be 1x" + std::to_string(xv.cols()));
    Node n = make(Op::layernorm_rows, {x, gamma, beta});
    n.scalar_arg = eps;
    const std::size_t c = xv.cols();
    Matrix<T> xhat(xv.rows(), c);
    Matrix<T> inv_std(1, xv.rows());
    n.val = Matrix<T>(xv.rows(), c);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const T* p = xv.row(r);
      T mu = 0;
      for (std::size_t j = 0; j < c; ++j) mu += p[j];
      mu /= T(c);
      T var = 0;
      for (std::size_t j = 0; j < c; ++j) {
        T d = p[j] - mu;
        var += d * d;
      }
      var /= T(c);
      T istd = T(1) / std::sqrt(var + eps);
      inv_std(0, r) = istd;
      T* xh = xhat.row(r);
      T* o = n.val.row(r);
      for (std::size_t j = 0; j < c; ++j) {
        xh[j] = (p[j] - mu) * istd;
        o[j] = xh[j] * gv(0, j) + bv(0, j);
      }
    }
    n.aux.push_back(std::move(xhat));
    n.aux.push_back(std::move(inv_std));
    return push(std::move(n));
  }

  // Per-column batch standardization with learned 1 x c gain/shift. Batch
  // statistics (biased variance over rows); the batch mean/var are kept on
  // the node so the caller can fold them into running estimates.
  Id batchnorm_cols(Id x, Id gamma, Id beta, T eps) {
    const Matrix<T>& xv = val(x);
    const Matrix<T>& gv = val(gamma);
    const Matrix<T>& bv = val(beta);
    require(xv.rows() >= 1, Errc::shape_mismatch, "batchnorm_cols: empty input");
    require(gv.rows() == 1 && gv.cols() == xv.cols() && bv.rows() == 1 && bv.cols() == xv.cols(),
            Errc::shape_mismatch, "batchnorm_cols: gamma/beta must be 1x" + std::to_string(xv.cols()));
    Node n = make(Op::batchnorm_cols, {x, gamma, beta});
    n.scalar_arg = eps;
    const std::size_t rows = xv.rows(), c = xv.cols();
    Matrix<T> mean_row(1, c), var_row(1, c), inv_std(1, c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = xv.row(r);
      for (std::size_t j = 0; j < c; ++j) mean_row(0, j) += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) mean_row(0, j) /= T(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = xv.row(r);
      for (std::size_t j = 0; j < c; ++j) {
        T d = p[j] - mean_row(0, j);
        var_row(0, j) += d * d;
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      var_row(0, j) /= T(rows);
      inv_std(0, j) = T(1) / std::sqrt(var_row(0, j) + eps);
    }
    Matrix<T> xhat(rows, c);
    n.val = Matrix<T>(rows, c);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = xv.row(r);
      T* xh = xhat.row(r);
      T* o = n.val.row(r);
      for (std::size_t j = 0; j < c; ++j) {
        xh[j] = (p[j] - mean_row(0, j)) * inv_std(0, j);
        o[j] = xh[j] * gv(0, j) + bv(0, j);
      }
    }
    n.aux.push_back(std::move(xhat));
    n.aux.push_back(std::move(mean_row));
    n.aux.push_back(std::move(var_row));
    n.aux.push_back(std::move(inv_std));
    return push(std::move(n));
  }

  const Matrix<T>& bn_batch_mean(Id id) const { return node(id).aux[1]; }
  const Matrix<T>& bn_batch_var(Id id) const { return node(id).aux[2]; }

  // Depthwise conv along the sequence axis. X is (b*seq_len) x c, sequences
  // stacked as row blocks; w is k x c with k odd; zero padding keeps the
  // length.
  Id depthwise_conv1d(Id x, Id w, std::size_t seq_len) {
    const Matrix<T>& xv = val(x);
    const Matrix<T>& wv = val(w);
    require(seq_len > 0 && xv.rows() % seq_len == 0, Errc::shape_mismatch,
            "depthwise_conv1d: rows not divisible by seq_len");
    require(wv.cols() == xv.cols(), Errc::shape_mismatch,
            "depthwise_conv1d: kernel channels " + std::to_string(wv.cols()) + " vs input " +
                std::to_string(xv.cols()));
    require(wv.rows() % 2 == 1, Errc::kernel_extent_mismatch, "kernel extent must be odd");
    Node n = make(Op::depthwise_conv1d, {x, w});
    n.size_arg = seq_len;
    const std::size_t k = wv.rows(), c = xv.cols(), half = k / 2;
    const std::size_t blocks = xv.rows() / seq_len;
    n.val = Matrix<T>(xv.rows(), c);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t base = b * seq_len;
      for (std::size_t s = 0; s < seq_len; ++s) {
        T* o = n.val.row(base + s);
        for (std::size_t t = 0; t < k; ++t) {
          std::ptrdiff_t in = std::ptrdiff_t(s) + std::ptrdiff_t(t) - std::ptrdiff_t(half);
          if (in < 0 || in >= std::ptrdiff_t(seq_len)) continue;
          const T* p = xv.row(base + std::size_t(in));
          const T* wr = wv.row(t);
          for (std::size_t j = 0; j < c; ++j) o[j] += wr[j] * p[j];
        }
      }
    }
    return push(std::move(n));
  }

  // Fused multi-head attention over row blocks of seq_len. Weights are
  // c x c; scores scaled by 1/sqrt(head_dim); optional causal mask.
  Id attention(Id x, Id wq, Id wk, Id wv, Id wo, std::size_t n_heads, std::size_t seq_len,
               bool causal) {
    const Matrix<T>& xv = val(x);
    const std::size_t c = xv.cols();
    require(seq_len > 0 && xv.rows() % seq_len == 0, Errc::shape_mismatch,
            "attention: rows not divisible by seq_len");
    require(n_heads > 0 && c % n_heads == 0, Errc::shape_mismatch,
            "attention: channels not divisible by head count");
    for (Id w : {wq, wk, wv, wo})
      require(val(w).rows() == c && val(w).cols() == c, Errc::shape_mismatch,
              "attention: projection weights must be " + std::to_string(c) + "x" +
                  std::to_string(c));
    Node n = make(Op::attention, {x, wq, wk, wv, wo});
    n.size_arg = seq_len;
    n.size_arg2 = n_heads;
    n.flag = causal;

    Matrix<T> q = mmdr::matmul(xv, val(wq));
    Matrix<T> kk = mmdr::matmul(xv, val(wk));
    Matrix<T> vv = mmdr::matmul(xv, val(wv));
    const std::size_t blocks = xv.rows() / seq_len;
    const std::size_t dh = c / n_heads;
    const T inv_sqrt_dh = T(1) / T(std::sqrt(double(dh)));
    // Attention probabilities stacked as (blocks*heads*seq_len) x seq_len.
    Matrix<T> probs(blocks * n_heads * seq_len, seq_len);
    Matrix<T> ctx(xv.rows(), c);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t base = b * seq_len;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t col0 = h * dh;
        const std::size_t prow0 = (b * n_heads + h) * seq_len;
        for (std::size_t i = 0; i < seq_len; ++i) {
          const T* qi = q.row(base + i) + col0;
          T* pr = probs.row(prow0 + i);
          const std::size_t limit = causal ? i + 1 : seq_len;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < limit; ++j) {
            const T* kj = kk.row(base + j) + col0;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
            pr[j] = dot * inv_sqrt_dh;
            mx = std::max(mx, pr[j]);
          }
          T denom = 0;
          for (std::size_t j = 0; j < limit; ++j) {
            pr[j] = std::exp(pr[j] - mx);
            denom += pr[j];
          }
          T inv = T(1) / denom;
          for (std::size_t j = 0; j < limit; ++j) pr[j] *= inv;
          for (std::size_t j = limit; j < seq_len; ++j) pr[j] = 0;
          T* ci = ctx.row(base + i) + col0;
          for (std::size_t j = 0; j < limit; ++j) {
            const T* vj = vv.row(base + j) + col0;
            const T a = pr[j];
            for (std::size_t d = 0; d < dh; ++d) ci[d] += a * vj[d];
          }
        }
      }
    }
    n.val = mmdr::matmul(ctx, val(wo));
    n.aux.push_back(std::move(q));
    n.aux.push_back(std::move(kk));
    n.aux.push_back(std::move(vv));
    n.aux.push_back(std::move(probs));
    n.aux.push_back(std::move(ctx));
    return push(std::move(n));
  }

  // Rows of an embedding table selected by token id.
  Id embedding_gather(Id table, std::vector<std::uint32_t> ids) {
    const Matrix<T>& tv = val(table);
    for (std::uint32_t id : ids)
      require(id < tv.rows(), Errc::token_out_of_vocab,
              "token id " + std::to_string(id) + " outside vocab of " + std::to_string(tv.rows()));
    Node n = make(Op::embedding_gather, {table});
    n.val = Matrix<T>(ids.size(), tv.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const T* src = tv.row(ids[r]);
      T* dst = n.val.row(r);
      for (std::size_t j = 0; j < tv.cols(); ++j) dst[j] = src[j];
    }
    n.indices = std::move(ids);
    return push(std::move(n));
  }

  // Row subset by position (end-token pooling and friends).
  Id gather_rows(Id x, std::vector<std::uint32_t> rows) {
    const Matrix<T>& xv = val(x);
    for (std::uint32_t r : rows)
      require(r < xv.rows(), Errc::invalid_argument,
              "gather_rows: row " + std::to_string(r) + " out of range");
    Node n = make(Op::gather_rows, {x});
    n.val = Matrix<T>(rows.size(), xv.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const T* src = xv.row(rows[r]);
      T* dst = n.val.row(r);
      for (std::size_t j = 0; j < xv.cols(); ++j) dst[j] = src[j];
    }
    n.indices = std::move(rows);
    return push(std::move(n));
  }

  // (b*block) x c reduced to b x c by averaging each block of rows.
  Id mean_pool_blocks(Id x, std::size_t block) {
    const Matrix<T>& xv = val(x);
    require(block > 0 && xv.rows() % block == 0, Errc::shape_mismatch,
            "mean_pool_blocks: rows not divisible by block");
    Node n = make(Op::mean_pool_blocks, {x});
    n.size_arg = block;
    const std::size_t out_rows = xv.rows() / block, c = xv.cols();
    n.val = Matrix<T>(out_rows, c);
    const T inv = T(1) / T(block);
    for (std::size_t b = 0; b < out_rows; ++b) {
      T* o = n.val.row(b);
      for (std::size_t s = 0; s < block; ++s) {
        const T* p = xv.row(b * block + s);
        for (std::size_t j = 0; j < c; ++j) o[j] += p[j];
      }
      for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
    }
    return push(std::move(n));
  }

  // Adds a block x c matrix (positional table) to every block of rows.
  Id add_rows_block(Id x, Id p) {
    const Matrix<T>& xv = val(x);
    const Matrix<T>& pv = val(p);
    require(pv.cols() == xv.cols() && pv.rows() > 0 && xv.rows() % pv.rows() == 0,
            Errc::shape_mismatch, "add_rows_block: position table shape mismatch");
    Node n = make(Op::add_rows_block, {x, p});
    n.val = xv;
    const std::size_t block = pv.rows(), c = xv.cols();
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      T* o = n.val.row(r);
      const T* q = pv.row(r % block);
      for (std::size_t j = 0; j < c; ++j) o[j] += q[j];
    }
    return push(std::move(n));
  }

  const Matrix<T>& value(Id id) const { return node(id).val; }

  T scalar(Id id) const {
    const Matrix<T>& v = node(id).val;
    require(v.rows() == 1 && v.cols() == 1, Errc::shape_mismatch, "node is not scalar");
    return v(0, 0);
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar loss. Gradients accumulate for every node on
  // a path from a trainable leaf to the loss; trainable leaves the loss does
  // not depend on get a zero gradient and a recorded warning.
  void backward(Id loss) {
    const Node& ln = node(loss);
    require(ln.val.rows() == 1 && ln.val.cols() == 1, Errc::non_scalar_loss,
            "backward needs a 1x1 loss node, got " +
                detail::shape_str(ln.val.rows(), ln.val.cols()));
    grads_.assign(nodes_.size(), Matrix<T>());
    has_grad_.assign(nodes_.size(), false);

    // Restrict the walk to nodes the loss actually depends on.
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[std::size_t(loss)] = 1;
    for (Id i = loss; i >= 0; --i) {
      if (!reachable[std::size_t(i)]) continue;
      for (Id in : nodes_[std::size_t(i)].in) reachable[std::size_t(in)] = 1;
    }

    grads_[std::size_t(loss)] = Matrix<T>(1, 1);
    grads_[std::size_t(loss)](0, 0) = T(1);
    has_grad_[std::size_t(loss)] = true;

    for (Id i = loss; i >= 0; --i) {
      const std::size_t ui = std::size_t(i);
      if (!reachable[ui] || !has_grad_[ui] || !nodes_[ui].requires_grad) continue;
      backprop_node(i);
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].trainable) continue;
      if (!has_grad_[i]) {
        grads_[i] = Matrix<T>(nodes_[i].val.rows(), nodes_[i].val.cols());
        has_grad_[i] = true;
        warnings_.push_back("DisconnectedLeaf: node " + std::to_string(i) +
                            " does not influence the loss; gradient set to zero");
      }
    }
  }

  const Matrix<T>& grad(Id id) const {
    require(std::size_t(id) < has_grad_.size() && has_grad_[std::size_t(id)],
            Errc::invalid_argument, "no gradient for node " + std::to_string(id));
    return grads_[std::size_t(id)];
  }

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<Id> in;
    Matrix<T> val;
    bool trainable = false;
    bool requires_grad = false;
    bool flag = false;
    T scalar_arg = 0;
    std::size_t size_arg = 0;
    std::size_t size_arg2 = 0;
    std::vector<std::uint32_t> indices;
    std::vector<Matrix<T>> aux;
  };

  Node make(Op op, std::vector<Id> in) {
    Node n;
    n.op = op;
    for (Id i : in) {
      require(i >= 0 && std::size_t(i) < nodes_.size(), Errc::invalid_argument,
              "bad node id " + std::to_string(i));
      n.requires_grad = n.requires_grad || nodes_[std::size_t(i)].requires_grad;
    }
    n.in = std::move(in);
    return n;
  }

  Id push(Node n) {
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
  }

  Node& node(Id id) { return nodes_.at(std::size_t(id)); }
  const Node& node(Id id) const { return nodes_.at(std::size_t(id)); }
  const Matrix<T>& val(Id id) const { return node(id).val; }

  Matrix<T>& grad_buf(Id id) {
    std::size_t i = std::size_t(id);
    if (!has_grad_[i]) {
      grads_[i] = Matrix<T>(nodes_[i].val.rows(), nodes_[i].val.cols());
      has_grad_[i] = true;
    }
    return grads_[i];
  }

  bool wants_grad(Id id) const { return node(id).requires_grad; }

  void backprop_node(Id id) {
    Node& n = node(id);
    const Matrix<T>& g = grads_[std::size_t(id)];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        Id a = n.in[0], b = n.in[1];
        if (wants_grad(a)) accumulate(grad_buf(a), mmdr::matmul(g, mmdr::transpose(val(b))));
        if (wants_grad(b)) accumulate(grad_buf(b), mmdr::matmul(mmdr::transpose(val(a)), g));
        break;
      }
      case Op::transpose: {
        if (wants_grad(n.in[0])) accumulate(grad_buf(n.in[0]), mmdr::transpose(g));
        break;
      }
      case Op::add: {
        for (Id in : n.in)
          if (wants_grad(in)) accumulate(grad_buf(in), g);
        break;
      }
      case Op::scale: {
        if (wants_grad(n.in[0])) accumulate(grad_buf(n.in[0]), mmdr::scale(g, n.scalar_arg));
        break;
      }
      case Op::row_softmax: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        const Matrix<T>& y = n.val;
        Matrix<T>& da = grad_buf(a);
        const T inv_temp = T(1) / n.scalar_arg;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const T* yr = y.row(r);
          const T* gr = g.row(r);
          T dot = 0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += gr[j] * yr[j];
          T* dr = da.row(r);
          for (std::size_t j = 0; j < y.cols(); ++j) dr[j] += inv_temp * yr[j] * (gr[j] - dot);
        }
        break;
      }
      case Op::log: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        const Matrix<T>& x = val(a);
        Matrix<T>& da = grad_buf(a);
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x.data()[i] > T(1e-12)) da.data()[i] += g.data()[i] / x.data()[i];
        break;
      }
      case Op::mul: {
        Id a = n.in[0], b = n.in[1];
        if (wants_grad(a)) accumulate(grad_buf(a), hadamard(g, val(b)));
        if (wants_grad(b)) accumulate(grad_buf(b), hadamard(g, val(a)));
        break;
      }
      case Op::l2_normalize_rows: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        const Matrix<T>& y = n.val;
        const Matrix<T>& inv_norm = n.aux[0];
        Matrix<T>& da = grad_buf(a);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const T* yr = y.row(r);
          const T* gr = g.row(r);
          T dot = 0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += gr[j] * yr[j];
          T* dr = da.row(r);
          const T s = inv_norm(0, r);
          for (std::size_t j = 0; j < y.cols(); ++j) dr[j] += s * (gr[j] - dot * yr[j]);
        }
        break;
      }
      case Op::sum: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        Matrix<T>& da = grad_buf(a);
        const T gv = g(0, 0);
        for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
        break;
      }
      case Op::mean: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        Matrix<T>& da = grad_buf(a);
        const T gv = g(0, 0) / T(da.size());
        for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
        break;
      }
      case Op::exp: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        accumulate(grad_buf(a), hadamard(g, n.val));
        break;
      }
      case Op::add_bias_row: {
        Id x = n.in[0], b = n.in[1];
        if (wants_grad(x)) accumulate(grad_buf(x), g);
        if (wants_grad(b)) {
          Matrix<T>& db = grad_buf(b);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            const T* gr = g.row(r);
            for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += gr[j];
          }
        }
        break;
      }
      case Op::mul_scalar: {
        Id x = n.in[0], s = n.in[1];
        const T sv = val(s)(0, 0);
        if (wants_grad(x)) accumulate(grad_buf(x), mmdr::scale(g, sv));
        if (wants_grad(s)) {
          const Matrix<T>& xv = val(x);
          T acc = 0;
          for (std::size_t i = 0; i < xv.size(); ++i) acc += g.data()[i] * xv.data()[i];
          grad_buf(s)(0, 0) += acc;
        }
        break;
      }
      case Op::gelu: {
        Id a = n.in[0];
        if (!wants_grad(a)) break;
        const Matrix<T>& x = val(a);
        Matrix<T>& da = grad_buf(a);
        for (std::size_t i = 0; i < x.size(); ++i) {
          double v = double(x.data()[i]);
          double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
          double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
          da.data()[i] += g.data()[i] * T(cdf + v * pdf);
        }
        break;
      }
      case Op::layernorm_rows: {
        Id x = n.in[0], ga = n.in[1], be = n.in[2];
        const Matrix<T>& xhat = n.aux[0];
        const Matrix<T>& inv_std = n.aux[1];
        const Matrix<T>& gv = val(ga);
        const std::size_t c = xhat.cols();
        if (wants_grad(be)) {
          Matrix<T>& db = grad_buf(be);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) db(0, j) += g(r, j);
        }
        if (wants_grad(ga)) {
          Matrix<T>& dg = grad_buf(ga);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) dg(0, j) += g(r, j) * xhat(r, j);
        }
        if (wants_grad(x)) {
          Matrix<T>& dx = grad_buf(x);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              T dxh = g(r, j) * gv(0, j);
              m1 += dxh;
              m2 += dxh * xhat(r, j);
            }
            m1 /= T(c);
            m2 /= T(c);
            const T istd = inv_std(0, r);
            for (std::size_t j = 0; j < c; ++j) {
              T dxh = g(r, j) * gv(0, j);
              dx(r, j) += istd * (dxh - m1 - xhat(r, j) * m2);
            }
          }
        }
        break;
      }
      case Op::batchnorm_cols: {
        Id x = n.in[0], ga = n.in[1], be = n.in[2];
        const Matrix<T>& xhat = n.aux[0];
        const Matrix<T>& inv_std = n.aux[3];
        const Matrix<T>& gv = val(ga);
        const std::size_t rows = xhat.rows(), c = xhat.cols();
        if (wants_grad(be)) {
          Matrix<T>& db = grad_buf(be);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) db(0, j) += g(r, j);
        }
        if (wants_grad(ga)) {
          Matrix<T>& dg = grad_buf(ga);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) dg(0, j) += g(r, j) * xhat(r, j);
        }
        if (wants_grad(x)) {
          Matrix<T>& dx = grad_buf(x);
          std::vector<T> m1(c, T(0)), m2(c, T(0));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              T dxh = g(r, j) * gv(0, j);
              m1[j] += dxh;
              m2[j] += dxh * xhat(r, j);
            }
          for (std::size_t j = 0; j < c; ++j) {
            m1[j] /= T(rows);
            m2[j] /= T(rows);
          }
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              T dxh = g(r, j) * gv(0, j);
              dx(r, j) += inv_std(0, j) * (dxh - m1[j] - xhat(r, j) * m2[j]);
            }
        }
        break;
      }
      case Op::depthwise_conv1d: {
        Id x = n.in[0], w = n.in[1];
        const Matrix<T>& xv = val(x);
        const Matrix<T>& wv = val(w);
        const std::size_t seq_len = n.size_arg;
        const std::size_t k = wv.rows(), c = xv.cols(), half = k / 2;
        const std::size_t blocks = xv.rows() / seq_len;
        const bool gx = wants_grad(x), gw = wants_grad(w);
        if (!gx && !gw) break;
        Matrix<T>* dx = gx ? &grad_buf(x) : nullptr;
        Matrix<T>* dw = gw ? &grad_buf(w) : nullptr;
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::size_t base = b * seq_len;
          for (std::size_t s = 0; s < seq_len; ++s) {
            const T* gr = g.row(base + s);
            for (std::size_t t = 0; t < k; ++t) {
              std::ptrdiff_t in = std::ptrdiff_t(s) + std::ptrdiff_t(t) - std::ptrdiff_t(half);
              if (in < 0 || in >= std::ptrdiff_t(seq_len)) continue;
              const std::size_t xr = base + std::size_t(in);
              if (gx) {
                T* dxr = dx->row(xr);
                const T* wr = wv.row(t);
                for (std::size_t j = 0; j < c; ++j) dxr[j] += gr[j] * wr[j];
              }
              if (gw) {
                T* dwr = dw->row(t);
                const T* pr = xv.row(xr);
                for (std::size_t j = 0; j < c; ++j) dwr[j] += gr[j] * pr[j];
              }
            }
          }
        }
        break;
      }
      case Op::attention:
        backprop_attention(n, g);
        break;
      case Op::embedding_gather: {
        Id table = n.in[0];
        if (!wants_grad(table)) break;
        Matrix<T>& dt = grad_buf(table);
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          T* dst = dt.row(n.indices[r]);
          const T* gr = g.row(r);
          for (std::size_t j = 0; j < dt.cols(); ++j) dst[j] += gr[j];
        }
        break;
      }
      case Op::gather_rows: {
        Id x = n.in[0];
        if (!wants_grad(x)) break;
        Matrix<T>& dx = grad_buf(x);
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          T* dst = dx.row(n.indices[r]);
          const T* gr = g.row(r);
          for (std::size_t j = 0; j < dx.cols(); ++j) dst[j] += gr[j];
        }
        break;
      }
      case Op::mean_pool_blocks: {
        Id x = n.in[0];
        if (!wants_grad(x)) break;
        Matrix<T>& dx = grad_buf(x);
        const std::size_t block = n.size_arg, c = dx.cols();
        const T inv = T(1) / T(block);
        for (std::size_t b = 0; b < g.rows(); ++b) {
          const T* gr = g.row(b);
          for (std::size_t s = 0; s < block; ++s) {
            T* dr = dx.row(b * block + s);
            for (std::size_t j = 0; j < c; ++j) dr[j] += gr[j] * inv;
          }
        }
        break;
      }
      case Op::add_rows_block: {
        Id x = n.in[0], p = n.in[1];
        if (wants_grad(x)) accumulate(grad_buf(x), g);
        if (wants_grad(p)) {
          Matrix<T>& dp = grad_buf(p);
          const std::size_t block = dp.rows(), c = dp.cols();
          for (std::size_t r = 0; r < g.rows(); ++r) {
            T* dst = dp.row(r % block);
            const T* gr = g.row(r);
            for (std::size_t j = 0; j < c; ++j) dst[j] += gr[j];
          }
        }
        break;
      }
    }
  }

  void backprop_attention(Node& n, const Matrix<T>& g) {
    Id x = n.in[0], wq = n.in[1], wk = n.in[2], wv_id = n.in[3], wo = n.in[4];
    const Matrix<T>& xv = val(x);
    const Matrix<T>& q = n.aux[0];
    const Matrix<T>& kk = n.aux[1];
    const Matrix<T>& vv = n.aux[2];
    const Matrix<T>& probs = n.aux[3];
    const Matrix<T>& ctx = n.aux[4];
    const std::size_t seq_len = n.size_arg, n_heads = n.size_arg2;
    const std::size_t c = xv.cols(), dh = c / n_heads;
    const std::size_t blocks = xv.rows() / seq_len;
    const T inv_sqrt_dh = T(1) / T(std::sqrt(double(dh)));
    const bool causal = n.flag;

    if (wants_grad(wo)) accumulate(grad_buf(wo), mmdr::matmul(mmdr::transpose(ctx), g));
    Matrix<T> dctx = mmdr::matmul(g, mmdr::transpose(val(wo)));

    Matrix<T> dq(xv.rows(), c), dk(xv.rows(), c), dv(xv.rows(), c);
    std::vector<T> dprob(seq_len);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t base = b * seq_len;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t col0 = h * dh;
        const std::size_t prow0 = (b * n_heads + h) * seq_len;
        for (std::size_t i = 0; i < seq_len; ++i) {
          const std::size_t limit = causal ? i + 1 : seq_len;
          const T* pr = probs.row(prow0 + i);
          const T* dci = dctx.row(base + i) + col0;
          // d ctx_i = sum_j a_ij v_j
          T dot = 0;
          for (std::size_t j = 0; j < limit; ++j) {
            const T* vj = vv.row(base + j) + col0;
            T acc = 0;
            for (std::size_t d = 0; d < dh; ++d) acc += dci[d] * vj[d];
            dprob[j] = acc;
            dot += acc * pr[j];
            T* dvj = dv.row(base + j) + col0;
            const T a = pr[j];
            for (std::size_t d = 0; d < dh; ++d) dvj[d] += a * dci[d];
          }
          // Softmax backward, then the 1/sqrt(dh) score scale.
          const T* qi = q.row(base + i) + col0;
          T* dqi = dq.row(base + i) + col0;
          for (std::size_t j = 0; j < limit; ++j) {
            const T dscore = pr[j] * (dprob[j] - dot) * inv_sqrt_dh;
            if (dscore == T(0)) continue;
            const T* kj = kk.row(base + j) + col0;
            T* dkj = dk.row(base + j) + col0;
            for (std::size_t d = 0; d < dh; ++d) {
              dqi[d] += dscore * kj[d];
              dkj[d] += dscore * qi[d];
            }
          }
        }
      }
    }
    if (wants_grad(wq)) accumulate(grad_buf(wq), mmdr::matmul(mmdr::transpose(xv), dq));
    if (wants_grad(wk)) accumulate(grad_buf(wk), mmdr::matmul(mmdr::transpose(xv), dk));
    if (wants_grad(wv_id)) accumulate(grad_buf(wv_id), mmdr::matmul(mmdr::transpose(xv), dv));
    if (wants_grad(x)) {
      Matrix<T>& dx = grad_buf(x);
      accumulate(dx, mmdr::matmul(dq, mmdr::transpose(val(wq))));
      accumulate(dx, mmdr::matmul(dk, mmdr::transpose(val(wk))));
      accumulate(dx, mmdr::matmul(dv, mmdr::transpose(val(wv_id))));
    }
  }

  static void accumulate(Matrix<T>& dst, const Matrix<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
  }

  std::vector<Node> nodes_;
  std::vector<Matrix<T>> grads_;
  std::vector<char> has_grad_;
  std::vector<std::string> warnings_;
};

}  // namespace mmdr
