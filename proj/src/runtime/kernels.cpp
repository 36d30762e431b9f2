#include "kernels.hpp"

#include <cmath>
#include <limits>

namespace rlab::runtime::kernels {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    const double m = row.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      const double e = row(j) == kNegInf ? 0.0 : std::exp(row(j) - m);
      row(j) = e;
      sum += e;
    }
    row /= sum;
  }
}

}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

std::vector<double> softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  const double m = logits.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits(j) - m);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
  return out;
}

Matrix rms_norm(const Matrix& x, const RowVector* gain, Eigen::VectorXd* inv_rms) {
  Matrix y(x.rows(), x.cols());
  Eigen::VectorXd inv(x.rows());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    inv(t) = 1.0 / std::sqrt(x.row(t).squaredNorm() / static_cast<double>(x.cols()) + kRmsEps);
    y.row(t) = x.row(t) * inv(t);
    if (gain) y.row(t).array() *= gain->array();
  }
  if (inv_rms) *inv_rms = std::move(inv);
  return y;
}

Matrix rms_norm_backward(const Matrix& x, const RowVector* gain, const Eigen::VectorXd& inv_rms,
                         const Matrix& dy, RowVector* dgain) {
  const double d = static_cast<double>(x.cols());
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double r = inv_rms(t);
    Eigen::RowVectorXd g = dy.row(t);
    if (gain) {
      if (dgain) dgain->array() += (dy.row(t).array() * x.row(t).array() * r);
      g.array() *= gain->array();
    }
    const double dot = g.dot(x.row(t));
    dx.row(t) = r * g - (r * r * r / d) * dot * x.row(t);
  }
  return dx;
}

Matrix attention(const AttentionParams& p, const Matrix& xq, const Matrix& xkv, int n_heads,
                 bool causal, const BlockMask* blocked, KnockoutMode mode,
                 AttentionCache* cache) {
  const Eigen::Index nq = xq.rows();
  const Eigen::Index nk = xkv.rows();
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix q = xq * p.wq;
  Matrix k = xkv * p.wk;
  Matrix v = xkv * p.wv;
  Matrix heads(nq, d);
  std::vector<Matrix> probs;
  probs.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Matrix s = q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose() * scale;
    for (Eigen::Index i = 0; i < nq; ++i) {
      for (Eigen::Index j = 0; j < nk; ++j) {
        if (causal && j > i) s(i, j) = kNegInf;
        if (blocked && mode == KnockoutMode::mask_logits && (*blocked)(i, j)) s(i, j) = kNegInf;
      }
    }
    softmax_rows(s);
    if (blocked && mode == KnockoutMode::zero_weights) {
      for (Eigen::Index i = 0; i < nq; ++i) {
        for (Eigen::Index j = 0; j < nk; ++j) {
          if ((*blocked)(i, j)) s(i, j) = 0.0;
        }
      }
    }
    heads.middleCols(h * hd, hd) = s * v.middleCols(h * hd, hd);
    probs.push_back(std::move(s));
  }
  Matrix out = heads * p.wo;
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->heads = std::move(heads);
  }
  return out;
}

void attention_backward(const AttentionParams& p, const Matrix& xq, const Matrix& xkv,
                        int n_heads, const AttentionCache& cache, const Matrix& dy,
                        AttentionParams& grad, Matrix& dxq, Matrix& dxkv) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  grad.wo.noalias() += cache.heads.transpose() * dy;
  const Matrix dheads = dy * p.wo.transpose();
  Matrix dq = Matrix::Zero(cache.q.rows(), d);
  Matrix dk = Matrix::Zero(cache.k.rows(), d);
  Matrix dv = Matrix::Zero(cache.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const Matrix& a = cache.probs[static_cast<std::size_t>(h)];
    const auto dout = dheads.middleCols(h * hd, hd);
    const Matrix da = dout * cache.v.middleCols(h * hd, hd).transpose();
    dv.middleCols(h * hd, hd) = a.transpose() * dout;
    Matrix ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
    dq.middleCols(h * hd, hd) = ds * cache.k.middleCols(h * hd, hd) * scale;
    dk.middleCols(h * hd, hd) = ds.transpose() * cache.q.middleCols(h * hd, hd) * scale;
  }
  grad.wq.noalias() += xq.transpose() * dq;
  grad.wk.noalias() += xkv.transpose() * dk;
  grad.wv.noalias() += xkv.transpose() * dv;
  dxq = dq * p.wq.transpose();
  dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
}

Matrix mlp(const BlockParams& p, const Matrix& x, MlpCache* cache) {
  Matrix pre = x * p.w_in;
  pre.rowwise() += p.b_in;
  Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix out = act * p.w_out;
  out.rowwise() += p.b_out;
  if (cache) {
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Matrix mlp_backward(const BlockParams& p, const Matrix& x, const MlpCache& cache,
                    const Matrix& dy, BlockParams& grad) {
  grad.w_out.noalias() += cache.act.transpose() * dy;
  grad.b_out += dy.colwise().sum();
  Matrix dpre = (dy * p.w_out.transpose()).array() *
                cache.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  grad.w_in.noalias() += x.transpose() * dpre;
  grad.b_in += dpre.colwise().sum();
  return dpre * p.w_in.transpose();
}

}  // namespace rlab::runtime::kernels
