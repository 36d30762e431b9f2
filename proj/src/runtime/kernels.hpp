#pragma once

// Forward/backward primitives shared by inference and training. Row i of
// every activation matrix is token i.

#include <vector>

#include "rlab/runtime/hooks.hpp"
#include "rlab/runtime/weights.hpp"

namespace rlab::runtime::kernels {

using BlockMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kRmsEps = 1e-6;

// y_t = x_t / sqrt(mean(x_t^2) + eps) * gain. `gain` may be null (unit gain).
Matrix rms_norm(const Matrix& x, const RowVector* gain, Eigen::VectorXd* inv_rms = nullptr);
Matrix rms_norm_backward(const Matrix& x, const RowVector* gain, const Eigen::VectorXd& inv_rms,
                         const Matrix& dy, RowVector* dgain);

struct AttentionCache {
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, queries x keys
  Matrix heads;               // concatenated head outputs, queries x d_model
};

// Multi-head attention of queries from `xq` over keys/values from `xkv`.
// `blocked` (queries x keys) removes edges according to `mode`; may be null.
Matrix attention(const AttentionParams& p, const Matrix& xq, const Matrix& xkv, int n_heads,
                 bool causal, const BlockMask* blocked, KnockoutMode mode,
                 AttentionCache* cache);

// Accumulates parameter gradients into `grad` and returns (dxq, dxkv).
// When xq and xkv are the same tensor the caller sums both results.
void attention_backward(const AttentionParams& p, const Matrix& xq, const Matrix& xkv,
                        int n_heads, const AttentionCache& cache, const Matrix& dy,
                        AttentionParams& grad, Matrix& dxq, Matrix& dxkv);

struct MlpCache {
  Matrix pre;  // x * w_in + b_in
  Matrix act;  // gelu(pre)
};

Matrix mlp(const BlockParams& p, const Matrix& x, MlpCache* cache);
Matrix mlp_backward(const BlockParams& p, const Matrix& x, const MlpCache& cache,
                    const Matrix& dy, BlockParams& grad);

double gelu(double x);
double gelu_grad(double x);

// Numerically stable softmax of a vector.
std::vector<double> softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits);

}  // namespace rlab::runtime::kernels
