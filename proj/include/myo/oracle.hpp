#pragma once

#include "myo/params.hpp"
#include "myo/solver.hpp"
#include "myo/topology.hpp"

#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Reference implementations used to certify the tree solver. Everything here
// is deliberately naive: dense matrices, O(n^3) factorizations.
namespace myo::oracle {

class SingularMatrixError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Largest node count the dense oracle accepts.
inline constexpr int max_dense_nodes = 4096;

/// T assembled explicitly, one dense matrix per head. Rows are ordered by the
/// depth-first post-order of the nodes.
template <typename Scalar = double>
struct DenseSystem
{
  std::vector<Matrix<Scalar>> per_head;
  /// First row of each node, indexed by BFS index.
  std::vector<Index> row_offset;
  /// Post-order position of each node, indexed by BFS index.
  std::vector<int> order;

  Index dimension() const { return per_head.empty() ? 0 : per_head.front().rows(); }
};

template <typename Scalar>
DenseSystem<Scalar> assemble_dense(const LevelParams<Scalar> &params, const TreeTopology &tree)
{
  params.check_matches(tree);
  if (tree.node_count() > max_dense_nodes) {
    throw std::invalid_argument("dense oracle limited to " + std::to_string(max_dense_nodes) +
                                " nodes, tree has " + std::to_string(tree.node_count()));
  }
  DenseSystem<Scalar> sys;
  sys.order = dfs_postorder_perm(tree);

  // Rows of a node start after all nodes that precede it in post-order.
  std::vector<Index> size_at(sys.order.size(), 0);
  for (int l = 0; l < tree.depth(); ++l) {
    for (int v = 0; v < tree.level_size(l); ++v) {
      size_at[static_cast<std::size_t>(sys.order[tree.bfs_index(l, v)])] = params.block_size(l);
    }
  }
  std::vector<Index> start_at(size_at.size() + 1, 0);
  for (std::size_t i = 0; i < size_at.size(); ++i) start_at[i + 1] = start_at[i] + size_at[i];
  sys.row_offset.resize(sys.order.size());
  for (std::size_t id = 0; id < sys.order.size(); ++id) {
    sys.row_offset[id] = start_at[static_cast<std::size_t>(sys.order[id])];
  }

  const Index n = start_at.back();
  for (Index h = 0; h < params.heads(); ++h) {
    Matrix<Scalar> t = Matrix<Scalar>::Zero(n, n);
    for (int l = 0; l < tree.depth(); ++l) {
      const Index d = params.block_size(l);
      for (int v = 0; v < tree.level_size(l); ++v) {
        const Index row = sys.row_offset[tree.bfs_index(l, v)];
        t.block(row, row, d, d) = params.a(l, h, v);
        if (l + 1 == tree.depth()) continue;
        const Index dp = params.block_size(l + 1);
        const Index prow = sys.row_offset[tree.bfs_index(l + 1, tree.parent(l, v))];
        t.block(row, prow, d, dp) = params.b(l, h, v);
        t.block(prow, row, dp, d) = params.c(l, h, v);
      }
    }
    sys.per_head.push_back(std::move(t));
  }
  return sys;
}

/// Gathers level-structured data into post-order dense columns: one
/// (n x r) matrix per (batch, head), index batch * heads + head.
template <typename Scalar>
std::vector<Matrix<Scalar>> to_dense(const DenseSystem<Scalar> &sys, const TreeTopology &tree,
                                     const RightHandSide<Scalar> &u)
{
  std::vector<Matrix<Scalar>> out;
  for (Index b = 0; b < u.batch(); ++b) {
    for (Index h = 0; h < u.heads(); ++h) {
      Matrix<Scalar> col = Matrix<Scalar>::Zero(sys.dimension(), u.right_parts());
      for (int l = 0; l < tree.depth(); ++l) {
        for (int v = 0; v < tree.level_size(l); ++v) {
          col.middleRows(sys.row_offset[tree.bfs_index(l, v)], u.block_size(l)) = u.block(l, b, h, v);
        }
      }
      out.push_back(std::move(col));
    }
  }
  return out;
}

/// Inverse of to_dense; `like` supplies the level shapes.
template <typename Scalar>
RightHandSide<Scalar> from_dense(const DenseSystem<Scalar> &sys, const TreeTopology &tree,
                                 std::span<const Matrix<Scalar>> columns, RightHandSide<Scalar> like)
{
  for (Index b = 0; b < like.batch(); ++b) {
    for (Index h = 0; h < like.heads(); ++h) {
      const auto &col = columns[static_cast<std::size_t>(b * like.heads() + h)];
      for (int l = 0; l < tree.depth(); ++l) {
        for (int v = 0; v < tree.level_size(l); ++v) {
          like.block(l, b, h, v) = col.middleRows(sys.row_offset[tree.bfs_index(l, v)], like.block_size(l));
        }
      }
    }
  }
  return like;
}

template <typename Scalar = double>
struct DenseSolution
{
  RightHandSide<Scalar> x;
  /// max |T x - u| over all entries.
  Scalar residual = 0;
};

/// x = T^{-1} u by partially pivoted LU of the assembled matrix. A matrix
/// whose reciprocal condition estimate is below machine epsilon counts as
/// singular.
template <typename Scalar>
DenseSolution<Scalar> dense_solve(const DenseSystem<Scalar> &sys, const TreeTopology &tree,
                                  const RightHandSide<Scalar> &u)
{
  const auto columns = to_dense(sys, tree, u);
  std::vector<Matrix<Scalar>> solved;
  Scalar residual(0);
  std::vector<Eigen::PartialPivLU<Matrix<Scalar>>> lus;
  for (const auto &t : sys.per_head) {
    lus.emplace_back(t);
    if (!(lus.back().rcond() > std::numeric_limits<Scalar>::epsilon())) {
      throw SingularMatrixError("dense system is singular");
    }
  }
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const std::size_t h = i % sys.per_head.size();
    Matrix<Scalar> x = lus[h].solve(columns[i]);
    residual = std::max(residual, Scalar((sys.per_head[h] * x - columns[i]).cwiseAbs().maxCoeff()));
    solved.push_back(std::move(x));
  }
  return {from_dense<Scalar>(sys, tree, solved, u), residual};
}

/// Explicit inverse of the matrix of one head.
template <typename Scalar>
Matrix<Scalar> dense_inverse(const DenseSystem<Scalar> &sys, Index head = 0)
{
  Eigen::FullPivLU<Matrix<Scalar>> lu(sys.per_head.at(static_cast<std::size_t>(head)));
  if (!lu.isInvertible()) throw SingularMatrixError("dense system is singular");
  return lu.inverse();
}

/// Dense T x, mapped back onto the level structure.
template <typename Scalar>
RightHandSide<Scalar> dense_apply(const DenseSystem<Scalar> &sys, const TreeTopology &tree,
                                  const RightHandSide<Scalar> &x)
{
  auto columns = to_dense(sys, tree, x);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    columns[i] = (sys.per_head[i % sys.per_head.size()] * columns[i]).eval();
  }
  return from_dense<Scalar>(sys, tree, columns, x);
}

/// x_1 = S_1 u_1, x_k = I_{k-1} x_{k-1} + S_k u_k, evaluated as written.
template <typename Scalar>
std::vector<Matrix<Scalar>> ssm_reference(std::span<const Matrix<Scalar>> interaction,
                                          std::span<const Matrix<Scalar>> input,
                                          std::span<const Matrix<Scalar>> u)
{
  if (input.empty() || u.size() != input.size() || interaction.size() + 1 != input.size()) {
    throw std::invalid_argument("SSM sequences have inconsistent lengths");
  }
  std::vector<Matrix<Scalar>> x;
  x.push_back(input[0] * u[0]);
  for (std::size_t k = 1; k < input.size(); ++k) {
    x.push_back(interaction[k - 1] * x.back() + input[k] * u[k]);
  }
  return x;
}

/// Block (i, j) (0-based) of the inverse of the unit lower bidiagonal chain
/// matrix whose sub-diagonal block at (m+1, m) is `sub[m]`:
/// identity on the diagonal, zero above it, and
/// (-1)^{i-j} sub[i-1] sub[i-2] ... sub[j] below it.
template <typename Scalar>
Matrix<Scalar> chain_inverse_entry(std::span<const Matrix<Scalar>> sub, Index i, Index j,
                                   Index block_size)
{
  const auto length = static_cast<Index>(sub.size()) + 1;
  if (i < 0 || j < 0 || i >= length || j >= length) throw std::out_of_range("chain index out of range");
  if (i == j) return Matrix<Scalar>::Identity(block_size, block_size);
  if (i < j) return Matrix<Scalar>::Zero(block_size, block_size);
  Matrix<Scalar> product = sub[static_cast<std::size_t>(i - 1)];
  for (Index m = i - 2; m >= j; --m) product = (product * sub[static_cast<std::size_t>(m)]).eval();
  return ((i - j) % 2 == 0) ? product : Matrix<Scalar>(-product);
}

/// Block LU of a block tridiagonal matrix.
///
/// T = L U with L unit lower block bidiagonal (sub-diagonal `lower`) and U
/// upper block bidiagonal (diagonal `pivot`, super-diagonal `upper`, which
/// equals the super-diagonal of T).
template <typename Scalar = double>
struct BidiagonalFactors
{
  std::vector<Matrix<Scalar>> lower;
  std::vector<Matrix<Scalar>> pivot;
  std::vector<Matrix<Scalar>> upper;

  /// Forward sweep with L, then backward sweep with U.
  Matrix<Scalar> solve(std::span<const Matrix<Scalar>> rhs, std::vector<Matrix<Scalar>> *out = nullptr) const
  {
    const std::size_t n = pivot.size();
    std::vector<Matrix<Scalar>> z(rhs.begin(), rhs.end());
    for (std::size_t k = 1; k < n; ++k) z[k] -= lower[k - 1] * z[k - 1];
    std::vector<Matrix<Scalar>> x(n);
    x[n - 1] = pivot[n - 1].fullPivLu().solve(z[n - 1]);
    for (std::size_t k = n - 1; k-- > 0;) {
      x[k] = pivot[k].fullPivLu().solve(Matrix<Scalar>(z[k] - upper[k] * x[k + 1]));
    }
    Index rows = 0;
    for (const auto &b : x) rows += b.rows();
    Matrix<Scalar> stacked(rows, x.front().cols());
    Index at = 0;
    for (const auto &b : x) {
      stacked.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
    if (out != nullptr) *out = std::move(x);
    return stacked;
  }

  Matrix<Scalar> dense_lower() const { return assemble(true); }
  Matrix<Scalar> dense_upper() const { return assemble(false); }

private:
  Matrix<Scalar> assemble(bool lower_part) const
  {
    std::vector<Index> offset{0};
    for (const auto &p : pivot) offset.push_back(offset.back() + p.rows());
    Matrix<Scalar> m = Matrix<Scalar>::Zero(offset.back(), offset.back());
    for (std::size_t k = 0; k < pivot.size(); ++k) {
      const Index d = pivot[k].rows();
      if (lower_part) {
        m.block(offset[k], offset[k], d, d).setIdentity();
        if (k > 0) m.block(offset[k], offset[k - 1], d, lower[k - 1].cols()) = lower[k - 1];
      } else {
        m.block(offset[k], offset[k], d, d) = pivot[k];
        if (k + 1 < pivot.size()) m.block(offset[k], offset[k + 1], d, upper[k].cols()) = upper[k];
      }
    }
    return m;
  }
};

/// Factorizes the block tridiagonal system of a chain (one head). Position k
/// holds A_k on the diagonal, B_k at (k, k+1) and C_k at (k+1, k). Fails when a
/// leading block minor vanishes, naming the 1-based position.
template <typename Scalar>
BidiagonalFactors<Scalar> tridiag_bidiagonal_factor(const LevelParams<Scalar> &chain, Index head = 0)
{
  const int n = chain.levels();
  for (int l = 0; l < n; ++l) {
    if (chain.nodes(l) != 1) throw std::invalid_argument("tridiagonal factorization needs a chain");
  }
  BidiagonalFactors<Scalar> f;
  f.pivot.push_back(chain.a(0, head, 0));
  for (int k = 0; k + 1 < n; ++k) {
    if (!Eigen::FullPivLU<Matrix<Scalar>>(f.pivot.back()).isInvertible()) {
      throw std::runtime_error("leading block minor vanishes at position " + std::to_string(k + 1));
    }
    // L_{k+1} U_k = C_k, solved as U_k^T L_{k+1}^T = C_k^T.
    const Matrix<Scalar> l = Eigen::FullPivLU<Matrix<Scalar>>(f.pivot.back().transpose())
                                 .solve(Matrix<Scalar>(chain.c(k, head, 0).transpose()))
                                 .transpose();
    f.lower.push_back(l);
    f.upper.push_back(chain.b(k, head, 0));
    f.pivot.push_back(chain.a(k + 1, head, 0) - l * chain.b(k, head, 0));
  }
  Eigen::FullPivLU<Matrix<Scalar>> last(f.pivot.back());
  if (!last.isInvertible()) {
    throw std::runtime_error("leading block minor vanishes at position " + std::to_string(n));
  }
  return f;
}

/// Central finite differences of `loss(solve(params, tree, u))` for every
/// scalar of A, B, C and u.
template <typename Scalar = double>
struct FiniteDifferenceGradient
{
  LevelParams<Scalar> params;
  RightHandSide<Scalar> rhs;
};

template <typename Scalar>
FiniteDifferenceGradient<Scalar>
finite_diff_grad(const LevelParams<Scalar> &params, const TreeTopology &tree, const RightHandSide<Scalar> &u,
                 const std::function<Scalar(const RightHandSide<Scalar> &)> &loss, Scalar eps)
{
  if (!(eps > 0)) throw std::invalid_argument("finite-difference step must be positive");
  FiniteDifferenceGradient<Scalar> grad{params, u};
  const auto evaluate = [&](const LevelParams<Scalar> &p, const RightHandSide<Scalar> &rhs) -> Scalar {
    try {
      return loss(solve(p, tree, rhs));
    } catch (const SingularBlockError &) {
      return std::numeric_limits<Scalar>::quiet_NaN();
    }
  };
  const auto central = [&](Scalar &entry, const auto &p, const auto &rhs) {
    const Scalar saved = entry;
    entry = saved + eps;
    const Scalar up = evaluate(p, rhs);
    entry = saved - eps;
    const Scalar down = evaluate(p, rhs);
    entry = saved;
    return (up - down) / (Scalar(2) * eps);
  };

  LevelParams<Scalar> probe = params;
  const auto sweep = [&](BlockArray<Scalar> &target, BlockArray<Scalar> &out) {
    auto values = target.values();
    auto result = out.values();
    for (std::size_t i = 0; i < values.size(); ++i) result[i] = central(values[i], probe, u);
  };
  for (int l = 0; l < params.levels(); ++l) {
    sweep(probe.A(l), grad.params.A(l));
    if (l + 1 == params.levels()) continue;
    sweep(probe.B(l), grad.params.B(l));
    sweep(probe.C(l), grad.params.C(l));
  }
  RightHandSide<Scalar> shifted = u;
  for (int l = 0; l < u.levels(); ++l) {
    auto values = shifted.level(l).values();
    auto result = grad.rhs.level(l).values();
    for (std::size_t i = 0; i < values.size(); ++i) result[i] = central(values[i], params, shifted);
  }
  return grad;
}

/// Largest relative disagreement between an analytic gradient and its
/// finite-difference estimate, over every parameter and right-hand-side
/// entry. Each entry is measured against max(|analytic|, |estimate|, floor),
/// where floor is 1e-3 times the largest analytic magnitude, so entries whose
/// true gradient is negligible are judged on the scale of the whole gradient.
/// A non-finite estimate yields +inf.
template <typename Scalar>
Scalar gradient_discrepancy(const Cotangents<Scalar> &analytic, const FiniteDifferenceGradient<Scalar> &estimate)
{
  std::vector<std::pair<std::span<const Scalar>, std::span<const Scalar>>> pairs;
  for (int l = 0; l < analytic.params.levels(); ++l) {
    pairs.emplace_back(analytic.params.A(l).values(), estimate.params.A(l).values());
    if (l + 1 < analytic.params.levels()) {
      pairs.emplace_back(analytic.params.B(l).values(), estimate.params.B(l).values());
      pairs.emplace_back(analytic.params.C(l).values(), estimate.params.C(l).values());
    }
    pairs.emplace_back(analytic.rhs.level(l).values(), estimate.rhs.level(l).values());
  }
  Scalar scale(0);
  for (const auto &[a, f] : pairs) {
    for (Scalar v : a) scale = std::max(scale, Scalar(std::abs(v)));
  }
  const Scalar floor = std::max(Scalar(1e-3) * scale, std::numeric_limits<Scalar>::min());
  Scalar worst(0);
  for (const auto &[a, f] : pairs) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!std::isfinite(f[i])) return std::numeric_limits<Scalar>::infinity();
      const Scalar denom = std::max({Scalar(std::abs(a[i])), Scalar(std::abs(f[i])), floor});
      worst = std::max(worst, Scalar(std::abs(a[i] - f[i]) / denom));
    }
  }
  return worst;
}

} // namespace myo::oracle
