#pragma once

#include "myo/block_array.hpp"
#include "myo/params.hpp"
#include "myo/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace myo {

/// Raised when a diagonal block met during elimination cannot be factorized.
/// Level and node are 1-based, matching file formats and messages.
class SingularBlockError : public std::runtime_error
{
public:
  SingularBlockError(int level, Index node, Index head)
    : std::runtime_error("singular diagonal block at level " + std::to_string(level) + ", node " +
                         std::to_string(node) + ", head " + std::to_string(head)),
      level_(level), node_(node), head_(head)
  {
  }

  int level() const { return level_; }
  Index node() const { return node_; }
  Index head() const { return head_; }

private:
  int level_;
  Index node_;
  Index head_;
};

/// Counters filled by a solve. `block_ops` counts block factorizations, block
/// triangular solves and block products; `peak_aux_bytes` is the largest
/// amount of intermediate storage (carry, retained factors, partial output)
/// alive at any point of the solve.
struct SolveStats
{
  int upward_steps = 0;
  int root_solves = 0;
  int downward_steps = 0;
  std::int64_t block_ops = 0;
  std::int64_t peak_aux_bytes = 0;

  int level_steps() const { return upward_steps + root_solves + downward_steps; }
};

/// Relative pivot threshold: a block is singular when some pivot of its
/// partially pivoted LU is below this times the block's largest entry.
template <typename Scalar>
constexpr Scalar pivot_tolerance()
{
  return std::max(Scalar(1e-12), Scalar(100) * std::numeric_limits<Scalar>::epsilon());
}

namespace detail {

template <typename Scalar, typename Derived>
Eigen::PartialPivLU<Matrix<Scalar>> factorize(const Eigen::MatrixBase<Derived> &block, int level,
                                              Index node, Index head)
{
  const Scalar scale = block.cwiseAbs().maxCoeff();
  Eigen::PartialPivLU<Matrix<Scalar>> lu(block);
  const Scalar smallest = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(scale > 0) || !std::isfinite(scale) || !(smallest >= pivot_tolerance<Scalar>() * scale)) {
    throw SingularBlockError(level + 1, node + 1, head + 1);
  }
  return lu;
}

template <typename Scalar>
std::int64_t bytes_of(const BlockArray<Scalar> &a)
{
  return static_cast<std::int64_t>(a.size()) * static_cast<std::int64_t>(sizeof(Scalar));
}

/// Start offsets of the child groups described by `split`.
inline std::vector<Index> group_offsets(std::span<const int> split)
{
  std::vector<Index> offsets(split.size() + 1, 0);
  for (std::size_t p = 0; p < split.size(); ++p) offsets[p + 1] = offsets[p] + split[p];
  return offsets;
}

} // namespace detail

/// One level of the elimination carry: the (Schur-updated) diagonal blocks and
/// right-hand side of a level together with its unchanged couplings. B and C
/// point into the parameter set and are null on the root level.
template <typename Scalar>
struct LevelCarry
{
  BlockArray<Scalar> A; // heads * n blocks
  const BlockArray<Scalar> *B = nullptr;
  const BlockArray<Scalar> *C = nullptr;
  BlockArray<Scalar> u; // batch * heads * n blocks
};

/// Quantities a child level leaves behind during the upward pass.
template <typename Scalar>
struct RetainedLevel
{
  /// -A_c^{-1} B_c, one per (head, node).
  BlockArray<Scalar> coupling;
  /// A_c^{-1} u_c, one per (batch, head, node).
  BlockArray<Scalar> rhs;
  /// The Schur-updated diagonal block A_c that was factorized.
  BlockArray<Scalar> schur;
};

/// Eliminates one child level into its parent level.
///
/// `split[p]` is the number of children of parent p; children of a parent are
/// contiguous. Returns the parent carry (A_p + sum C_c Bhat_c, B_p, C_p,
/// u_p - sum C_c uhat_c) and the retained child quantities.
template <typename Scalar>
std::pair<LevelCarry<Scalar>, RetainedLevel<Scalar>>
upward_step(LevelCarry<Scalar> children, LevelCarry<Scalar> parent, std::span<const int> split,
            Index batch, Index heads, int child_level, SolveStats *stats = nullptr)
{
  const Index n_child = children.A.count() / heads;
  const Index n_parent = parent.A.count() / heads;
  if (static_cast<Index>(split.size()) != n_parent) {
    throw std::invalid_argument("split has " + std::to_string(split.size()) + " groups for " +
                                std::to_string(n_parent) + " parents");
  }
  const auto offsets = detail::group_offsets(split);
  if (offsets.back() != n_child) throw std::invalid_argument("split does not cover the child level");

  const Index d_child = children.A.rows();
  const Index d_parent = parent.A.rows();
  const Index r = children.u.cols();
  RetainedLevel<Scalar> kept{BlockArray<Scalar>(heads * n_child, d_child, d_parent),
                             BlockArray<Scalar>(batch * heads * n_child, d_child, r),
                             std::move(children.A)};
  std::int64_t ops = 0;

  for (Index h = 0; h < heads; ++h) {
    for (Index p = 0; p < n_parent; ++p) {
      auto parent_a = parent.A.block(h * n_parent + p);
      for (Index c = offsets[p]; c < offsets[p + 1]; ++c) {
        const Index slot = h * n_child + c;
        const auto lu = detail::factorize<Scalar>(kept.schur.block(slot), child_level, c, h);
        kept.coupling.block(slot) = -lu.solve(Matrix<Scalar>(children.B->block(slot)));
        const auto coupling_up = children.C->block(slot);
        parent_a.noalias() += coupling_up * kept.coupling.block(slot);
        ops += 3;
        for (Index b = 0; b < batch; ++b) {
          const Index child_slot = (b * heads + h) * n_child + c;
          kept.rhs.block(child_slot) = lu.solve(Matrix<Scalar>(children.u.block(child_slot)));
          parent.u.block((b * heads + h) * n_parent + p).noalias() -=
              coupling_up * kept.rhs.block(child_slot);
          ops += 2;
        }
      }
    }
  }
  if (stats != nullptr) {
    stats->upward_steps += 1;
    stats->block_ops += ops;
  }
  return {std::move(parent), std::move(kept)};
}

/// x_c = uhat_c + Bhat_c x_parent(c) for every child of a level.
template <typename Scalar>
BlockArray<Scalar> downward_step(const RetainedLevel<Scalar> &kept, const BlockArray<Scalar> &x_parent,
                                 std::span<const int> split, Index batch, Index heads,
                                 SolveStats *stats = nullptr)
{
  const Index n_child = kept.coupling.count() / heads;
  const Index n_parent = x_parent.count() / (batch * heads);
  if (static_cast<Index>(split.size()) != n_parent) {
    throw std::invalid_argument("split does not match the parent level");
  }
  const auto offsets = detail::group_offsets(split);
  BlockArray<Scalar> x = kept.rhs;
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      for (Index p = 0; p < n_parent; ++p) {
        const auto xp = x_parent.block((b * heads + h) * n_parent + p);
        for (Index c = offsets[p]; c < offsets[p + 1]; ++c) {
          x.block((b * heads + h) * n_child + c).noalias() += kept.coupling.block(h * n_child + c) * xp;
        }
      }
    }
  }
  if (stats != nullptr) {
    stats->downward_steps += 1;
    stats->block_ops += batch * heads * n_child;
  }
  return x;
}

/// Everything the upward pass produces: per non-root level the retained
/// quantities, and the reduced root system schur * x_root = rhs.
template <typename Scalar>
struct SolveState
{
  std::vector<RetainedLevel<Scalar>> levels;
  BlockArray<Scalar> root_schur;
  BlockArray<Scalar> root_rhs;

  std::int64_t bytes() const
  {
    std::int64_t total = detail::bytes_of(root_schur) + detail::bytes_of(root_rhs);
    for (const auto &l : levels) {
      total += detail::bytes_of(l.coupling) + detail::bytes_of(l.rhs) + detail::bytes_of(l.schur);
    }
    return total;
  }
};

namespace detail {

template <typename Scalar>
LevelCarry<Scalar> level_carry(const LevelParams<Scalar> &params, const RightHandSide<Scalar> &u,
                               int level)
{
  const bool root = level + 1 == params.levels();
  return {params.A(level), root ? nullptr : &params.B(level), root ? nullptr : &params.C(level),
          u.level(level)};
}

} // namespace detail

/// Leaf-to-root elimination over all levels.
template <typename Scalar>
SolveState<Scalar> upward_pass(const LevelParams<Scalar> &params, const TreeTopology &tree,
                               const RightHandSide<Scalar> &u, SolveStats *stats = nullptr)
{
  check_rhs_matches(params, tree, u);
  SolveState<Scalar> state;
  state.levels.reserve(static_cast<std::size_t>(tree.depth() - 1));
  auto carry = detail::level_carry(params, u, 0);
  std::int64_t retained = 0;
  for (int p = 1; p < tree.depth(); ++p) {
    auto [next, kept] = upward_step(std::move(carry), detail::level_carry(params, u, p),
                                    tree.splits(p), u.batch(), u.heads(), p - 1, stats);
    carry = std::move(next);
    retained += detail::bytes_of(kept.coupling) + detail::bytes_of(kept.rhs) +
                detail::bytes_of(kept.schur);
    state.levels.push_back(std::move(kept));
    if (stats != nullptr) {
      stats->peak_aux_bytes = std::max(stats->peak_aux_bytes, retained + detail::bytes_of(carry.A) +
                                                                  detail::bytes_of(carry.u));
    }
  }
  state.root_schur = std::move(carry.A);
  state.root_rhs = std::move(carry.u);
  return state;
}

/// Solves the root system, then substitutes back down to the leaves.
template <typename Scalar>
RightHandSide<Scalar> downward_pass(const SolveState<Scalar> &state, const TreeTopology &tree,
                                    RightHandSide<Scalar> x, SolveStats *stats = nullptr)
{
  const int top = tree.depth() - 1;
  const Index heads = x.heads();
  const Index batch = x.batch();
  auto &root = x.level(top);
  for (Index h = 0; h < heads; ++h) {
    const auto lu = detail::factorize<Scalar>(state.root_schur.block(h), top, 0, h);
    for (Index b = 0; b < batch; ++b) {
      root.block(b * heads + h) = lu.solve(Matrix<Scalar>(state.root_rhs.block(b * heads + h)));
    }
  }
  std::int64_t live = state.bytes() + detail::bytes_of(root);
  if (stats != nullptr) {
    stats->root_solves += 1;
    stats->block_ops += heads * (1 + batch);
    stats->peak_aux_bytes = std::max(stats->peak_aux_bytes, live);
  }
  for (int l = top - 1; l >= 0; --l) {
    x.level(l) = downward_step(state.levels[static_cast<std::size_t>(l)], x.level(l + 1),
                               tree.splits(l + 1), batch, heads, stats);
    live += detail::bytes_of(x.level(l));
    if (stats != nullptr) stats->peak_aux_bytes = std::max(stats->peak_aux_bytes, live);
  }
  return x;
}

/// Solves T x = u for the block tree system described by `params` on `tree`.
/// Runs depth-1 upward steps, one root solve and depth-1 downward steps.
template <typename Scalar>
RightHandSide<Scalar> solve(const LevelParams<Scalar> &params, const TreeTopology &tree,
                            const RightHandSide<Scalar> &u, SolveStats *stats = nullptr)
{
  const auto state = upward_pass(params, tree, u, stats);
  return downward_pass(state, tree, RightHandSide<Scalar>::like(params, tree, u.batch(), u.right_parts()),
                       stats);
}

/// Parameters of the transposed system: A -> A^T, and the two couplings of
/// every edge swap places (B -> C^T, C -> B^T).
template <typename Scalar>
LevelParams<Scalar> transpose_system(const LevelParams<Scalar> &params)
{
  LevelParams<Scalar> t = params;
  for (int l = 0; l < params.levels(); ++l) {
    for (Index i = 0; i < params.A(l).count(); ++i) {
      t.A(l).block(i) = params.A(l).block(i).transpose();
      if (l + 1 == params.levels()) continue;
      t.B(l).block(i) = params.C(l).block(i).transpose();
      t.C(l).block(i) = params.B(l).block(i).transpose();
    }
  }
  return t;
}

/// Solves T^T y = g.
template <typename Scalar>
RightHandSide<Scalar> solve_transpose(const LevelParams<Scalar> &params, const TreeTopology &tree,
                                      const RightHandSide<Scalar> &g, SolveStats *stats = nullptr)
{
  return solve(transpose_system(params), tree, g, stats);
}

/// Blockwise product T x in O(L) block operations.
template <typename Scalar>
RightHandSide<Scalar> apply_system(const LevelParams<Scalar> &params, const TreeTopology &tree,
                                   const RightHandSide<Scalar> &x)
{
  check_rhs_matches(params, tree, x);
  auto y = RightHandSide<Scalar>::like(params, tree, x.batch(), x.right_parts());
  for (int l = 0; l < params.levels(); ++l) {
    const bool has_parent = l + 1 < params.levels();
    for (Index b = 0; b < x.batch(); ++b) {
      for (Index h = 0; h < x.heads(); ++h) {
        for (Index v = 0; v < params.nodes(l); ++v) {
          y.block(l, b, h, v).noalias() += params.a(l, h, v) * x.block(l, b, h, v);
          if (!has_parent) continue;
          const Index p = tree.parent(l, static_cast<int>(v));
          y.block(l, b, h, v).noalias() += params.b(l, h, v) * x.block(l + 1, b, h, p);
          y.block(l + 1, b, h, p).noalias() += params.c(l, h, v) * x.block(l, b, h, v);
        }
      }
    }
  }
  return y;
}

/// Cotangents of a loss with respect to the right-hand side and to every
/// parameter block. `params` uses the LevelParams layout for the gradients.
template <typename Scalar>
struct Cotangents
{
  RightHandSide<Scalar> rhs;
  LevelParams<Scalar> params;
};

/// Reverse-mode derivative of x = T^{-1} u given the cotangent `g` of x.
///
/// With y = T^{-T} g: du = y, and every block M of T at block position
/// (row v, column w) receives -sum y_v x_w^T, summed over batch and right parts.
template <typename Scalar>
Cotangents<Scalar> vjp(const LevelParams<Scalar> &params, const TreeTopology &tree,
                       const RightHandSide<Scalar> &x, const RightHandSide<Scalar> &g)
{
  check_rhs_matches(params, tree, g);
  check_rhs_matches(params, tree, x);
  Cotangents<Scalar> out{solve_transpose(params, tree, g), params};
  const auto &y = out.rhs;
  auto &d = out.params;
  for (int l = 0; l < params.levels(); ++l) {
    d.A(l).set_zero();
    if (l + 1 < params.levels()) {
      d.B(l).set_zero();
      d.C(l).set_zero();
    }
  }
  for (int l = 0; l < params.levels(); ++l) {
    const bool has_parent = l + 1 < params.levels();
    for (Index h = 0; h < params.heads(); ++h) {
      for (Index v = 0; v < params.nodes(l); ++v) {
        const Index p = has_parent ? tree.parent(l, static_cast<int>(v)) : 0;
        for (Index b = 0; b < x.batch(); ++b) {
          d.a(l, h, v).noalias() -= y.block(l, b, h, v) * x.block(l, b, h, v).transpose();
          if (!has_parent) continue;
          d.b(l, h, v).noalias() -= y.block(l, b, h, v) * x.block(l + 1, b, h, p).transpose();
          d.c(l, h, v).noalias() -= y.block(l + 1, b, h, p) * x.block(l, b, h, v).transpose();
        }
      }
    }
  }
  return out;
}

/// Forward-mode derivative: dx = -T^{-1} (dT x) for a parameter direction
/// `direction` (same layout as the parameters).
template <typename Scalar>
RightHandSide<Scalar> jvp(const LevelParams<Scalar> &params, const TreeTopology &tree,
                          const RightHandSide<Scalar> &x, const LevelParams<Scalar> &direction)
{
  auto rhs = apply_system(direction, tree, x);
  for (int l = 0; l < rhs.levels(); ++l) {
    for (Scalar &v : rhs.level(l).values()) v = -v;
  }
  return solve(params, tree, rhs);
}

} // namespace myo
