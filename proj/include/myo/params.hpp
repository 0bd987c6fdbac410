#pragma once

#include "myo/block_array.hpp"
#include "myo/topology.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace myo {

/// Per-level block parameters of a tree system.
///
/// Level `l` stores `heads * n_l` blocks, indexed `head * n_l + node`:
///   A[l]: d_l x d_l          (diagonal block of every node)
///   B[l]: d_l x d_{l+1}      (row of the node, column of its parent), l < D-1
///   C[l]: d_{l+1} x d_l      (row of the parent, column of the node), l < D-1
template <typename Scalar = double>
class LevelParams
{
public:
  LevelParams() = default;

  LevelParams(const TreeTopology &tree, std::vector<Index> block_sizes, Index heads)
    : heads_(heads), block_sizes_(std::move(block_sizes))
  {
    const int d = tree.depth();
    if (static_cast<int>(block_sizes_.size()) != d) {
      throw std::invalid_argument("need one block size per level: expected " + std::to_string(d) +
                                  ", got " + std::to_string(block_sizes_.size()));
    }
    if (heads_ < 1) throw std::invalid_argument("head count must be positive");
    for (Index s : block_sizes_) {
      if (s < 1) throw std::invalid_argument("block sizes must be positive");
    }
    nodes_.assign(tree.level_sizes().begin(), tree.level_sizes().end());
    for (int l = 0; l < d; ++l) {
      const Index count = heads_ * nodes_[l];
      a_.emplace_back(count, block_sizes_[l], block_sizes_[l]);
      if (l + 1 < d) {
        b_.emplace_back(count, block_sizes_[l], block_sizes_[l + 1]);
        c_.emplace_back(count, block_sizes_[l + 1], block_sizes_[l]);
      }
    }
  }

  int levels() const { return static_cast<int>(a_.size()); }
  Index heads() const { return heads_; }
  Index block_size(int level) const { return block_sizes_.at(level); }
  const std::vector<Index> &block_sizes() const { return block_sizes_; }
  Index nodes(int level) const { return nodes_.at(level); }
  Index slot(int level, Index head, Index node) const { return head * nodes_[level] + node; }

  BlockArray<Scalar> &A(int level) { return a_.at(level); }
  const BlockArray<Scalar> &A(int level) const { return a_.at(level); }
  BlockArray<Scalar> &B(int level) { return b_.at(level); }
  const BlockArray<Scalar> &B(int level) const { return b_.at(level); }
  BlockArray<Scalar> &C(int level) { return c_.at(level); }
  const BlockArray<Scalar> &C(int level) const { return c_.at(level); }

  auto a(int level, Index head, Index node) { return a_.at(level).block(slot(level, head, node)); }
  auto a(int level, Index head, Index node) const { return a_.at(level).block(slot(level, head, node)); }
  auto b(int level, Index head, Index node) { return b_.at(level).block(slot(level, head, node)); }
  auto b(int level, Index head, Index node) const { return b_.at(level).block(slot(level, head, node)); }
  auto c(int level, Index head, Index node) { return c_.at(level).block(slot(level, head, node)); }
  auto c(int level, Index head, Index node) const { return c_.at(level).block(slot(level, head, node)); }

  /// Number of scalar entries over all A, B and C arrays.
  Index scalar_count() const
  {
    Index n = 0;
    for (const auto &x : a_) n += x.size();
    for (const auto &x : b_) n += x.size();
    for (const auto &x : c_) n += x.size();
    return n;
  }

  /// Checks that this parameter set fits `tree` level by level.
  void check_matches(const TreeTopology &tree) const
  {
    if (tree.depth() != levels()) {
      throw std::invalid_argument("parameters have " + std::to_string(levels()) +
                                  " levels, tree has " + std::to_string(tree.depth()));
    }
    for (int l = 0; l < levels(); ++l) {
      if (nodes_[l] != tree.level_size(l)) {
        throw std::invalid_argument("level " + std::to_string(l + 1) + " has " +
                                    std::to_string(nodes_[l]) + " parameter nodes, tree has " +
                                    std::to_string(tree.level_size(l)));
      }
    }
  }

  friend bool operator==(const LevelParams &, const LevelParams &) = default;

private:
  Index heads_ = 0;
  std::vector<Index> block_sizes_;
  std::vector<Index> nodes_;
  std::vector<BlockArray<Scalar>> a_;
  std::vector<BlockArray<Scalar>> b_;
  std::vector<BlockArray<Scalar>> c_;
};

/// Level-structured right-hand side (or solution) with `right_parts` columns.
/// Level `l` stores `batch * heads * n_l` blocks of shape d_l x r, indexed
/// `(batch_index * heads + head) * n_l + node`.
template <typename Scalar = double>
class RightHandSide
{
public:
  RightHandSide() = default;

  RightHandSide(const TreeTopology &tree, const std::vector<Index> &block_sizes, Index batch,
                Index heads, Index right_parts)
    : batch_(batch), heads_(heads), right_parts_(right_parts)
  {
    if (static_cast<int>(block_sizes.size()) != tree.depth()) {
      throw std::invalid_argument("need one block size per level");
    }
    if (batch < 1 || heads < 1 || right_parts < 1) {
      throw std::invalid_argument("batch, heads and right parts must be positive");
    }
    for (int l = 0; l < tree.depth(); ++l) {
      nodes_.push_back(tree.level_size(l));
      levels_.emplace_back(batch * heads * tree.level_size(l), block_sizes[l], right_parts);
    }
  }

  /// Zero right-hand side shaped to match `params`.
  static RightHandSide like(const LevelParams<Scalar> &params, const TreeTopology &tree,
                            Index batch, Index right_parts)
  {
    return RightHandSide(tree, params.block_sizes(), batch, params.heads(), right_parts);
  }

  int levels() const { return static_cast<int>(levels_.size()); }
  Index batch() const { return batch_; }
  Index heads() const { return heads_; }
  Index right_parts() const { return right_parts_; }
  Index nodes(int level) const { return nodes_.at(level); }
  Index block_size(int level) const { return levels_.at(level).rows(); }
  Index slot(int level, Index batch_index, Index head, Index node) const
  {
    return (batch_index * heads_ + head) * nodes_[level] + node;
  }

  BlockArray<Scalar> &level(int l) { return levels_.at(l); }
  const BlockArray<Scalar> &level(int l) const { return levels_.at(l); }

  auto block(int l, Index batch_index, Index head, Index node)
  {
    return levels_.at(l).block(slot(l, batch_index, head, node));
  }
  auto block(int l, Index batch_index, Index head, Index node) const
  {
    return levels_.at(l).block(slot(l, batch_index, head, node));
  }

  Index scalar_count() const
  {
    Index n = 0;
    for (const auto &x : levels_) n += x.size();
    return n;
  }

  /// Largest absolute entry.
  Scalar max_abs() const
  {
    Scalar m(0);
    for (const auto &x : levels_) {
      for (Scalar v : x.values()) m = std::max(m, Scalar(std::abs(v)));
    }
    return m;
  }

  friend bool operator==(const RightHandSide &, const RightHandSide &) = default;

private:
  Index batch_ = 0;
  Index heads_ = 0;
  Index right_parts_ = 0;
  std::vector<Index> nodes_;
  std::vector<BlockArray<Scalar>> levels_;
};

template <typename Scalar>
void check_rhs_matches(const LevelParams<Scalar> &params, const TreeTopology &tree,
                       const RightHandSide<Scalar> &u)
{
  params.check_matches(tree);
  if (u.levels() != params.levels() || u.heads() != params.heads()) {
    throw std::invalid_argument("right-hand side levels/heads do not match parameters");
  }
  for (int l = 0; l < u.levels(); ++l) {
    if (u.nodes(l) != params.nodes(l) || u.block_size(l) != params.block_size(l)) {
      throw std::invalid_argument("right-hand side level " + std::to_string(l + 1) +
                                  " does not match parameter shapes");
    }
  }
}

/// Element-wise a*x + b*y over two identically shaped right-hand sides.
template <typename Scalar>
RightHandSide<Scalar> combine(Scalar a, const RightHandSide<Scalar> &x, Scalar b,
                              const RightHandSide<Scalar> &y)
{
  RightHandSide<Scalar> out = x;
  for (int l = 0; l < x.levels(); ++l) {
    auto dst = out.level(l).values();
    auto src = y.level(l).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * dst[i] + b * src[i];
  }
  return out;
}

/// Portable uniform source: mt19937_64 is fully specified, and the mapping to
/// [-1, 1) below does not depend on the standard library's distributions.
class UniformSource
{
public:
  explicit UniformSource(std::uint64_t seed) : engine_(seed) {}
  double operator()() { return static_cast<double>(engine_() >> 11) * 0x1.0p-52 - 1.0; }
  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
void fill_uniform(BlockArray<Scalar> &array, UniformSource &rng, double scale)
{
  for (Scalar &v : array.values()) v = static_cast<Scalar>(scale * rng());
}

/// Random parameters whose Schur complements stay symmetric positive definite.
///
/// A = I, every B entry is drawn uniformly from [-s, s) with
/// s = gamma / (k * d), k the largest child-group size and d the largest block
/// size, and C = -B^T blockwise. Deterministic in `seed`.
template <typename Scalar = double>
LevelParams<Scalar> init_random_stable(const TreeTopology &tree, std::vector<Index> block_sizes,
                                       Index heads, std::uint64_t seed, double coupling_scale)
{
  if (coupling_scale < 0) throw std::invalid_argument("coupling scale must be non-negative");
  LevelParams<Scalar> p(tree, std::move(block_sizes), heads);
  int arity = 1;
  for (const auto &level : tree.split_sizes()) {
    for (int s : level) arity = std::max(arity, s);
  }
  const Index widest = *std::max_element(p.block_sizes().begin(), p.block_sizes().end());
  const double bound = coupling_scale / (static_cast<double>(arity) * static_cast<double>(widest));

  UniformSource rng(seed);
  for (int l = 0; l < p.levels(); ++l) {
    for (Index i = 0; i < p.A(l).count(); ++i) p.A(l).block(i).setIdentity();
    if (l + 1 == p.levels()) continue;
    fill_uniform(p.B(l), rng, bound);
    for (Index i = 0; i < p.B(l).count(); ++i) p.C(l).block(i) = -p.B(l).block(i).transpose();
  }
  return p;
}

/// Random right-hand side with entries uniform in [-1, 1).
template <typename Scalar = double>
RightHandSide<Scalar> random_rhs(const LevelParams<Scalar> &params, const TreeTopology &tree,
                                 Index batch, Index right_parts, std::uint64_t seed)
{
  auto u = RightHandSide<Scalar>::like(params, tree, batch, right_parts);
  UniformSource rng(seed);
  for (int l = 0; l < u.levels(); ++l) fill_uniform(u.level(l), rng, 1.0);
  return u;
}

/// Per-node gauge blocks, shaped like the A arrays of the parameters they act on.
template <typename Scalar = double>
using GaugeBlocks = std::vector<BlockArray<Scalar>>;

namespace detail {

template <typename Scalar>
std::vector<Matrix<Scalar>> invert_gauge_level(const BlockArray<Scalar> &blocks, int level)
{
  std::vector<Matrix<Scalar>> inverses;
  inverses.reserve(static_cast<std::size_t>(blocks.count()));
  for (Index i = 0; i < blocks.count(); ++i) {
    Eigen::FullPivLU<Matrix<Scalar>> lu(blocks.block(i));
    if (!lu.isInvertible()) {
      throw std::invalid_argument("gauge block " + std::to_string(i + 1) + " on level " +
                                  std::to_string(level + 1) + " is singular");
    }
    inverses.push_back(lu.inverse());
  }
  return inverses;
}

template <typename Scalar>
void check_gauge_shape(const LevelParams<Scalar> &params, const GaugeBlocks<Scalar> &gauge)
{
  if (static_cast<int>(gauge.size()) != params.levels()) {
    throw std::invalid_argument("need one gauge array per level");
  }
  for (int l = 0; l < params.levels(); ++l) {
    if (gauge[l].count() != params.A(l).count() || gauge[l].rows() != params.block_size(l) ||
        gauge[l].cols() != params.block_size(l)) {
      throw std::invalid_argument("gauge blocks on level " + std::to_string(l + 1) +
                                  " do not match the diagonal blocks");
    }
  }
}

} // namespace detail

/// Left-multiplies every block row v of the system by D_v^{-1}:
/// A_v -> D_v^{-1} A_v, B_v -> D_v^{-1} B_v and, for each child c of v,
/// C_c -> D_v^{-1} C_c.
template <typename Scalar>
LevelParams<Scalar> apply_gauge(const LevelParams<Scalar> &params, const TreeTopology &tree,
                                const GaugeBlocks<Scalar> &gauge)
{
  params.check_matches(tree);
  detail::check_gauge_shape(params, gauge);
  LevelParams<Scalar> out = params;
  std::vector<std::vector<Matrix<Scalar>>> inverse;
  for (int l = 0; l < params.levels(); ++l) inverse.push_back(detail::invert_gauge_level(gauge[l], l));

  for (int l = 0; l < params.levels(); ++l) {
    const Index n = params.nodes(l);
    for (Index h = 0; h < params.heads(); ++h) {
      for (Index v = 0; v < n; ++v) {
        const auto &dinv = inverse[l][static_cast<std::size_t>(h * n + v)];
        out.a(l, h, v) = dinv * params.a(l, h, v);
        if (l + 1 == params.levels()) continue;
        out.b(l, h, v) = dinv * params.b(l, h, v);
        const Index parent = tree.parent(l, static_cast<int>(v));
        const auto &pinv = inverse[l + 1][static_cast<std::size_t>(h * params.nodes(l + 1) + parent)];
        out.c(l, h, v) = pinv * params.c(l, h, v);
      }
    }
  }
  return out;
}

/// u_v -> D_v^{-1} u_v, the right-hand side companion of apply_gauge.
template <typename Scalar>
RightHandSide<Scalar> scale_rhs(const RightHandSide<Scalar> &u, const GaugeBlocks<Scalar> &gauge)
{
  if (static_cast<int>(gauge.size()) != u.levels()) {
    throw std::invalid_argument("need one gauge array per level");
  }
  RightHandSide<Scalar> out = u;
  for (int l = 0; l < u.levels(); ++l) {
    const auto inverse = detail::invert_gauge_level(gauge[l], l);
    if (gauge[l].count() != u.heads() * u.nodes(l)) {
      throw std::invalid_argument("gauge blocks do not match right-hand side level " +
                                  std::to_string(l + 1));
    }
    for (Index b = 0; b < u.batch(); ++b) {
      for (Index h = 0; h < u.heads(); ++h) {
        for (Index v = 0; v < u.nodes(l); ++v) {
          out.block(l, b, h, v) = inverse[static_cast<std::size_t>(h * u.nodes(l) + v)] *
                                  u.block(l, b, h, v);
        }
      }
    }
  }
  return out;
}

/// Converts the recurrence x_1 = S_1 u_1, x_k = I_{k-1} x_{k-1} + S_k u_k into
/// a chain system (single head). Position k gets diagonal block S_k^{-1}; the
/// coupling from x_{k-1} into row k is -S_k^{-1} I_{k-1}; nothing couples
/// upward. Every S_k must be square and invertible.
template <typename Scalar>
LevelParams<Scalar> ssm_to_chain(std::span<const Matrix<Scalar>> interaction,
                                 std::span<const Matrix<Scalar>> input)
{
  const auto length = input.size();
  if (length == 0) throw std::invalid_argument("SSM needs at least one step");
  if (interaction.size() + 1 != length) {
    throw std::invalid_argument("need exactly one interaction block per transition");
  }
  std::vector<Index> sizes;
  std::vector<Matrix<Scalar>> s_inverse;
  for (std::size_t k = 0; k < length; ++k) {
    if (input[k].rows() != input[k].cols()) {
      throw std::invalid_argument("input block " + std::to_string(k + 1) + " is not square");
    }
    Eigen::FullPivLU<Matrix<Scalar>> lu(input[k]);
    if (!lu.isInvertible()) {
      throw std::invalid_argument("input block " + std::to_string(k + 1) + " is singular");
    }
    sizes.push_back(input[k].rows());
    s_inverse.push_back(lu.inverse());
  }
  const auto tree = TreeTopology::chain(static_cast<int>(length));
  LevelParams<Scalar> p(tree, sizes, 1);
  for (std::size_t k = 0; k < length; ++k) {
    const int level = static_cast<int>(k);
    p.a(level, 0, 0) = s_inverse[k];
    if (k + 1 == length) continue;
    const auto &step = interaction[k];
    if (step.rows() != sizes[k + 1] || step.cols() != sizes[k]) {
      throw std::invalid_argument("interaction block " + std::to_string(k + 1) +
                                  " has the wrong shape");
    }
    p.c(level, 0, 0) = -s_inverse[k + 1] * step;
  }
  return p;
}

} // namespace myo
