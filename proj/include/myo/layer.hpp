#pragma once

#include "myo/params.hpp"
#include "myo/solver.hpp"
#include "myo/topology.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace myo {

/// What non-leaf nodes receive as input.
enum class VirtualInput
{
  zeros,
  mean_pool, ///< mean of the inputs of all level-0 leaves under the node
};

struct LayerConfig
{
  TreeTopology tree;
  std::vector<Index> block_sizes;
  Index heads = 1;
  VirtualInput virtual_input = VirtualInput::zeros;
  /// Number of BFS levels, counted from the root, averaged by aggregate_topk.
  int top_levels = 1;

  void validate() const
  {
    if (top_levels < 1 || top_levels > tree.depth()) {
      throw std::invalid_argument("aggregation depth must lie in [1, " + std::to_string(tree.depth()) +
                                  "], got " + std::to_string(top_levels));
    }
    if (static_cast<int>(block_sizes.size()) != tree.depth()) {
      throw std::invalid_argument("need one block size per level");
    }
    if (virtual_input == VirtualInput::mean_pool) {
      for (Index d : block_sizes) {
        if (d != block_sizes.front()) {
          throw std::invalid_argument("mean pooling needs the same block size on every level");
        }
      }
    }
  }
};

/// Input for every node: leaves get `leaf_inputs` (one row per leaf, in BFS
/// leaf order), other nodes follow the virtual-input policy. All heads see the
/// same input; batch and right parts are 1.
template <typename Scalar>
RightHandSide<Scalar> layer_input(const LayerConfig &config, const Matrix<Scalar> &leaf_inputs)
{
  config.validate();
  const auto &tree = config.tree;
  if (leaf_inputs.rows() != tree.level_size(0) || leaf_inputs.cols() != config.block_sizes.front()) {
    throw std::invalid_argument("expected " + std::to_string(tree.level_size(0)) + " leaf inputs of size " +
                                std::to_string(config.block_sizes.front()) + ", got " +
                                std::to_string(leaf_inputs.rows()) + "x" + std::to_string(leaf_inputs.cols()));
  }
  RightHandSide<Scalar> u(tree, config.block_sizes, 1, config.heads, 1);

  // Per level: summed leaf inputs and leaf counts under each node.
  std::vector<Matrix<Scalar>> sums{leaf_inputs.transpose()};
  std::vector<std::vector<Index>> counts{std::vector<Index>(static_cast<std::size_t>(tree.level_size(0)), 1)};
  if (config.virtual_input == VirtualInput::mean_pool) {
    for (int l = 1; l < tree.depth(); ++l) {
      Matrix<Scalar> s = Matrix<Scalar>::Zero(leaf_inputs.cols(), tree.level_size(l));
      std::vector<Index> c(static_cast<std::size_t>(tree.level_size(l)), 0);
      for (int child = 0; child < tree.level_size(l - 1); ++child) {
        const int p = tree.parent(l - 1, child);
        s.col(p) += sums.back().col(child);
        c[static_cast<std::size_t>(p)] += counts.back()[static_cast<std::size_t>(child)];
      }
      sums.push_back(std::move(s));
      counts.push_back(std::move(c));
    }
  }

  for (Index h = 0; h < config.heads; ++h) {
    for (int v = 0; v < tree.level_size(0); ++v) u.block(0, 0, h, v) = leaf_inputs.row(v).transpose();
    if (config.virtual_input == VirtualInput::zeros) continue;
    for (int l = 1; l < tree.depth(); ++l) {
      for (int v = 0; v < tree.level_size(l); ++v) {
        const Index n = counts[l][static_cast<std::size_t>(v)];
        if (n > 0) u.block(l, 0, h, v) = sums[l].col(v) / static_cast<Scalar>(n);
      }
    }
  }
  return u;
}

/// Layer output for every node: the solution of T x = u with u built by
/// layer_input.
template <typename Scalar>
RightHandSide<Scalar> forward(const LayerConfig &config, const LevelParams<Scalar> &params,
                              const Matrix<Scalar> &leaf_inputs)
{
  return solve(params, config.tree, layer_input(config, leaf_inputs));
}

/// Mean of the outputs of all nodes in the top `config.top_levels` levels.
/// One d x r block per (batch, head), index batch * heads + head.
template <typename Scalar>
BlockArray<Scalar> aggregate_topk(const RightHandSide<Scalar> &x, const LayerConfig &config)
{
  config.validate();
  const auto &tree = config.tree;
  const int top = tree.depth() - 1;
  const int lowest = top - config.top_levels + 1;
  const Index d = x.block_size(top);
  for (int l = lowest; l <= top; ++l) {
    if (x.block_size(l) != d) throw std::invalid_argument("aggregated levels differ in block size");
  }
  BlockArray<Scalar> out(x.batch() * x.heads(), d, x.right_parts());
  Index nodes = 0;
  for (int l = lowest; l <= top; ++l) nodes += tree.level_size(l);
  for (Index b = 0; b < x.batch(); ++b) {
    for (Index h = 0; h < x.heads(); ++h) {
      auto acc = out.block(b * x.heads() + h);
      for (int l = lowest; l <= top; ++l) {
        for (int v = 0; v < tree.level_size(l); ++v) acc += x.block(l, b, h, v);
      }
      acc /= static_cast<Scalar>(nodes);
    }
  }
  return out;
}

/// Solves a chain system carrying both couplings per edge (block
/// tridiagonal), using the tree solver on a chain topology.
template <typename Scalar>
RightHandSide<Scalar> bidirectional_chain_forward(const LevelParams<Scalar> &params,
                                                  const RightHandSide<Scalar> &u)
{
  for (int l = 0; l < params.levels(); ++l) {
    if (params.nodes(l) != 1) throw std::invalid_argument("bidirectional forward needs a chain");
  }
  return solve(params, TreeTopology::chain(params.levels()), u);
}

enum class GridOrder
{
  morton,
  snake,
};

/// 1-based sequence position of pixel (x, y) under `order`.
inline std::int64_t grid_position(int x, int y, GridShape grid, GridOrder order)
{
  return order == GridOrder::morton ? morton_index(x, y, grid) : snake_index(x, y, grid);
}

/// Reorders raster pixels (row y * width + x) into sequence order.
template <typename Scalar>
Matrix<Scalar> flatten_grid(const Matrix<Scalar> &raster, GridShape grid, GridOrder order)
{
  const Index cells = static_cast<Index>(grid.height) * grid.width;
  if (raster.rows() != cells) {
    throw std::invalid_argument("raster has " + std::to_string(raster.rows()) + " rows for " +
                                std::to_string(cells) + " pixels");
  }
  Matrix<Scalar> seq(raster.rows(), raster.cols());
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      seq.row(grid_position(x, y, grid, order) - 1) = raster.row(static_cast<Index>(y) * grid.width + x);
    }
  }
  return seq;
}

} // namespace myo
