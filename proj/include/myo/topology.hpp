#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace myo {

/// Rooted tree described by its reversed BFS levels.
///
/// Level 0 holds the leaves of the deepest branch, level `depth()-1` holds the
/// root. Nodes inside a level are numbered in BFS order and the children of a
/// common parent occupy a contiguous range of the child level. The whole
/// structure is fixed by the per-parent group sizes, so a topology is cheap to
/// copy and immutable once built.
class TreeTopology
{
public:
  /// `split_sizes[p-1]` lists, for every node of level `p` (p >= 1), the
  /// number of its children in level `p-1`. Level sizes follow from the splits.
  static TreeTopology from_splits(std::vector<std::vector<int>> split_sizes);

  /// Validating constructor for the explicit `{level_sizes, split_sizes}` form.
  static TreeTopology from_levels(std::span<const int> level_sizes,
                                  std::vector<std::vector<int>> split_sizes);

  /// Chain of `length` nodes, node 0 is the only leaf.
  static TreeTopology chain(int length);

  int depth() const { return static_cast<int>(level_sizes_.size()); }
  int level_size(int level) const { return level_sizes_.at(level); }
  const std::vector<int> &level_sizes() const { return level_sizes_; }
  /// Child-group sizes of the parents in `parent_level` (>= 1).
  std::span<const int> splits(int parent_level) const { return split_sizes_.at(parent_level - 1); }
  const std::vector<std::vector<int>> &split_sizes() const { return split_sizes_; }
  int node_count() const { return total_; }

  /// Index in level `level+1` of the parent of node `node` of level `level`.
  int parent(int level, int node) const { return parents_.at(level).at(node); }
  /// First child of `node` (level `level` >= 1) and number of children.
  int first_child(int level, int node) const { return child_offsets_.at(level - 1).at(node); }
  int child_count(int level, int node) const { return split_sizes_.at(level - 1).at(node); }

  /// Offset of a level inside the concatenated BFS numbering (leaves first).
  int level_offset(int level) const { return level_offsets_.at(level); }
  int bfs_index(int level, int node) const { return level_offsets_.at(level) + node; }

  /// Arity if every parent has the same number of children and all leaves
  /// sit on level 0.
  std::optional<int> perfect_arity() const;

  friend bool operator==(const TreeTopology &a, const TreeTopology &b)
  {
    return a.split_sizes_ == b.split_sizes_ && a.level_sizes_ == b.level_sizes_;
  }

private:
  TreeTopology() = default;
  void index();

  std::vector<int> level_sizes_;
  std::vector<std::vector<int>> split_sizes_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> child_offsets_;
  std::vector<int> level_offsets_;
  int total_ = 0;
};

/// Topology built from an arbitrary parent array, together with the map from
/// BFS position back to the caller's node ids.
struct OrderedTree
{
  TreeTopology tree;
  /// `node_id[bfs_index]` is the caller's id of the node at that position.
  std::vector<int> node_id;
};

/// Builds a topology from `parent[v]` (-1 for the root). Levels count from the
/// root down, so a leaf that is not on the deepest layer lands on a higher
/// level with no children. Within each sibling group, nodes that have children
/// are placed before childless ones; the relative order is otherwise kept.
OrderedTree tree_from_parents(std::span<const int> parent);

/// Perfect `arity`-ary tree with `leaf_count` leaves.
TreeTopology build_perfect_tree(int arity, std::int64_t leaf_count);

struct GridShape
{
  int height = 0;
  int width = 0;
};

/// Quadtree over a 2^d x 2^d grid; leaf i corresponds to the pixel with
/// `morton_index == i + 1`.
TreeTopology build_quadtree(GridShape grid);

/// 1-based Z-order position of pixel (x, y). Bits of x fill the even bit
/// positions and bits of y the odd ones. Requires a power-of-two square grid.
std::int64_t morton_index(int x, int y, GridShape grid);

/// 1-based boustrophedon position: even rows run left to right, odd rows
/// right to left.
std::int64_t snake_index(int x, int y, GridShape grid);

/// Pixel coordinates of a 1-based Morton position (inverse of morton_index).
std::pair<int, int> morton_coordinates(std::int64_t position, GridShape grid);

/// Depth-first post-order position (0-based) of every node, indexed by the
/// concatenated BFS numbering. Children are visited in BFS order.
std::vector<int> dfs_postorder_perm(const TreeTopology &tree);

} // namespace myo
