#include "myo/topology.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <stdexcept>
#include <string>

namespace myo {

namespace {

bool is_power_of_two(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

void check_grid_coordinates(int x, int y, GridShape grid)
{
  if (x < 0 || x >= grid.width || y < 0 || y >= grid.height) {
    throw std::out_of_range("pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                            ") outside " + std::to_string(grid.height) + "x" +
                            std::to_string(grid.width) + " grid");
  }
}

void check_morton_grid(GridShape grid)
{
  if (grid.height != grid.width || !is_power_of_two(grid.width)) {
    throw std::invalid_argument("Morton order needs a square power-of-two grid, got " +
                                std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
}

} // namespace

TreeTopology TreeTopology::from_splits(std::vector<std::vector<int>> split_sizes)
{
  TreeTopology t;
  const auto parent_levels = split_sizes.size();
  t.level_sizes_.resize(parent_levels + 1);
  if (parent_levels == 0) {
    t.level_sizes_[0] = 1;
  } else {
    for (std::size_t p = 0; p < parent_levels; ++p) {
      for (int s : split_sizes[p]) {
        if (s < 0) throw std::invalid_argument("negative child-group size");
      }
      t.level_sizes_[p + 1] = static_cast<int>(split_sizes[p].size());
    }
    t.level_sizes_[0] = std::accumulate(split_sizes[0].begin(), split_sizes[0].end(), 0);
    for (std::size_t p = 1; p < parent_levels; ++p) {
      const int children = std::accumulate(split_sizes[p].begin(), split_sizes[p].end(), 0);
      if (children != t.level_sizes_[p]) {
        throw std::invalid_argument("child groups of level " + std::to_string(p + 2) + " sum to " +
                                    std::to_string(children) + " but level " +
                                    std::to_string(p + 1) + " has " +
                                    std::to_string(t.level_sizes_[p]) + " nodes");
      }
    }
  }
  for (std::size_t l = 0; l < t.level_sizes_.size(); ++l) {
    if (t.level_sizes_[l] <= 0) {
      throw std::invalid_argument("level " + std::to_string(l + 1) + " is empty");
    }
  }
  if (t.level_sizes_.back() != 1) {
    throw std::invalid_argument("top level must hold exactly one root, found " +
                                std::to_string(t.level_sizes_.back()));
  }
  t.split_sizes_ = std::move(split_sizes);
  t.index();
  return t;
}

TreeTopology TreeTopology::from_levels(std::span<const int> level_sizes,
                                       std::vector<std::vector<int>> split_sizes)
{
  if (level_sizes.empty()) throw std::invalid_argument("topology needs at least one level");
  if (split_sizes.size() + 1 != level_sizes.size()) {
    throw std::invalid_argument("expected " + std::to_string(level_sizes.size() - 1) +
                                " split lists, got " + std::to_string(split_sizes.size()));
  }
  auto t = from_splits(std::move(split_sizes));
  if (!std::equal(level_sizes.begin(), level_sizes.end(), t.level_sizes_.begin(),
                  t.level_sizes_.end())) {
    throw std::invalid_argument("level sizes disagree with child-group sizes");
  }
  return t;
}

TreeTopology TreeTopology::chain(int length)
{
  if (length < 1) throw std::invalid_argument("chain length must be positive");
  return from_splits(std::vector<std::vector<int>>(static_cast<std::size_t>(length - 1), {1}));
}

void TreeTopology::index()
{
  const int d = depth();
  level_offsets_.assign(static_cast<std::size_t>(d), 0);
  total_ = 0;
  for (int l = 0; l < d; ++l) {
    level_offsets_[l] = total_;
    total_ += level_sizes_[l];
  }
  parents_.assign(static_cast<std::size_t>(d), {});
  child_offsets_.assign(split_sizes_.size(), {});
  for (int p = 1; p < d; ++p) {
    auto &offsets = child_offsets_[p - 1];
    auto &parents = parents_[p - 1];
    offsets.resize(split_sizes_[p - 1].size());
    parents.reserve(static_cast<std::size_t>(level_sizes_[p - 1]));
    int next = 0;
    for (std::size_t v = 0; v < split_sizes_[p - 1].size(); ++v) {
      offsets[v] = next;
      next += split_sizes_[p - 1][v];
      parents.insert(parents.end(), static_cast<std::size_t>(split_sizes_[p - 1][v]),
                     static_cast<int>(v));
    }
  }
}

std::optional<int> TreeTopology::perfect_arity() const
{
  if (split_sizes_.empty()) return std::nullopt;
  const int k = split_sizes_.front().front();
  for (const auto &level : split_sizes_) {
    if (std::any_of(level.begin(), level.end(), [k](int s) { return s != k; })) return std::nullopt;
  }
  if (k < 2) return std::nullopt;
  return k;
}

OrderedTree tree_from_parents(std::span<const int> parent)
{
  const int n = static_cast<int>(parent.size());
  if (n == 0) throw std::invalid_argument("empty parent array");
  std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
  int root = -1;
  for (int v = 0; v < n; ++v) {
    const int p = parent[v];
    if (p == -1) {
      if (root != -1) throw std::invalid_argument("parent array has more than one root");
      root = v;
    } else if (p < 0 || p >= n || p == v) {
      throw std::invalid_argument("invalid parent " + std::to_string(p) + " for node " +
                                  std::to_string(v));
    } else {
      children[p].push_back(v);
    }
  }
  if (root == -1) throw std::invalid_argument("parent array has no root");

  // Walk from the root down, one depth layer at a time.
  std::vector<std::vector<int>> layers{{root}};
  std::vector<std::vector<int>> splits_top_down;
  int reached = 1;
  while (true) {
    std::vector<int> next;
    std::vector<int> split;
    for (int v : layers.back()) {
      auto group = children[v];
      std::stable_partition(group.begin(), group.end(),
                            [&](int c) { return !children[c].empty(); });
      split.push_back(static_cast<int>(group.size()));
      next.insert(next.end(), group.begin(), group.end());
    }
    if (next.empty()) break;
    reached += static_cast<int>(next.size());
    if (reached > n) break;
    splits_top_down.push_back(std::move(split));
    layers.push_back(std::move(next));
  }
  if (reached != n) throw std::invalid_argument("parent array contains a cycle");

  std::reverse(splits_top_down.begin(), splits_top_down.end());
  OrderedTree out{TreeTopology::from_splits(std::move(splits_top_down)), {}};
  out.node_id.reserve(static_cast<std::size_t>(n));
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    out.node_id.insert(out.node_id.end(), it->begin(), it->end());
  }
  return out;
}

TreeTopology build_perfect_tree(int arity, std::int64_t leaf_count)
{
  if (arity < 2) throw std::invalid_argument("arity must be at least 2");
  if (leaf_count < 1) throw std::invalid_argument("leaf count must be positive");
  std::int64_t remaining = leaf_count;
  int levels = 1;
  while (remaining % arity == 0) {
    remaining /= arity;
    ++levels;
  }
  if (remaining != 1) {
    throw std::invalid_argument("leaf count " + std::to_string(leaf_count) +
                                " is not a power of arity " + std::to_string(arity));
  }
  std::vector<std::vector<int>> splits;
  std::int64_t parents = leaf_count / arity;
  for (int p = 1; p < levels; ++p, parents /= arity) {
    splits.emplace_back(static_cast<std::size_t>(parents), arity);
  }
  return TreeTopology::from_splits(std::move(splits));
}

TreeTopology build_quadtree(GridShape grid)
{
  check_morton_grid(grid);
  return build_perfect_tree(4, static_cast<std::int64_t>(grid.width) * grid.height);
}

std::int64_t morton_index(int x, int y, GridShape grid)
{
  check_morton_grid(grid);
  check_grid_coordinates(x, y, grid);
  std::uint64_t code = 0;
  for (int bit = 0; bit < 31; ++bit) {
    code |= static_cast<std::uint64_t>((x >> bit) & 1) << (2 * bit);
    code |= static_cast<std::uint64_t>((y >> bit) & 1) << (2 * bit + 1);
  }
  return static_cast<std::int64_t>(code) + 1;
}

std::pair<int, int> morton_coordinates(std::int64_t position, GridShape grid)
{
  check_morton_grid(grid);
  const std::int64_t cells = static_cast<std::int64_t>(grid.width) * grid.height;
  if (position < 1 || position > cells) {
    throw std::out_of_range("Morton position " + std::to_string(position) + " outside grid");
  }
  const auto code = static_cast<std::uint64_t>(position - 1);
  int x = 0;
  int y = 0;
  for (int bit = 0; bit < 31; ++bit) {
    x |= static_cast<int>((code >> (2 * bit)) & 1) << bit;
    y |= static_cast<int>((code >> (2 * bit + 1)) & 1) << bit;
  }
  return {x, y};
}

std::int64_t snake_index(int x, int y, GridShape grid)
{
  if (grid.width <= 0 || grid.height <= 0) throw std::invalid_argument("empty grid");
  check_grid_coordinates(x, y, grid);
  const std::int64_t row = static_cast<std::int64_t>(y) * grid.width;
  return (y % 2 == 0) ? row + x + 1 : row + (grid.width - x);
}

std::vector<int> dfs_postorder_perm(const TreeTopology &tree)
{
  const int d = tree.depth();
  std::vector<int> subtree(static_cast<std::size_t>(tree.node_count()), 1);
  for (int l = 1; l < d; ++l) {
    for (int v = 0; v < tree.level_size(l); ++v) {
      const int first = tree.first_child(l, v);
      for (int c = first; c < first + tree.child_count(l, v); ++c) {
        subtree[tree.bfs_index(l, v)] += subtree[tree.bfs_index(l - 1, c)];
      }
    }
  }
  // start[v]: first post-order slot used by v's subtree.
  std::vector<int> start(subtree.size(), 0);
  std::vector<int> perm(subtree.size(), 0);
  for (int l = d - 1; l >= 0; --l) {
    for (int v = 0; v < tree.level_size(l); ++v) {
      const int id = tree.bfs_index(l, v);
      perm[id] = start[id] + subtree[id] - 1;
      if (l == 0) continue;
      int next = start[id];
      const int first = tree.first_child(l, v);
      for (int c = first; c < first + tree.child_count(l, v); ++c) {
        const int cid = tree.bfs_index(l - 1, c);
        start[cid] = next;
        next += subtree[cid];
      }
    }
  }
  return perm;
}

} // namespace myo
