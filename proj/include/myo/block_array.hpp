#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <span>
#include <vector>

namespace myo {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A contiguous stack of equally shaped dense blocks.
///
/// Blocks are stored one after another, each in row-major order, so that a
/// whole BFS level of a tree lives in a single allocation. Leading batch, head
/// and node dimensions are flattened into the block index by the owner.
template <typename Scalar>
class BlockArray
{
public:
  using BlockMap = Eigen::Map<RowMajorMatrix<Scalar>>;
  using ConstBlockMap = Eigen::Map<const RowMajorMatrix<Scalar>>;

  BlockArray() = default;

  BlockArray(Index count, Index rows, Index cols)
    : count_(count), rows_(rows), cols_(cols),
      data_(static_cast<std::size_t>(count * rows * cols), Scalar(0))
  {
  }

  Index count() const { return count_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index block_size() const { return rows_ * cols_; }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  BlockMap block(Index i)
  {
    assert(i >= 0 && i < count_);
    return BlockMap(data_.data() + i * block_size(), rows_, cols_);
  }

  ConstBlockMap block(Index i) const
  {
    assert(i >= 0 && i < count_);
    return ConstBlockMap(data_.data() + i * block_size(), rows_, cols_);
  }

  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

  friend bool operator==(const BlockArray &, const BlockArray &) = default;

private:
  Index count_ = 0;
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Scalar> data_;
};

} // namespace myo
