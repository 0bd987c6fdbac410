#pragma once

#include "myo/params.hpp"
#include "myo/topology.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

namespace myo {

/// A complete tree system: topology, parameters and right-hand side.
struct Problem
{
  TreeTopology tree;
  LevelParams<double> params;
  RightHandSide<double> rhs;
};

class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int problem_format_version = 1;

/// Problem file layout:
///
///   MYO-PROBLEM\n
///   <one-line JSON header>\n
///   <little-endian float64 payload>
///
/// The header holds format_version, tree ({arity, leaf_count} for perfect
/// trees, otherwise {level_sizes, split_sizes}), block_sizes, heads, batch,
/// right_parts and payload_values. The payload lists, for levels 1..D in
/// order, A, then B and C (absent on the root level), then u. Blocks are
/// row-major; A/B/C are node-major within each head, u is node-major within
/// each (batch, head).
void write_problem(std::ostream &out, const Problem &problem);
Problem read_problem(std::istream &in);

void write_problem(const std::filesystem::path &path, const Problem &problem);
Problem read_problem(const std::filesystem::path &path);

} // namespace myo
