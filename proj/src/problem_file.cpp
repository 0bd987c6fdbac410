#include "myo/problem_file.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace myo {

namespace {

constexpr const char *magic = "MYO-PROBLEM";

std::uint64_t to_little_endian(std::uint64_t v)
{
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

void write_values(std::ostream &out, std::span<const double> values)
{
  for (double v : values) {
    const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    out.write(bytes, 8);
  }
}

void read_values(std::istream &in, std::span<double> values)
{
  for (double &v : values) {
    char bytes[8];
    if (!in.read(bytes, 8)) throw FormatError("payload ends early");
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes, 8);
    v = std::bit_cast<double>(to_little_endian(bits));
  }
}

template <typename F>
void for_each_array(const LevelParams<double> &params, const RightHandSide<double> &rhs, F &&f)
{
  for (int l = 0; l < params.levels(); ++l) {
    f(params.A(l).values());
    if (l + 1 < params.levels()) {
      f(params.B(l).values());
      f(params.C(l).values());
    }
    f(rhs.level(l).values());
  }
}

nlohmann::json tree_header(const TreeTopology &tree)
{
  if (const auto arity = tree.perfect_arity()) {
    return {{"arity", *arity}, {"leaf_count", tree.level_size(0)}};
  }
  return {{"level_sizes", tree.level_sizes()}, {"split_sizes", tree.split_sizes()}};
}

TreeTopology tree_from_header(const nlohmann::json &j)
{
  if (j.contains("arity")) {
    return build_perfect_tree(j.at("arity").get<int>(), j.at("leaf_count").get<std::int64_t>());
  }
  const auto levels = j.at("level_sizes").get<std::vector<int>>();
  return TreeTopology::from_levels(levels, j.at("split_sizes").get<std::vector<std::vector<int>>>());
}

} // namespace

void write_problem(std::ostream &out, const Problem &problem)
{
  check_rhs_matches(problem.params, problem.tree, problem.rhs);
  const Index values = problem.params.scalar_count() + problem.rhs.scalar_count();
  const nlohmann::json header = {
      {"format_version", problem_format_version},
      {"tree", tree_header(problem.tree)},
      {"block_sizes", problem.params.block_sizes()},
      {"heads", problem.params.heads()},
      {"batch", problem.rhs.batch()},
      {"right_parts", problem.rhs.right_parts()},
      {"payload_values", values},
  };
  out << magic << '\n' << header.dump() << '\n';
  for_each_array(problem.params, problem.rhs, [&](auto values) { write_values(out, values); });
  if (!out) throw std::runtime_error("failed to write problem");
}

Problem read_problem(std::istream &in)
{
  std::string line;
  if (!std::getline(in, line) || line != magic) throw FormatError("missing MYO-PROBLEM magic line");
  if (!std::getline(in, line)) throw FormatError("missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != problem_format_version) {
      throw FormatError("unsupported format version " + std::to_string(version));
    }
    auto tree = tree_from_header(header.at("tree"));
    LevelParams<double> params(tree, header.at("block_sizes").get<std::vector<Index>>(),
                               header.at("heads").get<Index>());
    RightHandSide<double> rhs = RightHandSide<double>::like(params, tree, header.at("batch").get<Index>(),
                                                            header.at("right_parts").get<Index>());
    const auto declared = header.at("payload_values").get<Index>();
    if (declared != params.scalar_count() + rhs.scalar_count()) {
      throw FormatError("header declares " + std::to_string(declared) + " values, shapes need " +
                        std::to_string(params.scalar_count() + rhs.scalar_count()));
    }
    auto mutable_arrays = [&](auto &&f) {
      for (int l = 0; l < params.levels(); ++l) {
        f(params.A(l).values());
        if (l + 1 < params.levels()) {
          f(params.B(l).values());
          f(params.C(l).values());
        }
        f(rhs.level(l).values());
      }
    };
    mutable_arrays([&](std::span<double> values) { read_values(in, values); });
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
    return {std::move(tree), std::move(params), std::move(rhs)};
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad header field: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw FormatError(std::string("inconsistent header: ") + e.what());
  }
}

void write_problem(const std::filesystem::path &path, const Problem &problem)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_problem(out, problem);
}

Problem read_problem(const std::filesystem::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_problem(in);
}

} // namespace myo
