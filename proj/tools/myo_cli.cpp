// Command-line front end: generate, verify, benchmark, flatten, gradcheck.

#include "myo/layer.hpp"
#include "myo/oracle.hpp"
#include "myo/params.hpp"
#include "myo/problem_file.hpp"
#include "myo/solver.hpp"
#include "myo/topology.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum ExitCode : int
{
  exit_pass = 0,
  exit_usage = 1,
  exit_singular = 2,
  exit_failed = 3,
};

class UsageError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
  // splitmix64 step
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Writes to the file at `path`, or stdout when empty.
class Output
{
public:
  explicit Output(const std::string &path)
  {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw UsageError("cannot open " + path + " for writing");
    }
  }
  std::ostream &stream() { return file_ ? *file_ : std::cout; }

private:
  std::unique_ptr<std::ofstream> file_;
};

struct GenOptions
{
  int arity = 2;
  std::int64_t leaves = 4;
  myo::Index block_size = 1;
  myo::Index heads = 1;
  myo::Index batch = 1;
  myo::Index rhs = 1;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenOptions &o)
{
  const auto tree = myo::build_perfect_tree(o.arity, o.leaves);
  std::vector<myo::Index> sizes(static_cast<std::size_t>(tree.depth()), o.block_size);
  auto params = myo::init_random_stable<double>(tree, sizes, o.heads, derive_seed(o.seed, 0), o.gamma);
  auto rhs = myo::random_rhs(params, tree, o.batch, o.rhs, derive_seed(o.seed, 1));
  myo::write_problem(o.out, myo::Problem{tree, std::move(params), std::move(rhs)});
  return exit_pass;
}

struct VerifyOptions
{
  std::string in;
  int max_dense = myo::oracle::max_dense_nodes;
  double tol = 1e-10;
};

int run_verify(const VerifyOptions &o)
{
  const auto problem = myo::read_problem(o.in);
  if (problem.tree.node_count() > o.max_dense) {
    throw UsageError("tree has " + std::to_string(problem.tree.node_count()) +
                     " nodes, above --max-dense " + std::to_string(o.max_dense));
  }
  myo::SolveStats stats;
  const auto x = myo::solve(problem.params, problem.tree, problem.rhs, &stats);
  const auto dense = myo::oracle::assemble_dense(problem.params, problem.tree);
  const auto reference = myo::oracle::dense_solve(dense, problem.tree, problem.rhs);

  const auto diff = myo::combine(1.0, x, -1.0, reference.x);
  const double scale = reference.x.max_abs();
  const double discrepancy = scale > 0 ? diff.max_abs() / scale : diff.max_abs();
  const auto applied = myo::oracle::dense_apply(dense, problem.tree, x);
  const double u_scale = problem.rhs.max_abs();
  const double residual = myo::combine(1.0, applied, -1.0, problem.rhs).max_abs() / (u_scale > 0 ? u_scale : 1.0);
  const bool pass = discrepancy <= o.tol;

  std::printf("nodes %d\nlevel_steps %d\nmax_relative_discrepancy %.3e\nrelative_residual %.3e\n"
              "tolerance %.3e\n%s\n",
              problem.tree.node_count(), stats.level_steps(), discrepancy, residual, o.tol,
              pass ? "PASS" : "FAIL");
  return pass ? exit_pass : exit_failed;
}

struct BenchOptions
{
  int arity = 4;
  myo::Index block_size = 1;
  std::vector<std::int64_t> sizes{4, 16, 64, 256, 1024};
  int repeats = 3;
  myo::Index heads = 1;
  myo::Index batch = 1;
  myo::Index rhs = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int run_bench(const BenchOptions &o)
{
  if (o.repeats < 1) throw UsageError("--repeats must be positive");
  Output out(o.out);
  auto &csv = out.stream();
  csv << "leaves,L,depth,wall_time_s,level_steps,block_op_count,peak_aux_bytes\n";
  for (const auto leaves : o.sizes) {
    const auto tree = myo::build_perfect_tree(o.arity, leaves);
    std::vector<myo::Index> sizes(static_cast<std::size_t>(tree.depth()), o.block_size);
    const auto params = myo::init_random_stable<double>(tree, sizes, o.heads, derive_seed(o.seed, 0), 0.5);
    const auto rhs = myo::random_rhs(params, tree, o.batch, o.rhs, derive_seed(o.seed, 1));
    double total = 0;
    myo::SolveStats stats;
    for (int rep = 0; rep < o.repeats; ++rep) {
      stats = {};
      const auto start = std::chrono::steady_clock::now();
      const auto x = myo::solve(params, tree, rhs, &stats);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    csv << leaves << ',' << tree.node_count() << ',' << tree.depth() << ',' << total / o.repeats << ','
        << stats.level_steps() << ',' << stats.block_ops << ',' << stats.peak_aux_bytes << '\n';
  }
  return exit_pass;
}

struct FlattenOptions
{
  int height = 4;
  int width = 4;
  std::string order = "morton";
  std::string out;
};

int run_flatten(const FlattenOptions &o)
{
  const myo::GridShape grid{o.height, o.width};
  const auto order = o.order == "morton" ? myo::GridOrder::morton : myo::GridOrder::snake;
  std::ostringstream lines;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      lines << x << ' ' << y << ' ' << myo::grid_position(x, y, grid, order) << '\n';
    }
  }
  Output out(o.out);
  out.stream() << lines.str();
  return exit_pass;
}

struct GradcheckOptions
{
  std::string in;
  double eps = 1e-5;
  double tol = 1e-5;
  std::string loss = "sum";
  std::uint64_t seed = 0;
  myo::Index max_entries = 10000;
};

int run_gradcheck(const GradcheckOptions &o)
{
  const auto problem = myo::read_problem(o.in);
  const auto entries = problem.params.scalar_count() + problem.rhs.scalar_count();
  if (entries > o.max_entries) {
    throw UsageError("problem has " + std::to_string(entries) + " differentiable entries, above the " +
                     std::to_string(o.max_entries) + " limit for finite differences");
  }
  // loss = <g, x>; "sum" uses g = 1.
  auto g = myo::RightHandSide<double>::like(problem.params, problem.tree, problem.rhs.batch(),
                                            problem.rhs.right_parts());
  if (o.loss == "sum") {
    for (int l = 0; l < g.levels(); ++l) {
      for (double &v : g.level(l).values()) v = 1.0;
    }
  } else {
    g = myo::random_rhs(problem.params, problem.tree, problem.rhs.batch(), problem.rhs.right_parts(),
                        derive_seed(o.seed, 2));
  }
  const auto loss = [&g](const myo::RightHandSide<double> &x) {
    double total = 0;
    for (int l = 0; l < x.levels(); ++l) {
      const auto xs = x.level(l).values();
      const auto gs = g.level(l).values();
      for (std::size_t i = 0; i < xs.size(); ++i) total += gs[i] * xs[i];
    }
    return total;
  };
  const auto x = myo::solve(problem.params, problem.tree, problem.rhs);
  const auto analytic = myo::vjp(problem.params, problem.tree, x, g);
  const auto estimate = myo::oracle::finite_diff_grad<double>(problem.params, problem.tree, problem.rhs, loss, o.eps);
  const double error = myo::oracle::gradient_discrepancy(analytic, estimate);
  const bool pass = error <= o.tol;
  std::printf("entries %lld\neps %.3e\nmax_relative_error %.3e\ntolerance %.3e\n%s\n",
              static_cast<long long>(entries), o.eps, error, o.tol, pass ? "PASS" : "FAIL");
  return pass ? exit_pass : exit_failed;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Block tree-structured linear systems: generation, solving and verification"};
  app.require_subcommand(1);

  GenOptions gen;
  auto *gen_cmd = app.add_subcommand("gen", "Write a random stable problem file");
  gen_cmd->add_option("--arity", gen.arity, "Children per parent")->required();
  gen_cmd->add_option("--leaves", gen.leaves, "Leaf count, a power of the arity")->required();
  gen_cmd->add_option("--block-size", gen.block_size, "Block size on every level")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--heads", gen.heads)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--batch", gen.batch)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--rhs", gen.rhs, "Right parts per node")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--gamma", gen.gamma, "Coupling scale")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out)->required();

  VerifyOptions verify;
  auto *verify_cmd = app.add_subcommand("verify", "Compare the tree solve with a dense solve");
  verify_cmd->add_option("--in", verify.in)->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--max-dense", verify.max_dense, "Largest node count for the dense oracle");
  verify_cmd->add_option("--tol", verify.tol, "Relative discrepancy tolerance");

  BenchOptions bench;
  auto *bench_cmd = app.add_subcommand("bench", "Time solves over a range of tree sizes");
  bench_cmd->add_option("--arity", bench.arity);
  bench_cmd->add_option("--block-size", bench.block_size)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--sizes", bench.sizes, "Leaf counts")->delimiter(',');
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--heads", bench.heads)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--batch", bench.batch)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--rhs", bench.rhs)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("--out", bench.out, "CSV path (stdout if omitted)");

  FlattenOptions flatten;
  auto *flatten_cmd = app.add_subcommand("flatten", "Print the pixel-to-sequence map of a grid");
  flatten_cmd->add_option("--height", flatten.height)->required();
  flatten_cmd->add_option("--width", flatten.width)->required();
  flatten_cmd->add_option("--order", flatten.order)->check(CLI::IsMember({"morton", "snake"}));
  flatten_cmd->add_option("--out", flatten.out, "Output path (stdout if omitted)");

  GradcheckOptions grad;
  auto *grad_cmd = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with finite differences");
  grad_cmd->add_option("--in", grad.in)->required()->check(CLI::ExistingFile);
  grad_cmd->add_option("--eps", grad.eps)->check(CLI::PositiveNumber);
  grad_cmd->add_option("--tol", grad.tol);
  grad_cmd->add_option("--loss", grad.loss, "sum or random")->check(CLI::IsMember({"sum", "random"}));
  grad_cmd->add_option("--seed", grad.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? exit_pass : exit_usage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*verify_cmd) return run_verify(verify);
    if (*bench_cmd) return run_bench(bench);
    if (*flatten_cmd) return run_flatten(flatten);
    if (*grad_cmd) return run_gradcheck(grad);
  } catch (const myo::SingularBlockError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_singular;
  } catch (const myo::oracle::SingularMatrixError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_singular;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_usage;
  }
  return exit_usage;
}
