// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "myo/layer.hpp"
#include "myo/oracle.hpp"
#include "myo/solver.hpp"
#include "support/random_problems.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace myo;
using testing::random_general_params;
using testing::random_matrix;
using testing::relative_error;

struct Outcome
{
  bool pass;
  std::string detail;
};

std::string fmt(const char *format, auto... args)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

/// Uniform integer in [lo, hi].
int pick(UniformSource &rng, int lo, int hi)
{
  const double unit = (rng() + 1.0) / 2.0;
  return std::min(hi, lo + static_cast<int>(unit * (hi - lo + 1)));
}

template <typename T>
T pick(UniformSource &rng, const std::vector<T> &options)
{
  return options[static_cast<std::size_t>(pick(rng, 0, static_cast<int>(options.size()) - 1))];
}

std::vector<Index> uniform_sizes(const TreeTopology &tree, Index d)
{
  return std::vector<Index>(static_cast<std::size_t>(tree.depth()), d);
}

/// Random rooted tree on `nodes` nodes: node i attaches to a uniform earlier node.
TreeTopology random_tree(UniformSource &rng, int nodes)
{
  std::vector<int> parent{-1};
  for (int i = 1; i < nodes; ++i) parent.push_back(pick(rng, 0, i - 1));
  return tree_from_parents(parent).tree;
}

double max_abs_diff(const Matrix<double> &a, const Matrix<double> &b) { return (a - b).cwiseAbs().maxCoeff(); }

Outcome oracle_equivalence()
{
  const auto start = std::chrono::steady_clock::now();
  UniformSource rng(1001);
  double worst_error = 0;
  double worst_residual = 0;
  int instances = 0;
  for (int family = 0; family < 3; ++family) {
    for (int i = 0; i < 100; ++i) {
      const auto tree = family == 0   ? TreeTopology::chain(pick(rng, 2, 64))
                        : family == 1 ? build_perfect_tree(2, std::int64_t{1} << pick(rng, 1, 8))
                                      : build_perfect_tree(4, std::int64_t{1} << (2 * pick(rng, 1, 4)));
      const Index d = pick<Index>(rng, {1, 2, 4});
      const Index heads = pick<Index>(rng, {1, 2});
      const Index r = pick<Index>(rng, {1, 3});
      const auto seed = static_cast<std::uint64_t>(10000 * family + i);
      // Alternate general non-symmetric blocks with the stable parametrization.
      const auto params = i % 2 == 0 ? random_general_params(tree, uniform_sizes(tree, d), heads, seed, 0.9)
                                     : init_random_stable<double>(tree, uniform_sizes(tree, d), heads, seed, 1.0);
      const auto u = random_rhs(params, tree, 1, r, seed + 1);
      const auto x = solve(params, tree, u);
      const auto reference = oracle::dense_solve(oracle::assemble_dense(params, tree), tree, u).x;
      worst_error = std::max(worst_error, relative_error(x, reference));
      const double residual = combine(1.0, apply_system(params, tree, x), -1.0, u).max_abs() / u.max_abs();
      worst_residual = std::max(worst_residual, residual);
      ++instances;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst_error <= 1e-10 && worst_residual <= 1e-9 && seconds < 120.0,
          fmt("%d instances, max relative error %.2e (<= 1e-10), max relative residual %.2e (<= 1e-9), %.1f s (< 120 s)",
              instances, worst_error, worst_residual, seconds)};
}

Outcome ssm_special_case()
{
  UniformSource rng(2002);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const int length = pick(rng, 2, 128);
    const Index d = i % 2 == 0 ? 1 : pick(rng, 2, 4);
    std::vector<Matrix<double>> input;
    std::vector<Matrix<double>> interaction;
    std::vector<Matrix<double>> u;
    for (int k = 0; k < length; ++k) {
      Matrix<double> s = random_matrix(d, d, rng, 0.3 / d);
      s.diagonal().array() += 1.0 + 0.5 * rng();
      input.push_back(s);
      u.push_back(random_matrix(d, 1, rng));
      if (k + 1 < length) interaction.push_back(random_matrix(d, d, rng, 0.95 / d));
    }
    const auto reference = oracle::ssm_reference<double>(interaction, input, u);
    const auto params = ssm_to_chain<double>(interaction, input);
    const auto tree = TreeTopology::chain(length);
    auto rhs = RightHandSide<double>::like(params, tree, 1, 1);
    for (int k = 0; k < length; ++k) rhs.block(k, 0, 0, 0) = u[static_cast<std::size_t>(k)];
    const auto x = solve(params, tree, rhs);
    double scale = 0;
    double diff = 0;
    for (int k = 0; k < length; ++k) {
      const auto &ref = reference[static_cast<std::size_t>(k)];
      scale = std::max(scale, ref.cwiseAbs().maxCoeff());
      diff = std::max(diff, max_abs_diff(x.block(k, 0, 0, 0), ref));
    }
    worst = std::max(worst, diff / std::max(scale, 1.0));
  }
  return {worst <= 1e-12, fmt("50 SSMs (scalar and block, L <= 128), max relative deviation %.2e (<= 1e-12)", worst)};
}

Outcome chain_closed_form_inverse()
{
  UniformSource rng(3003);
  double worst = 0;
  int checked = 0;
  for (int length : {2, 3, 5, 8, 16, 31, 64}) {
    for (Index d : {1, 2, 3}) {
      const auto tree = TreeTopology::chain(length);
      LevelParams<double> p(tree, uniform_sizes(tree, d), 1);
      std::vector<Matrix<double>> sub;
      for (int k = 0; k < length; ++k) {
        p.a(k, 0, 0).setIdentity();
        if (k + 1 == length) continue;
        sub.push_back(random_matrix(d, d, rng, 1.0 / d));
        p.c(k, 0, 0) = sub.back();
      }
      const auto inverse = oracle::dense_inverse(oracle::assemble_dense(p, tree));
      const double scale = std::max(1.0, inverse.cwiseAbs().maxCoeff());
      for (int i = 0; i < length; ++i) {
        for (int j = 0; j < length; ++j) {
          const auto entry = oracle::chain_inverse_entry<double>(sub, i, j, d);
          worst = std::max(worst, max_abs_diff(inverse.block(d * i, d * j, d, d), entry) / scale);
          ++checked;
        }
      }
    }
  }
  return {worst <= 1e-12, fmt("%d blocks over L <= 64, max deviation %.2e (<= 1e-12)", checked, worst)};
}

Outcome bidirectional_factorization()
{
  UniformSource rng(4004);
  double worst_lu = 0;
  double worst_sweep = 0;
  for (int i = 0; i < 50; ++i) {
    const int length = pick(rng, 2, 64);
    const Index d = pick(rng, 1, 4);
    const auto tree = TreeTopology::chain(length);
    const auto p = random_general_params(tree, uniform_sizes(tree, d), 1, 4100 + i, 0.9);
    const auto f = oracle::tridiag_bidiagonal_factor(p);
    const auto t = oracle::assemble_dense(p, tree).per_head[0];
    worst_lu = std::max(worst_lu, max_abs_diff(f.dense_lower() * f.dense_upper(), t) / t.cwiseAbs().maxCoeff());

    const auto u = random_rhs(p, tree, 1, 2, 4200 + i);
    std::vector<Matrix<double>> rhs;
    for (int k = 0; k < length; ++k) rhs.emplace_back(u.block(k, 0, 0, 0));
    std::vector<Matrix<double>> sweep;
    f.solve(rhs, &sweep);
    const auto x = bidirectional_chain_forward(p, u);
    double diff = 0;
    for (int k = 0; k < length; ++k) diff = std::max(diff, max_abs_diff(sweep[static_cast<std::size_t>(k)], x.block(k, 0, 0, 0)));
    worst_sweep = std::max(worst_sweep, diff / x.max_abs());
  }
  return {worst_lu <= 1e-12 && worst_sweep <= 1e-10,
          fmt("50 systems, LU reconstruction %.2e (<= 1e-12), two-sweep vs tree solve %.2e (<= 1e-10)", worst_lu,
              worst_sweep)};
}

Outcome gauge_invariance()
{
  UniformSource rng(5005);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const int k = pick(rng, 2, 4);
    const auto tree = i % 2 == 0 ? random_tree(rng, pick(rng, 2, 60)) : build_perfect_tree(k, k * k);
    const Index d = pick(rng, 1, 4);
    const auto p = random_general_params(tree, uniform_sizes(tree, d), 2, 5100 + i);
    const auto u = random_rhs(p, tree, 2, 2, 5200 + i);
    const auto gauge = testing::random_gauge(p, 5300 + i);
    const auto x = solve(p, tree, u);
    const auto gx = solve(apply_gauge(p, tree, gauge), tree, scale_rhs(u, gauge));
    worst = std::max(worst, relative_error(gx, x));
  }
  return {worst <= 1e-10, fmt("20 gauges, max relative deviation %.2e (<= 1e-10)", worst)};
}

Outcome gradient_correctness()
{
  UniformSource rng(6006);
  const std::vector<TreeTopology> trees{TreeTopology::chain(31),      build_perfect_tree(2, 16),
                                        build_perfect_tree(3, 9),     build_perfect_tree(4, 16),
                                        random_tree(rng, 31),         random_tree(rng, 12),
                                        TreeTopology::chain(2)};
  double worst_fd = 0;
  double worst_dot = 0;
  std::uint64_t seed = 6100;
  for (const auto &tree : trees) {
    const auto sizes = uniform_sizes(tree, 1);
    const auto p = ++seed % 2 == 0 ? random_general_params(tree, sizes, 1, seed, 0.9)
                                   : init_random_stable<double>(tree, sizes, 1, seed, 1.0);
    const auto u = random_rhs(p, tree, 1, 1, ++seed);
    const auto g = random_rhs(p, tree, 1, 1, ++seed);
    const auto loss = [&g](const RightHandSide<double> &x) { return testing::dot(g, x); };
    const auto x = solve(p, tree, u);
    const auto analytic = vjp(p, tree, x, g);
    const auto fd = oracle::finite_diff_grad<double>(p, tree, u, loss, 1e-5);
    worst_fd = std::max(worst_fd, oracle::gradient_discrepancy(analytic, fd));

    const auto direction = testing::random_direction(p, ++seed);
    const double forward = testing::dot(g, jvp(p, tree, x, direction));
    const double reverse = testing::dot(analytic.params, direction);
    worst_dot = std::max(worst_dot, std::abs(forward - reverse) / std::max(std::abs(forward), 1e-300));
  }
  return {worst_fd < 1e-5 && worst_dot < 1e-8,
          fmt("%zu trees (L <= 31, d = 1), vjp vs finite differences %.2e (< 1e-5), dot-product test %.2e (< 1e-8)",
              trees.size(), worst_fd, worst_dot)};
}

Outcome complexity_properties()
{
  bool steps_ok = true;
  int step_checks = 0;
  const auto stats_of = [](const TreeTopology &tree, Index d) {
    const auto p = init_random_stable<double>(tree, uniform_sizes(tree, d), 1, 7, 0.5);
    SolveStats stats;
    solve(p, tree, random_rhs(p, tree, 1, 1, 8), &stats);
    return stats;
  };
  for (int k = 2; k <= 4; ++k) {
    for (std::int64_t leaves = 1; leaves <= 4096; leaves *= k) {
      const auto tree = build_perfect_tree(k, leaves);
      steps_ok = steps_ok && stats_of(tree, 1).level_steps() == 2 * (tree.depth() - 1) + 1;
      ++step_checks;
    }
  }
  for (int length : {1, 2, 7, 100}) {
    steps_ok = steps_ok && stats_of(TreeTopology::chain(length), 1).level_steps() == 2 * (length - 1) + 1;
    ++step_checks;
  }

  double worst_ops = 0;
  double worst_mem = 0;
  const auto track = [&](const TreeTopology &small, const TreeTopology &large) {
    const auto a = stats_of(small, 2);
    const auto b = stats_of(large, 2);
    worst_ops = std::max(worst_ops, std::abs(static_cast<double>(b.block_ops) / a.block_ops - 2.0) / 2.0);
    worst_mem = std::max(worst_mem, std::abs(static_cast<double>(b.peak_aux_bytes) / a.peak_aux_bytes - 2.0) / 2.0);
  };
  for (int length = 64; length < 8192; length *= 2) track(TreeTopology::chain(length), TreeTopology::chain(2 * length));
  // Binary trees: doubling the leaves doubles L = 2 * leaves - 1 up to one node.
  for (std::int64_t leaves = 64; leaves < 8192; leaves *= 2) track(build_perfect_tree(2, leaves), build_perfect_tree(2, 2 * leaves));

  return {steps_ok && worst_ops <= 0.1 && worst_mem <= 0.1,
          fmt("level_steps exact on %d trees: %s; block-op ratio on doubling off 2 by <= %.1f%% (<= 10%%); "
              "peak auxiliary bytes off 2 by <= %.1f%% (<= 10%%)",
              step_checks, steps_ok ? "yes" : "no", 100 * worst_ops, 100 * worst_mem)};
}

Outcome ordering_fidelity()
{
  // Both 4x4 panels, rows listed from y = 0 upwards.
  const int morton[4][4] = {{1, 2, 5, 6}, {3, 4, 7, 8}, {9, 10, 13, 14}, {11, 12, 15, 16}};
  const int snake[4][4] = {{1, 2, 3, 4}, {8, 7, 6, 5}, {9, 10, 11, 12}, {16, 15, 14, 13}};
  int matched = 0;
  std::string failure;
  for (const auto &[order, panel] : {std::pair{"morton", morton}, std::pair{"snake", snake}}) {
    const std::string cmd = std::string(MYO_CLI_PATH) + " flatten --height 4 --width 4 --order " + order;
    FILE *pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return {false, "could not run " + cmd};
    int x = 0;
    int y = 0;
    int pos = 0;
    int lines = 0;
    while (std::fscanf(pipe, "%d %d %d", &x, &y, &pos) == 3) {
      ++lines;
      if (x >= 0 && x < 4 && y >= 0 && y < 4 && panel[y][x] == pos) {
        ++matched;
      } else if (failure.empty()) {
        failure = fmt(" first mismatch: %s (%d, %d) -> %d", order, x, y, pos);
      }
    }
    const int status = pclose(pipe);
    if (status != 0 || lines != 16) failure += fmt(" %s: exit %d, %d lines", order, status, lines);
  }
  return {matched == 32 && failure.empty(), fmt("%d of 32 entries match", matched) + failure};
}

Outcome stability_parametrization()
{
  UniformSource rng(9009);
  double min_eigen = std::numeric_limits<double>::infinity();
  double worst_asym = 0;
  std::int64_t blocks = 0;
  const auto check = [&](const BlockArray<double> &schur) {
    for (Index i = 0; i < schur.count(); ++i) {
      const Matrix<double> s = schur.block(i);
      worst_asym = std::max(worst_asym, (s - s.transpose()).cwiseAbs().maxCoeff() / s.cwiseAbs().maxCoeff());
      const Eigen::SelfAdjointEigenSolver<Matrix<double>> eig((s + s.transpose()) / 2, Eigen::EigenvaluesOnly);
      min_eigen = std::min(min_eigen, eig.eigenvalues().minCoeff());
      ++blocks;
    }
  };
  for (int i = 0; i < 100; ++i) {
    const auto tree = [&] {
      if (i % 3 == 0) return random_tree(rng, pick(rng, 2, 200));
      if (i % 3 == 1) return TreeTopology::chain(pick(rng, 2, 100));
      const int k = pick(rng, 2, 4);
      std::int64_t leaves = 1;
      for (int m = pick(rng, 1, k == 2 ? 7 : 4); m > 0; --m) leaves *= k;
      return build_perfect_tree(k, leaves);
    }();
    const Index d = pick(rng, 1, 4);
    const double gamma = 1.0 - 0.999 * (rng() + 1.0) / 2.0;
    const auto p = init_random_stable<double>(tree, uniform_sizes(tree, d), pick(rng, 1, 2), 9100 + i, gamma);
    const auto state = upward_pass(p, tree, random_rhs(p, tree, 1, 1, 9200 + i));
    for (const auto &level : state.levels) check(level.schur);
    check(state.root_schur);
  }
  return {worst_asym <= 1e-12 && min_eigen > 0,
          fmt("%lld Schur complements over 100 upward passes, max asymmetry %.2e, min eigenvalue %.3f (> 0)",
              static_cast<long long>(blocks), worst_asym, min_eigen)};
}

} // namespace

int main()
{
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"SSM special case", ssm_special_case},
      {"chain closed-form inverse", chain_closed_form_inverse},
      {"bidirectional factorization", bidirectional_factorization},
      {"gauge invariance", gauge_invariance},
      {"gradient correctness", gradient_correctness},
      {"complexity properties", complexity_properties},
      {"ordering fidelity", ordering_fidelity},
      {"stability parametrization", stability_parametrization},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception &e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failed += outcome.pass ? 0 : 1;
    std::printf("criterion %zu (%s): %s - %s\n", i + 1, criteria[i].first, outcome.pass ? "PASS" : "FAIL",
                outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
