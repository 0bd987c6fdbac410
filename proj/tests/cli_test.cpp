#include "myo/problem_file.hpp"
#include "myo/solver.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

struct CliResult
{
  int code;
  std::string out;
};

class Cli : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir_ = fs::temp_directory_path() / ("myo_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string &name) const { return (dir_ / name).string(); }

  CliResult run(const std::string &args) const
  {
    const auto captured = dir_ / "stdout.txt";
    const std::string cmd = std::string(MYO_CLI_PATH) + " " + args + " > " + captured.string() + " 2> " +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(captured);
    std::stringstream text;
    text << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str()};
  }

  static std::string slurp(const std::string &file)
  {
    std::ifstream in(file, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  /// "key value" lines of verify/gradcheck output.
  static std::map<std::string, std::string> fields(const std::string &text)
  {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto space = line.find(' ');
      if (space == std::string::npos) {
        kv["verdict"] = line;
      } else {
        kv[line.substr(0, space)] = line.substr(space + 1);
      }
    }
    return kv;
  }

  fs::path dir_;
};

TEST_F(Cli, GenIsDeterministic)
{
  const std::string args = "gen --arity 2 --leaves 8 --block-size 2 --heads 2 --batch 2 --rhs 3 --seed 9 --out ";
  ASSERT_EQ(run(args + path("a.bin")).code, 0);
  ASSERT_EQ(run(args + path("b.bin")).code, 0);
  ASSERT_EQ(run("gen --arity 2 --leaves 8 --block-size 2 --heads 2 --batch 2 --rhs 3 --seed 10 --out " + path("c.bin")).code, 0);
  EXPECT_EQ(slurp(path("a.bin")), slurp(path("b.bin")));
  EXPECT_NE(slurp(path("a.bin")), slurp(path("c.bin")));
  const auto problem = myo::read_problem(fs::path(path("a.bin")));
  EXPECT_EQ(problem.tree.level_sizes(), (std::vector<int>{8, 4, 2, 1}));
  EXPECT_EQ(problem.rhs.batch(), 2);
  EXPECT_EQ(problem.rhs.right_parts(), 3);
}

TEST_F(Cli, UsageErrors)
{
  EXPECT_EQ(run("gen --arity 3 --leaves 10 --out " + path("x.bin")).code, 1);
  EXPECT_EQ(run("gen --arity 2 --leaves 4 --gamma -1 --out " + path("x.bin")).code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("unknown").code, 1);
  EXPECT_EQ(run("verify --in " + path("missing.bin")).code, 1);
  EXPECT_EQ(run("flatten --height 4 --width 4 --order spiral").code, 1);
  EXPECT_EQ(run("flatten --height 4 --width 8 --order morton").code, 1);
}

TEST_F(Cli, VerifyZeroCoupling)
{
  ASSERT_EQ(run("gen --arity 4 --leaves 16 --block-size 2 --gamma 0 --out " + path("p.bin")).code, 0);
  const auto r = run("verify --in " + path("p.bin"));
  EXPECT_EQ(r.code, 0);
  const auto kv = fields(r.out);
  EXPECT_EQ(std::stod(kv.at("max_relative_discrepancy")), 0.0);
  EXPECT_EQ(kv.at("verdict"), "PASS");
}

TEST_F(Cli, VerifyRandomBinaryTree)
{
  ASSERT_EQ(run("gen --arity 2 --leaves 64 --block-size 3 --heads 2 --rhs 2 --gamma 0.9 --seed 4 --out " + path("p.bin")).code, 0);
  const auto r = run("verify --in " + path("p.bin"));
  EXPECT_EQ(r.code, 0) << r.out;
  const auto kv = fields(r.out);
  EXPECT_EQ(kv.at("nodes"), "127");
  EXPECT_EQ(kv.at("level_steps"), "13");
  EXPECT_LE(std::stod(kv.at("max_relative_discrepancy")), 1e-10);
  EXPECT_LE(std::stod(kv.at("relative_residual")), 1e-9);
  EXPECT_EQ(run("verify --in " + path("p.bin") + " --max-dense 100").code, 1);
}

TEST_F(Cli, VerifyReportsSingularBlock)
{
  ASSERT_EQ(run("gen --arity 2 --leaves 4 --out " + path("p.bin")).code, 0);
  auto problem = myo::read_problem(fs::path(path("p.bin")));
  problem.params.A(0).set_zero();
  myo::write_problem(fs::path(path("s.bin")), problem);
  EXPECT_EQ(run("verify --in " + path("s.bin")).code, 2);
}

TEST_F(Cli, BenchLevelStepsAndWork)
{
  const auto r = run("bench --arity 2 --sizes 4,16,64,256,1024 --repeats 1");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "leaves,L,depth,wall_time_s,level_steps,block_op_count,peak_aux_bytes");
  std::vector<int> steps;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream s(line);
    for (std::string c; std::getline(s, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 7u);
    steps.push_back(std::stoi(cols[4]));
  }
  EXPECT_EQ(steps, (std::vector<int>{5, 9, 13, 17, 21}));

  const auto single = run("bench --arity 4 --sizes 1 --repeats 1");
  ASSERT_EQ(single.code, 0);
  EXPECT_NE(single.out.find("\n1,1,1,"), std::string::npos) << single.out;
  EXPECT_NE(single.out.find(",1,"), std::string::npos);

  const auto quad = run("bench --arity 4 --sizes 4,16,64,256,1024 --repeats 1");
  std::istringstream q(quad.out);
  std::getline(q, line);
  std::vector<int> quad_steps;
  std::vector<double> nodes;
  std::vector<double> ops;
  while (std::getline(q, line)) {
    std::vector<std::string> cols;
    std::stringstream s(line);
    for (std::string c; std::getline(s, c, ',');) cols.push_back(c);
    nodes.push_back(std::stod(cols[1]));
    quad_steps.push_back(std::stoi(cols[4]));
    ops.push_back(std::stod(cols[5]));
  }
  EXPECT_EQ(quad_steps, (std::vector<int>{3, 5, 7, 9, 11}));
  // Work per node settles once the root's share is small.
  for (std::size_t i = 2; i < ops.size(); ++i) {
    const double ratio = (ops[i] / ops[i - 1]) / (nodes[i] / nodes[i - 1]);
    EXPECT_NEAR(ratio, 1.0, 0.1);
  }
}

TEST_F(Cli, FlattenSmallGrids)
{
  const auto m = run("flatten --height 4 --width 4 --order morton");
  ASSERT_EQ(m.code, 0);
  EXPECT_NE(m.out.find("0 0 1\n"), std::string::npos);
  EXPECT_NE(m.out.find("1 1 4\n"), std::string::npos);
  EXPECT_NE(m.out.find("3 3 16\n"), std::string::npos);
  const auto s = run("flatten --height 4 --width 4 --order snake");
  ASSERT_EQ(s.code, 0);
  EXPECT_NE(s.out.find("3 1 5\n"), std::string::npos);
  EXPECT_NE(s.out.find("0 3 16\n"), std::string::npos);
  EXPECT_EQ(run("flatten --height 1 --width 1 --order morton").out, "0 0 1\n");
  ASSERT_EQ(run("flatten --height 2 --width 2 --order snake --out " + path("f.txt")).code, 0);
  EXPECT_EQ(slurp(path("f.txt")), "0 0 1\n1 0 2\n0 1 4\n1 1 3\n");
}

TEST_F(Cli, Gradcheck)
{
  ASSERT_EQ(run("gen --arity 2 --leaves 4 --gamma 0 --out " + path("id.bin")).code, 0);
  EXPECT_EQ(run("gradcheck --in " + path("id.bin")).code, 0);

  ASSERT_EQ(run("gen --arity 2 --leaves 4 --gamma 0.9 --seed 3 --out " + path("p.bin")).code, 0);
  const auto r = run("gradcheck --in " + path("p.bin") + " --eps 1e-5 --loss random --seed 5");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_LT(std::stod(fields(r.out).at("max_relative_error")), 1e-5);
  EXPECT_EQ(run("gradcheck --in " + path("p.bin") + " --eps 1").code, 3);

  ASSERT_EQ(run("gen --arity 2 --leaves 256 --block-size 4 --out " + path("big.bin")).code, 0);
  EXPECT_EQ(run("gradcheck --in " + path("big.bin")).code, 1);
}

} // namespace
