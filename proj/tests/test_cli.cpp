#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string(CONDMEAS_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("condmeas_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << content;
    return p.string();
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  fs::path dir_;
};

std::string polarization(const std::string& coupling, const std::string& outputs = R"({"paths": "both"})") {
  return R"({"system": {"dim": 2, "observable": "pauli3",
             "state": {"vector": [-0.9238795325112867, 0.3826834323650898]},
             "post_selection": {"vector": [0.7071067811865476, 0.7071067811865476]}},
             "detector": {"hg_modes": [0], "sigma": 2.0},
             "coupling": )" +
         coupling + R"(, "outputs": )" + outputs + "}";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_F(CliTest, RunZeroCouplingReport) {
  const auto r = run_cli("run " + write("s.json", polarization(R"({"g": 0.0})")));
  ASSERT_EQ(r.code, 0);
  const json rep = json::parse(r.out);
  EXPECT_NEAR(rep["prob_f"].get<double>(), 0.14645, 1e-5);
  EXPECT_NEAR(rep["moments"]["grid"]["x"][0].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(rep["moments"]["grid"]["p"][0].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(rep["moments"]["closed"]["x"][0].get<double>(), 0.0, 1e-12);
  for (const char* key : {"scenario_echo", "prob_f", "moments", "weak_values", "deltas", "warnings"})
    EXPECT_TRUE(rep.contains(key)) << key;
}

TEST_F(CliTest, RunBothPathsAgree) {
  const auto r = run_cli("run " + write("s.json", polarization(R"({"g": 2.0})")));
  ASSERT_EQ(r.code, 0);
  const json rep = json::parse(r.out);
  EXPECT_LE(rep["deltas"]["closed_vs_grid_x"].get<double>(), 1e-6);
  EXPECT_LE(rep["deltas"]["closed_vs_grid_p"].get<double>(), 1e-6);
}

TEST_F(CliTest, ReportWrittenRelativeToScenario) {
  const std::string path = write("s.json", polarization(R"({"g": 1.0})", R"({"report": "out/report.json"})"));
  fs::create_directories(dir_ / "out");
  ASSERT_EQ(run_cli("run " + path).code, 0);
  EXPECT_TRUE(json::parse(read(dir_ / "out" / "report.json")).contains("weak_values"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli("run " + (dir_ / "missing.json").string()).code, 4);
  const std::string bad = R"({"system": {"dim": 2, "observable": "pauli3", "state": {"bloch": [1, 1, 0]}},
                             "detector": {"hg_modes": [0]}, "coupling": {"g": 1}})";
  EXPECT_EQ(run_cli("run " + write("bad.json", bad)).code, 2);
  EXPECT_EQ(run_cli("run " + write("broken.json", "{ not json")).code, 2);
  const std::string impossible = R"({"system": {"dim": 2, "observable": "pauli3", "state": {"vector": [1, 0]},
                                    "post_selection": {"vector": [0, 1]}},
                                    "detector": {"hg_modes": [0]}, "coupling": {"g": 1}})";
  EXPECT_EQ(run_cli("run " + write("imp.json", impossible)).code, 3);
  EXPECT_EQ(run_cli("run " + write("s.json", polarization(R"({"g": 1.0})")) + " --grid-points 1000").code, 2);
  EXPECT_EQ(run_cli("bogus").code, 2);
  const std::string unwritable = polarization(R"({"g": 1.0})", R"({"report": "no/such/dir/report.json"})");
  EXPECT_EQ(run_cli("run " + write("u.json", unwritable)).code, 4);
}

TEST_F(CliTest, BadBlochMessageNamesField) {
  const std::string bad = R"({"system": {"dim": 2, "observable": "pauli3", "state": {"bloch": [1, 1, 0]}},
                             "detector": {"hg_modes": [0]}, "coupling": {"g": 1}})";
  const std::string cmd = std::string(CONDMEAS_CLI_PATH) + " run " + write("bad.json", bad) + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  pclose(pipe);
  EXPECT_NE(out.find("system.state.bloch"), std::string::npos) << out;
}

TEST_F(CliTest, SweepIsDeterministicAndConsistent) {
  const std::string path = write("s.json", polarization(R"({"sweep": {"min": 0, "max": 10, "count": 6}})"));
  const auto a = run_cli("sweep " + path + " --grid-points 2048");
  const auto b = run_cli("sweep " + path + " --grid-points 2048 --workers 3");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto rows = parse_csv(a.out);
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"g", "m", "prob_f", "x_mean_closed", "x_mean_grid", "p_mean_closed",
                                               "p_mean_grid", "ReA_w", "ImA_w", "ReDelta_m", "ImDelta_m", "error"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 12u);
    EXPECT_TRUE(rows[i][11].empty());
    const double closed = std::stod(rows[i][3]), grid = std::stod(rows[i][4]);
    EXPECT_LE(std::abs(closed - grid), 1e-6 * std::max(1.0, std::abs(grid)));
  }
}

TEST_F(CliTest, PathsFlagSelectsGridOnly) {
  const auto r = run_cli("run " + write("s.json", polarization(R"({"g": 1.0})")) + " --paths grid");
  ASSERT_EQ(r.code, 0);
  const json rep = json::parse(r.out);
  EXPECT_TRUE(rep["moments"].contains("grid"));
  EXPECT_FALSE(rep["moments"].contains("closed"));
}

TEST_F(CliTest, Figure1Endpoints) {
  ASSERT_EQ(run_cli("figure fig1 --out " + dir_.string()).code, 0);
  const auto rows = parse_csv(read(dir_ / "fig1.csv"));
  ASSERT_GT(rows.size(), 10u);
  // smallest positive g: rows 4..6 (after the g = 0 rows); largest g: last three rows
  std::vector<double> weak, strong;
  for (std::size_t i = 4; i <= 6; ++i) weak.push_back(std::stod(rows[i][7]));
  for (std::size_t i = rows.size() - 3; i < rows.size(); ++i) strong.push_back(std::stod(rows[i][7]));
  for (double w : weak) {
    EXPECT_NEAR(w, weak[0], 1e-4);
    EXPECT_NEAR(w, 1.0 + M_SQRT2, 1e-4);
  }
  for (double s : strong) EXPECT_NEAR(s, M_SQRT1_2, 1e-3);
  const json meta = json::parse(read(dir_ / "fig1_metadata.json"));
  EXPECT_DOUBLE_EQ(meta["g_over_sigma"]["max"].get<double>(), 10.0);
}

TEST_F(CliTest, Figure2IntensitiesAreDensities) {
  ASSERT_EQ(run_cli("figure fig2 --out " + dir_.string()).code, 0);
  const auto rows = parse_csv(read(dir_ / "fig2.csv"));
  ASSERT_EQ(rows[0].size(), 7u);
  const double dx = std::stod(rows[2][0]) - std::stod(rows[1][0]);
  std::vector<double> sums(6, 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i)
    for (std::size_t c = 1; c < 7; ++c) {
      const double v = std::stod(rows[i][c]);
      EXPECT_GE(v, 0.0);
      sums[c - 1] += v * dx;
    }
  for (double s : sums) EXPECT_NEAR(s, 1.0, 1e-9);
  const json meta = json::parse(read(dir_ / "fig2_metadata.json"));
  EXPECT_DOUBLE_EQ(meta["g"].get<double>(), 2.0);
}

TEST_F(CliTest, Figure3Trajectories) {
  ASSERT_EQ(run_cli("figure fig3 --out " + dir_.string()).code, 0);
  const auto rows = parse_csv(read(dir_ / "fig3.csv"));
  ASSERT_EQ(rows[0][6], "coherence_factor");
  const double r3 = std::stod(rows[1][5]);
  bool m1_crosses = false;
  double prev_m1 = 1.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double ratio = std::stod(rows[i][1]);
    const int m = std::stoi(rows[i][2]);
    EXPECT_NEAR(std::stod(rows[i][5]), r3, 1e-12);
    const double lag = m == 0 ? 1.0 : m == 1 ? 1.0 - ratio * ratio : 1.0 - 2 * ratio * ratio + std::pow(ratio, 4) / 2;
    EXPECT_NEAR(std::stod(rows[i][6]), lag * std::exp(-0.5 * ratio * ratio), 1e-10);
    if (m == 1) {
      const double f = std::stod(rows[i][6]);
      if (prev_m1 >= 0 && f < 0) m1_crosses = true;
      prev_m1 = f;
    }
  }
  EXPECT_TRUE(m1_crosses);
}

TEST_F(CliTest, FigureToUnwritableDirectoryIsIoError) {
  write("blocker", "x");
  EXPECT_EQ(run_cli("figure fig3 --out " + (dir_ / "blocker" / "sub").string()).code, 4);
}
