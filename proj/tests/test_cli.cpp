#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "immunize/config.hpp"

namespace fs = std::filesystem;
using immunize::Json;

namespace {

const std::string cli_path = IMMUNIZE_CLI_PATH;
const fs::path fixtures = IMMUNIZE_FIXTURE_DIR;
const fs::path configs = IMMUNIZE_CONFIG_DIR;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / "immunize_test_cli" / info->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Result run(const std::string& args, const std::string& env = "") const {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = env + " '" + cli_path + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path write_config(const std::string& name, const Json& doc) const {
    const auto p = path(name);
    std::ofstream(p) << doc.dump(2);
    return p;
  }

  static Json preset(const std::string& name) {
    Json doc = Json::parse(slurp(configs / name));
    if (doc.contains("data_dir")) doc["data_dir"] = (configs / doc["data_dir"].get<std::string>()).string();
    return doc;
  }

  fs::path dir_;
};

/// CSV rows keyed by header name; outputs here never need quoting.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  std::getline(is, line);
  header = split(line);
  while (std::getline(is, line)) {
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(row);
  }
  return rows;
}

Json synthetic_doc() {
  return Json::parse(slurp(configs / "synthetic.json"));
}

}  // namespace

TEST_F(Cli, MissingConfigExitsWithConfigErrorNamingPath) {
  const auto r = run("immunize --config /no/such/config.json --out '" + path("o").string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such/config.json"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("o")));
}

TEST_F(Cli, UsageErrorsAreConfigErrors) {
  const auto cfg = write_config("s.json", synthetic_doc());
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("immunize --config '" + cfg.string() + "'").code, 2);  // no --out
  EXPECT_EQ(run("immunize --config '" + cfg.string() + "' --out o --method Best").code, 2);
  EXPECT_EQ(run("probe --config '" + cfg.string() + "' --out o").code, 2);  // neither --theta nor --identity
  EXPECT_EQ(run("probe --config '" + cfg.string() + "' --out o --identity --theta x").code, 2);
  EXPECT_EQ(run("pairs --config '" + cfg.string() + "' --out o").code, 2);  // not an idx config
  EXPECT_EQ(run("pairs --config '" + (configs / "digits.json").string() + "' --out o --method Ours --pairs 3-3").code,
            2);
  EXPECT_EQ(run("verify --level medium").code, 2);
  EXPECT_EQ(run("--version").code, 0);
}

TEST_F(Cli, MissingDataExitsWithDataErrorAndWritesNothing) {
  Json doc = preset("house_price.json");
  doc["data"]["csv"] = "no_such_table.csv";
  const auto cfg = write_config("hp.json", doc);
  const auto r = run("immunize --config '" + cfg.string() + "' --out '" + path("o").string() + "'");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("no_such_table.csv"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("o")));
}

TEST_F(Cli, DivergentTrainingExitsWithNumericError) {
  Json doc = synthetic_doc();
  doc["training"]["lambda_P"] = 1.0;  // eta * lambda_P far above the stable range for this data scale
  const auto cfg = write_config("s.json", doc);
  const auto r = run("immunize --config '" + cfg.string() + "' --out '" + path("o").string() + "'");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("NonFiniteUpdate"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(path("o") / "manifest.json"));
  EXPECT_FALSE(read_csv(path("o") / "synthetic_Ours_s0_telemetry.csv").empty());
}

TEST_F(Cli, SyntheticRunWritesEveryListedOutput) {
  const auto cfg = write_config("s.json", synthetic_doc());
  const auto r = run("immunize --config '" + cfg.string() + "' --out '" + path("o").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json man = Json::parse(slurp(path("o") / "manifest.json"));
  EXPECT_EQ(man["command"], "immunize");
  EXPECT_EQ(man["config"]["name"], "synthetic");
  ASSERT_EQ(man["outputs"].size(), 4u);
  for (const auto& o : man["outputs"]) EXPECT_TRUE(fs::exists(path("o") / o.get<std::string>())) << o;
  const auto runs = read_csv(path("o") / "runs.csv");
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_GT(std::stod(runs[0].at("rir")), 1.0);
  const auto tel = read_csv(path("o") / "synthetic_Ours_s0_telemetry.csv");
  EXPECT_EQ(tel.size(), 50u);
  EXPECT_EQ(std::stod(tel[0].at("rir")), 1.0);
}

TEST_F(Cli, SameInputsGiveByteIdenticalOutputs) {
  const auto cfg = write_config("s.json", synthetic_doc());
  ASSERT_EQ(run("immunize --config '" + cfg.string() + "' --out '" + path("a").string() + "'").code, 0);
  ASSERT_EQ(run("immunize --config '" + cfg.string() + "' --out '" + path("b").string() + "'").code, 0);
  for (const char* f : {"runs.csv", "summary.csv", "synthetic_Ours_s0_telemetry.csv", "synthetic_Ours_s0.theta",
                        "manifest.json"}) {
    const std::string a = slurp(path("a") / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(path("b") / f)) << f;
  }
}

TEST_F(Cli, HousePriceMethodSweepHasFourSummaryRows) {
  const auto cfg = write_config("hp.json", preset("house_price.json"));
  const auto r = run("immunize --config '" + cfg.string() + "' --out '" + path("o").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = read_csv(path("o") / "summary.csv");
  ASSERT_EQ(summary.size(), 4u);
  std::vector<std::string> methods;
  for (const auto& row : summary) methods.push_back(row.at("method"));
  EXPECT_EQ(methods, (std::vector<std::string>{"Ours", "RillOnly", "OptKappa", "Imma"}));
  for (const char* col : {"term_i_mean", "term_ii_mean", "rir_mean"}) EXPECT_TRUE(summary[0].count(col)) << col;
  EXPECT_GT(std::stod(summary[0].at("rir_mean")), 10.0);
}

TEST_F(Cli, ProbeIdentityStartsAtOne) {
  const auto cfg = write_config("hp.json", preset("house_price.json"));
  const auto r = run("probe --config '" + cfg.string() + "' --identity --iters 20 --out '" + path("p").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(path("p") / "probe.csv");
  ASSERT_EQ(rows.size(), 42u);
  EXPECT_EQ(rows[0].at("curve"), "D_P");
  EXPECT_EQ(rows[0].at("norm_ratio"), "1");
  EXPECT_EQ(rows[21].at("curve"), "D_H");
  EXPECT_EQ(rows[21].at("norm_ratio"), "1");
  EXPECT_TRUE(fs::exists(path("p") / "manifest.json"));
}

TEST_F(Cli, ProbeImmunizedExtractorIsSlowerOnHarmfulTask) {
  const auto cfg = write_config("hp.json", preset("house_price.json"));
  ASSERT_EQ(run("immunize --config '" + cfg.string() + "' --method Ours --out '" + path("o").string() + "'").code, 0);
  const auto theta = path("o") / "house_price_Ours_s0.theta";
  ASSERT_EQ(run("probe --config '" + cfg.string() + "' --theta '" + theta.string() + "' --iters 50 --out '" +
                path("imm").string() + "'")
                .code,
            0);
  ASSERT_EQ(
      run("probe --config '" + cfg.string() + "' --identity --iters 50 --out '" + path("id").string() + "'").code, 0);
  const auto imm = read_csv(path("imm") / "probe.csv");
  const auto id = read_csv(path("id") / "probe.csv");
  ASSERT_EQ(imm.size(), id.size());
  int compared = 0;
  for (std::size_t i = 0; i < imm.size(); ++i) {
    if (imm[i].at("curve") != "D_H" || imm[i].at("step") == "0") continue;
    EXPECT_GT(std::stod(imm[i].at("norm_ratio")), std::stod(id[i].at("norm_ratio"))) << "step " << imm[i].at("step");
    ++compared;
  }
  EXPECT_EQ(compared, 50);
}

TEST_F(Cli, ProbeConvergesInOneStepOnWhitenedData) {
  // Columns of a Sylvester-Hadamard matrix: zero mean, unit population std and
  // mutually orthogonal, so X^T X is a multiple of the identity in both splits.
  const int h[8][3] = {{1, 1, 1},   {-1, 1, -1}, {1, -1, -1}, {-1, -1, 1},
                       {1, 1, 1},   {-1, 1, -1}, {1, -1, -1}, {-1, -1, 1}};
  std::ofstream csv(path("white.csv"));
  csv << "zone,a,b,c,tp,th\n";
  for (int split = 0; split < 2; ++split)
    for (int i = 0; i < 8; ++i)
      csv << (split ? "H" : "P") << "," << h[i][0] << "," << h[i][1] << "," << h[i][2] << "," << (i * 7 % 5) << ","
          << (i * i % 3) << "\n";
  csv.close();
  Json doc;
  doc["data"] = {{"kind", "tabular"}, {"csv", path("white.csv").string()}, {"split_column", "zone"},
                 {"split_value", "H"}, {"target_P", "tp"}, {"target_H", "th"}, {"drop", Json::array()}};
  const auto cfg = write_config("w.json", doc);
  const auto r = run("probe --config '" + cfg.string() + "' --identity --iters 1 --out '" + path("p").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(path("p") / "probe.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_LT(std::stod(rows[1].at("norm_ratio")), 1e-10);
  EXPECT_LT(std::stod(rows[3].at("norm_ratio")), 1e-10);
}

TEST_F(Cli, DataDirectoryFromEnvironment) {
  Json doc = preset("house_price.json");
  doc.erase("data_dir");
  doc["methods"] = {"Ours"};
  doc["training"]["epochs"] = 2;
  const auto cfg = write_config("hp.json", doc);
  const std::string args = "immunize --config '" + cfg.string() + "' --out '" + path("o").string() + "'";
  EXPECT_EQ(run(args).code, 3);
  const auto r = run(args, "IMMUNIZE_DATA_DIR='" + fixtures.string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, PairsSinglePairGivesSingleRowGrid) {
  const auto r = run("pairs --config '" + (configs / "digits.json").string() + "' --method Ours --pairs 0-1 --out '" +
                     path("o").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto grid = read_csv(path("o") / "pair_grid.csv");
  ASSERT_EQ(grid.size(), 1u);
  EXPECT_EQ(grid[0].at("row_digit"), "0");
  EXPECT_EQ(grid[0].at("col_digit"), "1");
  const auto runs = read_csv(path("o") / "runs.csv");
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0].at("task"), "0v1-1v2");
  EXPECT_NEAR(std::stod(grid[0].at("log_rir")), std::log(std::stod(runs[0].at("rir"))), 1e-12);
}

TEST_F(Cli, PairsAverageSeedsPerCell) {
  Json doc = preset("digits.json");
  doc["training"]["theta_init"] = "normal";
  doc["seeds"] = {0, 1, 2};
  doc["evaluation"] = {{"reference", "theta0"}};
  const auto cfg = write_config("d.json", doc);
  const auto r = run("pairs --config '" + cfg.string() + "' --method Ours --pairs 0-3,1-5,4-7 --jobs 3 --out '" +
                     path("o").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto runs = read_csv(path("o") / "runs.csv");
  EXPECT_EQ(runs.size(), 9u);
  const auto grid = read_csv(path("o") / "pair_grid.csv");
  ASSERT_EQ(grid.size(), 3u);
  for (const auto& cell : grid) {
    EXPECT_EQ(cell.at("runs"), "3");
    double sum = 0;
    const std::string key = cell.at("row_digit") + "v";
    for (const auto& run : runs)
      if (run.at("task").rfind(key, 0) == 0) sum += std::stod(run.at("rir"));
    EXPECT_NEAR(std::stod(cell.at("log_rir")), std::log(sum / 3.0), 1e-12);
  }
}

TEST_F(Cli, PairsAllCoversNinetyCellsAndIsThreadCountInvariant) {
  const std::string base = "pairs --config '" + (configs / "digits.json").string() + "' --method Ours --pairs all";
  ASSERT_EQ(run(base + " --jobs 4 --out '" + path("a").string() + "'").code, 0);
  EXPECT_EQ(read_csv(path("a") / "pair_grid.csv").size(), 90u);
  ASSERT_EQ(run(base + " --jobs 1 --out '" + path("b").string() + "'").code, 0);
  EXPECT_EQ(slurp(path("a") / "pair_grid.csv"), slurp(path("b") / "pair_grid.csv"));
  EXPECT_EQ(slurp(path("a") / "runs.csv"), slurp(path("b") / "runs.csv"));
}

TEST_F(Cli, VerifyReportsEveryClauseDeterministically) {
  const auto a = run("verify --level fast --seed 5");
  const auto b = run("verify --level fast --seed 5");
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.code, b.code);
  const bool any_fail = a.out.find("FAIL") != std::string::npos;
  EXPECT_EQ(a.code, any_fail ? 1 : 0);
  EXPECT_NE(a.out.find("PASS  gradient R_ill(S)  failures=0/100"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("PASS  gradient R_well(theta)  failures=0/100"), std::string::npos) << a.out;
}
