#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result run(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("cd '") + dir.string() + "' && '" + RECAPD_CLI_PATH + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const char* kSmallSynth =
    "synth --out data --set synth.speakers_per_class=6 --set synth.utterances_per_speaker=4 --set synth.D=8 "
    "--set synth.t_min=12 --set synth.t_max=16";
const char* kSmallModel = " --set model.hidden1=4 --set model.hidden2=4 --set train.epochs=2 --set eval.n_outer=2";

TEST(Cli, HelpOnEverySubcommand) {
  const auto dir = recapd::testing::temp_dir("cli_help");
  for (const char* sub : {"", "synth", "train", "eval", "ablate", "explain", "gradcheck"}) {
    Result r = run(dir, std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST(Cli, ErrorsAreJsonWithDistinctCodes) {
  const auto dir = recapd::testing::temp_dir("cli_errors");
  ASSERT_EQ(run(dir, kSmallSynth).code, 0);
  const std::vector<std::pair<std::string, int>> cases{
      {"train --bogus", 2},
      {"", 2},
      {"eval --data data --protocol c", 2},
      {"train --data missing", 3},
      {"train --data data --config absent.json", 3},
      {"train --data data --set train.epochs=many", 4},
      {"train --data data --set model.nope=1", 4},
      {"explain --data data", 4},
  };
  for (const auto& [args, code] : cases) {
    Result r = run(dir, args);
    EXPECT_EQ(r.code, code) << args;
    json j = json::parse(r.err, nullptr, false);
    ASSERT_FALSE(j.is_discarded()) << args << ": " << r.err;
    EXPECT_EQ(j["exit_code"], code) << args;
    EXPECT_TRUE(j.contains("message"));
  }
}

TEST(Cli, SmokePipelineProducesCsvAndSvg) {
  const auto dir = recapd::testing::temp_dir("cli_smoke");
  ASSERT_EQ(run(dir, kSmallSynth).code, 0);
  Result t = run(dir, "train --data data --out model --variant m4 --set train.epochs=2 --set model.hidden1=4 "
                      "--set model.hidden2=4");
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"model.ckpt", "feature_stats.json", "train_log.json", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(dir / "model" / f)) << f;
  EXPECT_EQ(json::parse(slurp(dir / "model" / "train_log.json"))["train_loss"].size(), 2u);

  Result e = run(dir, "explain --data data --checkpoint model --out explain --max-svg 2");
  ASSERT_EQ(e.code, 0) << e.err;
  std::istringstream csv(slurp(dir / "explain" / "explanations.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "utterance_id,t,articulation,glottal,phonation,prosody,prediction,label");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 8u) << line;
    double sum = 0;
    for (std::size_t k = 2; k < 6; ++k) sum += std::stod(cells[k]);
    EXPECT_NEAR(sum, 1.0, 1e-9);
    ++rows;
  }
  EXPECT_GE(rows, 48u * 12u);

  std::size_t svgs = 0;
  for (const auto& f : fs::directory_iterator(dir / "explain" / "heatmaps")) {
    ++svgs;
    const std::string svg = slurp(f.path());
    EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    const std::regex cell(R"(class="cell")");
    const auto n = std::distance(std::sregex_iterator(svg.begin(), svg.end(), cell), std::sregex_iterator());
    EXPECT_EQ(n % 4, 0);
    EXPECT_GE(n, 4 * 12);
  }
  EXPECT_EQ(svgs, 2u);
  json summary = json::parse(slurp(dir / "explain" / "cohort_summary.json"));
  EXPECT_EQ(summary["all"]["utterances"], 48);
}

TEST(Cli, AblateEmitsFourRowsOfSixMetricsReproducibly) {
  const auto dir = recapd::testing::temp_dir("cli_ablate");
  ASSERT_EQ(run(dir, kSmallSynth).code, 0);
  const std::string args = std::string("ablate --data data --seeds 0,1") + kSmallModel;
  Result a = run(dir, args + " --out run1 --jobs 1");
  ASSERT_EQ(a.code, 0) << a.err;
  Result b = run(dir, args + " --out run2 --jobs 2");
  ASSERT_EQ(b.code, 0) << b.err;
  const std::string ja = slurp(dir / "run1" / "eval_report.json");
  EXPECT_EQ(ja, slurp(dir / "run2" / "eval_report.json"));
  json j = json::parse(ja);
  ASSERT_EQ(j["rows"].size(), 4u);
  EXPECT_EQ(j["metrics"].size(), 6u);
  std::vector<std::string> variants;
  for (const auto& row : j["rows"]) {
    variants.push_back(row["variant"]);
    for (const auto& m : j["metrics"]) EXPECT_TRUE(row.contains(m.get<std::string>()));
  }
  EXPECT_EQ(variants, (std::vector<std::string>{"m1", "m2", "m3", "m4"}));
  EXPECT_TRUE(fs::exists(dir / "run1" / "eval_report.txt"));
  EXPECT_EQ(json::parse(slurp(dir / "run1" / "resolved_config.json"))["eval"]["seeds"], json::array({0, 1}));
}

TEST(Cli, EvalProtocolA) {
  const auto dir = recapd::testing::temp_dir("cli_eval_a");
  ASSERT_EQ(run(dir, kSmallSynth).code, 0);
  Result r = run(dir, std::string("eval --data data --protocol a --variant m2 --seeds 0 --out ev") + kSmallModel);
  ASSERT_EQ(r.code, 0) << r.err;
  json j = json::parse(slurp(dir / "ev" / "eval_report.json"));
  std::vector<std::string> sets;
  for (const auto& row : j["rows"]) sets.push_back(row["task_set"]);
  EXPECT_EQ(sets, (std::vector<std::string>{"ddk", "sentences", "read", "monologue", "split-mono"}));
}

TEST(Cli, GradcheckPasses) {
  const auto dir = recapd::testing::temp_dir("cli_gradcheck");
  Result r = run(dir, "gradcheck --trials 3 --out g");
  EXPECT_EQ(r.code, 0) << r.err;
  json j = json::parse(slurp(dir / "g" / "gradcheck.json"));
  EXPECT_EQ(j["failures"], 0);
}

}  // namespace
