#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "bma/cli.hpp"
#include "common.hpp"

using namespace bma;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "bma");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bma_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Small regression analysis writing into `out`.
  fs::path write_config(const std::string& out) {
    std::ifstream in(bma::test::fixture("synthetic_regression.json"));
    auto doc = nlohmann::json::parse(in);
    doc["data"]["path"] = bma::test::fixture("synthetic_regression.csv");
    doc["priors"]["catalog"] = bma::test::fixture("synthetic_catalog.json");
    doc["moderators"] = {"gender"};
    doc["mcmc"] = {{"seed", 5}, {"adaptation", 200}, {"burnin", 200}, {"sampling", 300}};
    doc["output"]["directory"] = (dir_ / out).string();
    doc["output"]["plots"] = {{{"kind", "forest"}, {"sections", {"studies", "emm"}}},
                              {{"kind", "trace"}, {"parameter", "mu"}},
                              {{"kind", "bubble"}, {"moderator", "gender"}}};
    const auto path = dir_ / (out + ".json");
    std::ofstream(path) << doc.dump(2);
    return path;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"fit", "--no-such-flag"}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"fit", "--config", (dir_ / "missing.json").string()}).code, 1);
}

TEST_F(CliTest, ValidateReportsPointers) {
  const auto bad = invoke({"validate", "--config", bma::test::fixture("invalid_bias_family.json")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("/ensemble/bias"), std::string::npos) << bad.err;
  const auto good = invoke({"validate", "--config", write_config("v")});
  EXPECT_EQ(good.code, 0) << good.err;
  EXPECT_NE(good.out.find("9 studies"), std::string::npos) << good.out;
}

TEST_F(CliTest, EscalcAddsColumns) {
  const auto input = dir_ / "raw.csv";
  std::ofstream(input) << "study,ri,ni\na,0.5,30\nb,0.1,103\n";
  const auto r = invoke({"escalc", "--input", input.string(), "--type", "fishersZ", "--r", "ri", "--n", "ni"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(header, "study,ri,ni,yi,sei");
  // atanh(0.5) = 0.549306..., 1/sqrt(27) = 0.19245...
  EXPECT_NE(first.find("0.5493061443"), std::string::npos) << first;
  EXPECT_NE(first.find("0.1924500897"), std::string::npos) << first;

  std::ofstream(input) << "study,ri,ni\na,1.5,30\n";
  EXPECT_EQ(invoke({"escalc", "--input", input.string(), "--type", "fishersZ", "--r", "ri", "--n", "ni"}).code, 1);
}

TEST_F(CliTest, FitReportPlotRoundTrip) {
  const auto cfg = write_config("a");
  const auto fit = invoke({"fit", "--config", cfg.string(), "--quiet", "--threads", "1"});
  ASSERT_EQ(fit.code, 0) << fit.err;
  const auto out = dir_ / "a";
  for (const char* f : {"summary.json", "report.txt", "ensemble.json", "fit.cbor"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(std::distance(fs::directory_iterator(out), fs::directory_iterator()), 7);

  const auto from_fit = invoke({"report", "--fit", (out / "fit.cbor").string(), "--json", (dir_ / "r.json").string()});
  ASSERT_EQ(from_fit.code, 0) << from_fit.err;
  EXPECT_EQ(from_fit.out, slurp(out / "report.txt"));
  EXPECT_EQ(slurp(dir_ / "r.json"), slurp(out / "summary.json"));
  const auto from_summary = invoke({"report", "--summary", (out / "summary.json").string()});
  EXPECT_EQ(from_summary.out, from_fit.out);
  EXPECT_NE(invoke({"report", "--summary", (out / "summary.json").string(), "--bf", "BF01"}).out.find("Inclusion BF01"),
            std::string::npos);

  const auto trace = invoke({"plot", "--fit", (out / "fit.cbor").string(), "--kind", "trace", "--parameter", "mu"});
  ASSERT_EQ(trace.code, 0) << trace.err;
  EXPECT_EQ(trace.out, slurp(out / "trace_mu.svg"));
  EXPECT_EQ(invoke({"plot", "--fit", (out / "fit.cbor").string(), "--kind", "bubble"}).code, 1);
  EXPECT_EQ(invoke({"report", "--fit", (dir_ / "nothing.cbor").string()}).code, 1);
}

TEST_F(CliTest, PipelinePropertySameSeedSameBytes) {
  ASSERT_EQ(invoke({"fit", "--config", write_config("x").string(), "--quiet", "--seed", "1", "--threads", "2"}).code, 0);
  ASSERT_EQ(invoke({"fit", "--config", write_config("y").string(), "--quiet", "--seed", "1", "--threads", "1"}).code, 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "x")) {
    const auto name = e.path().filename();
    if (name == "fit.cbor") continue;  // holds the resolved output directory
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "y" / name)) << name;
    ++compared;
  }
  EXPECT_EQ(compared, 6u);
  ASSERT_EQ(invoke({"fit", "--config", write_config("z").string(), "--quiet", "--seed", "2", "--threads", "1"}).code, 0);
  EXPECT_NE(slurp(dir_ / "x" / "summary.json"), slurp(dir_ / "z" / "summary.json"));
}
