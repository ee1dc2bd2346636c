// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

// Drives run_cli in-process against a scratch directory.

#include "qtune/cli.hpp"
#include "qtune/container.hpp"
#include "qtune/mixed_precision.hpp"
#include "qtune/report.hpp"
#include "qtune/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace qtune;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "qtune");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::size_t line_count(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

Json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return Json::parse(in);
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() / ("qtune_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void expect_no_temp_files() const
    {
        for (const auto& e : fs::directory_iterator(dir_)) {
            EXPECT_NE(e.path().extension(), ".tmp") << e.path();
        }
    }

    void expect_usage_error(const std::vector<std::string>& args) const
    {
        const CliRun r = cli(args);
        EXPECT_EQ(r.code, 2) << r.err;
        EXPECT_EQ(line_count(r.err), 1U) << r.err;
        EXPECT_EQ(r.err.rfind("qtune: error: ", 0), 0U) << r.err;
        EXPECT_TRUE(r.out.empty()) << r.out;
    }

    fs::path dir_;
};

} // namespace

TEST_F(CliTest, VersionAndHelp)
{
    CliRun r = cli({"--version"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("0.1.0"), std::string::npos);
    r = cli({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("quantize"), std::string::npos);
}

TEST_F(CliTest, UsageErrors)
{
    expect_usage_error({});
    expect_usage_error({"quantize", "--bogus"});
    expect_usage_error({"quantize", "--in", path("missing.pqtn"), "--out", path("o.pqtn")});
    ASSERT_EQ(cli({"generate", "--rows", "4", "--cols", "4", "--out", path("g.pqtn")}).code, 0);
    expect_usage_error({"quantize", "--in", path("g.pqtn"), "--out", path("o.pqtn"), "--bits", "3"});
    expect_usage_error({"quantize", "--in", path("g.pqtn"), "--out", path("o.pqtn"), "--strategy", "nope"});
    expect_usage_error({"toy-train", "--modes", "full,full"});
    expect_usage_error({"plan", "--layers", "0"});

    {
        std::ofstream f(path("bad.pqtn"), std::ios::binary);
        f << "PQTX\x01";
    }
    expect_usage_error({"error-report", "--in", path("bad.pqtn")});
    EXPECT_FALSE(fs::exists(path("o.pqtn")));
}

TEST_F(CliTest, QuantizeDequantizeMatchesLibraryError)
{
    ASSERT_EQ(cli({"generate", "--rows", "32", "--cols", "48", "--count", "2", "--seed", "7", "--out", path("w.pqtn")})
                  .code,
              0);
    const CliRun q = cli({"quantize", "--in", path("w.pqtn"), "--out", path("q.pqtn"), "--bits", "4", "--strategy",
                       "minmax", "--granularity", "row"});
    ASSERT_EQ(q.code, 0) << q.err;
    EXPECT_EQ(q.out, "quantized 2 tensor(s) to 4-bit minmax/row\n");
    // Quantizing twice is refused.
    expect_usage_error({"quantize", "--in", path("q.pqtn"), "--out", path("qq.pqtn")});

    ASSERT_EQ(cli({"dequantize", "--in", path("q.pqtn"), "--out", path("d.pqtn")}).code, 0);
    const auto orig = load_container(path("w.pqtn"));
    const auto back = load_container(path("d.pqtn"));
    ASSERT_EQ(back.size(), 2U);
    const QuantConfig cfg{4, Strategy::MinMax, Granularity::PerRow};
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].name, orig[i].name);
        const Matrix& m = std::get<Matrix>(orig[i].value);
        EXPECT_EQ(l2_distance(m, std::get<Matrix>(back[i].value)), quant_error(m, cfg));
    }
    expect_no_temp_files();
}

TEST_F(CliTest, ErrorReportMatchesLibrary)
{
    ASSERT_EQ(cli({"generate", "--rows", "16", "--cols", "20", "--out", path("w.pqtn")}).code, 0);
    const CliRun r = cli({"error-report", "--in", path("w.pqtn"), "--bits", "2,8", "--granularity", "tensor,row",
                       "--per-dim"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json doc = Json::parse(r.out);
    EXPECT_EQ(doc["schema_version"], kReportSchemaVersion);
    EXPECT_EQ(doc["command"], "error-report");
    const Matrix m = std::get<Matrix>(load_container(path("w.pqtn"))[0].value);
    const auto& errors = doc["results"]["tensors"][0]["errors"];
    ASSERT_EQ(errors.size(), 2U * 3U * 2U);
    for (const auto& e : errors) {
        const QuantConfig c{e["bits"].get<int>(), parse_strategy(e["strategy"].get<std::string>()),
                            parse_granularity(e["granularity"].get<std::string>())};
        EXPECT_EQ(e["error"].get<double>(), quant_error(m, c));
        EXPECT_EQ(e["per_dim"].get<std::vector<double>>(), quant_error_per_column(m, c));
    }
}

TEST_F(CliTest, OutliersRatioString)
{
    ASSERT_EQ(cli({"generate", "--rows", "8", "--cols", "1024", "--outlier-fraction", "0.01", "--out",
                   path("w.pqtn")})
                  .code,
              0);
    const CliRun r = cli({"outliers", "--in", path("w.pqtn"), "--r", "20", "--json", path("o.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("trainable ratio 1.95%"), std::string::npos) << r.out;
    const Json doc = read_json(path("o.json"));
    const auto& t = doc["results"]["tensors"][0];
    EXPECT_EQ(t["trainable_ratio"], "1.95%");
    EXPECT_EQ(t["selected_dims"].size(), 20U);
    const Matrix m = std::get<Matrix>(load_container(path("w.pqtn"))[0].value);
    EXPECT_EQ(t["outlier_count"].get<std::size_t>(), detect_outliers(m).total());
    expect_no_temp_files();
}

TEST_F(CliTest, PlanAndPlanEval)
{
    const CliRun p = cli({"plan", "--layers", "6", "--region", "bottom-third", "--out", path("p.json")});
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_EQ(p.out, "layers 1-2: 2-bit, layers 3-6: 4-bit\n");
    EXPECT_EQ(read_json(path("p.json")).get<std::vector<int>>(), (std::vector<int>{2, 2, 4, 4, 4, 4}));
    EXPECT_EQ(cli({"plan", "--layers", "3"}).out, "[4,4,4]\n");

    ASSERT_EQ(cli({"generate", "--rows", "12", "--cols", "12", "--count", "6", "--out", path("w.pqtn")}).code, 0);
    const CliRun r = cli({"plan-eval", "--in", path("w.pqtn"), "--plan", path("p.json"), "--strategy", "mse"});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json doc = Json::parse(r.out);
    std::vector<Matrix> layers;
    for (const auto& t : load_container(path("w.pqtn"))) {
        layers.push_back(std::get<Matrix>(t.value));
    }
    const PlanEvaluation eval =
        apply_plan(layers, LayerPlan{{2, 2, 4, 4, 4, 4}}, Strategy::MSE, Granularity::PerTensor);
    EXPECT_EQ(doc["results"]["total_error"].get<double>(), eval.total_error);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(doc["results"]["layers"][i]["layer"], i + 1);
        EXPECT_EQ(doc["results"]["layers"][i]["error"].get<double>(), eval.layer_errors[i]);
    }

    // A plan for the wrong depth is rejected.
    ASSERT_EQ(cli({"plan", "--layers", "5", "--out", path("p5.json")}).code, 0);
    expect_usage_error({"plan-eval", "--in", path("w.pqtn"), "--plan", path("p5.json")});
}

TEST_F(CliTest, ToyTrainIsDeterministic)
{
    const std::vector<std::string> args{"toy-train", "--steps", "100", "--modes", "full,outlier,frozen", "--seed", "3"};
    const CliRun a = cli(args);
    const CliRun b = cli(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const Json doc = Json::parse(a.out);
    EXPECT_EQ(doc["command"], "toy-train");
    EXPECT_EQ(doc["results"]["pipeline"]["modes"].size(), 3U);
    EXPECT_LT(doc["results"]["teacher"]["pretrain_loss"].get<double>(), 1e-3);

    const CliRun c = cli({"toy-train", "--steps", "100", "--modes", "full", "--seed", "4"});
    EXPECT_NE(Json::parse(c.out)["results"]["pipeline"], doc["results"]["pipeline"]);
}
