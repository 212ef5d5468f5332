#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dbridge/io.hpp"
#include "dbridge/model_spec.hpp"

using namespace dbridge;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dbridge_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const fs::path& file, const std::string& text) { std::ofstream(dir_ / file) << text; }

  fs::path dir_;
};

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0})
    EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST_F(TempDir, PathCsvRoundTrip) {
  const GridPath p(0.5, 0.25, {1.0 / 3.0, -2.0, 1e-17});
  write_path_csv(dir_ / "p.csv", p);
  const CsvTable t = read_csv(dir_ / "p.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "x"}));
  EXPECT_EQ(t.column("x"), p.values);
  EXPECT_EQ(t.column("t"), (std::vector<double>{0.5, 0.75, 1.0}));
  EXPECT_EQ(read_sample_csv(dir_ / "p.csv"), p.values);
  EXPECT_THROW(t.column("y"), UsageError);
}

TEST_F(TempDir, WritePathsSwitchesToLongFormat) {
  std::vector<GridPath> few(3, GridPath(0.0, 0.5, {0.0, 1.0, 2.0}));
  const auto names = write_paths(dir_ / "few", "bridge", few);
  EXPECT_EQ(names, (std::vector<std::string>{"bridge_00000.csv", "bridge_00001.csv", "bridge_00002.csv"}));
  std::vector<GridPath> many(kMaxSeparatePathFiles + 1, GridPath(0.0, 1.0, {0.0, 1.0}));
  const auto one = write_paths(dir_ / "many", "bridge", many);
  ASSERT_EQ(one.size(), 1u);
  const CsvTable t = read_csv(dir_ / "many" / one[0]);
  EXPECT_EQ(t.header, (std::vector<std::string>{"sample_id", "t", "x"}));
  EXPECT_EQ(t.columns[0].size(), 2 * many.size());
  EXPECT_EQ(t.columns[0].back(), static_cast<double>(kMaxSeparatePathFiles));
}

TEST_F(TempDir, DataCsvRoundTripAndErrors) {
  const DiscreteSample d({0.0, 1.0, 2.5}, {0.1, -0.2, 3.0});
  write_data_csv(dir_ / "d.csv", d);
  const DiscreteSample back = read_data_csv(dir_ / "d.csv");
  EXPECT_EQ(back.times, d.times);
  EXPECT_EQ(back.values, d.values);

  write("bad.csv", "t,x\n0,1\n1,oops\n");
  EXPECT_THROW(read_data_csv(dir_ / "bad.csv"), UsageError);
  write("ragged.csv", "t,x\n0,1,2\n");
  EXPECT_THROW(read_csv(dir_ / "ragged.csv"), UsageError);
  write("decreasing.csv", "t,x\n1,1\n0,2\n");
  EXPECT_THROW(read_data_csv(dir_ / "decreasing.csv"), UsageError);
  write("crlf.csv", "t, x\r\n0, 1\r\n1, 2\r\n");
  EXPECT_EQ(read_data_csv(dir_ / "crlf.csv").values, (std::vector<double>{1, 2}));
  EXPECT_THROW(read_csv(dir_ / "missing.csv"), IoError);
}

TEST_F(TempDir, JsonRoundTripAndErrors) {
  Json j{{"a", 1.5}, {"b", {1, 2, 3}}};
  write_json(dir_ / "x.json", j);
  EXPECT_EQ(read_json(dir_ / "x.json"), j);
  write("bad.json", "{ not json");
  EXPECT_THROW(read_json(dir_ / "bad.json"), UsageError);
  EXPECT_THROW(read_json(dir_ / "none.json"), IoError);
}

TEST_F(TempDir, UnwritableTargetIsAnIoError) {
  write("file", "x");
  EXPECT_THROW(write_json(dir_ / "file" / "sub" / "x.json", Json::object()), IoError);
}

TEST(ModelSpec, ParsesAndBuildsBuiltInModels) {
  const ModelSpec s = parse_model_spec(Json::parse(
      R"({"name": "cir", "parameters": {"kappa": 1, "mu": 2, "sigma": 0.5}, "state_interval": [0, "inf"]})"));
  EXPECT_EQ(s.name, "cir");
  ASSERT_TRUE(s.state_interval.has_value());
  EXPECT_EQ(s.state_interval->upper, kInf);
  const AnyModel m = make_model(s);
  ASSERT_TRUE(std::holds_alternative<SquareRootDiffusion>(m));
  EXPECT_EQ(std::get<SquareRootDiffusion>(m).mu, 2.0);

  const ModelSpec back = parse_model_spec(to_json(s));
  EXPECT_EQ(back.parameters, s.parameters);
  EXPECT_EQ(back.state_interval->lower, 0.0);

  const AnyModel ou = make_model(parse_model_spec(Json::parse(
      R"({"name": "ou", "parameters": {"theta": 0.5, "sigma": 1}, "state_interval": [null, null], "reference_point": 0})")));
  EXPECT_EQ(std::get<OrnsteinUhlenbeck>(ou).theta, 0.5);
}

TEST(ModelSpec, Errors) {
  EXPECT_THROW(parse_model_spec(Json::array()), UsageError);
  EXPECT_THROW(parse_model_spec(Json::parse(R"({"parameters": {}})")), UsageError);
  EXPECT_THROW(parse_model_spec(Json::parse(R"({"name": "ou", "parameters": {"theta": "x"}})")), UsageError);
  EXPECT_THROW(parse_model_spec(Json::parse(R"({"name": "ou", "state_interval": [0]})")), UsageError);
  EXPECT_THROW(make_model(parse_model_spec(Json::parse(R"({"name": "gbm"})"))), UsageError);
  EXPECT_THROW(make_model(parse_model_spec(Json::parse(R"({"name": "ou", "parameters": {"theta": 1}})"))),
               UsageError);
  EXPECT_THROW(make_model(parse_model_spec(Json::parse(
                   R"({"name": "ou", "parameters": {"theta": 1, "sigma": 1}, "state_interval": [0, "inf"]})"))),
               UsageError);
  EXPECT_THROW(make_model(parse_model_spec(Json::parse(
                   R"({"name": "ou", "parameters": {"theta": 1, "sigma": 1}, "reference_point": 2})"))),
               UsageError);
  EXPECT_THROW(make_model(parse_model_spec(Json::parse(R"({"name": "ou", "parameters": {"theta": -1, "sigma": 1}})"))),
               UsageError);
}
