#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "physrec/datagen.hpp"
#include "physrec/experiment.hpp"
#include "physrec/metrics.hpp"
#include "physrec/realdata.hpp"
#include "test_support.hpp"

using namespace physrec;
using physrec::testing::vec;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("physrec_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_sweep() {
  ExperimentConfig c;
  c.name = "tiny";
  c.system = std::string(PHYSREC_SOURCE_DIR) + "/data/systems/scalar.json";
  c.preset = "scalar";
  c.architectures = {"ltc", "sindyc"};
  c.sampling_factors = {1, 2};
  c.injected_shifts = {{0.0}, {3.0}};
  c.shift_search = {false, true};
  c.generation.traces = 4;
  c.generation.samples = 80;
  c.k_window = 30;
  c.train.epochs = 2;
  c.train.hidden = 4;
  c.train.head_hidden = {4};
  c.train.batch_size = 2;
  return c;
}

ReportRow sample_row() {
  ReportRow r;
  r.digest = "abc123";
  r.experiment = "c5";
  r.system = "bergman_aid";
  r.arch = "ltc";
  r.seed = 3;
  r.sampling_factor = 2;
  r.dt = 10.0;
  r.injected_shift = {3.0};
  r.shift_search = true;
  r.rmse_theta = 0.125;
  r.rmse_y = 0.1 + 0.2;
  r.degradation_y = 12.5;
  r.coeff_names = {"a", "b"};
  r.coeff_errors = {-0.25, 1e-17};
  r.shifts = {2.75};
  r.runtime_s = 1.5;
  return r;
}

}  // namespace

TEST(Metrics, HandCases) {
  EXPECT_EQ(rmse_theta(vec({1.0, 2.0}), vec({1.0, 2.0})), 0.0);
  EXPECT_NEAR(rmse_theta(vec({3.0, 4.0}), vec({0.0, 0.0})), 3.5355339059327378, 1e-12);
  EXPECT_EQ(rmse_y(Matrix{{1.0, 2.0}}, Matrix{{1.0, 2.0}}), 0.0);
  EXPECT_NEAR(rmse_y(Matrix{{3.0, 4.0}}, Matrix{{0.0, 0.0}}), 3.5355339059327378, 1e-12);
  EXPECT_THROW(rmse_theta(vec({1.0}), vec({1.0, 2.0})), ContractViolation);
  EXPECT_THROW(rmse_y(Matrix::Zero(1, 2), Matrix::Zero(2, 2)), ContractViolation);
}

TEST(Metrics, Degradation) {
  EXPECT_EQ(degradation_pct(2.0, 2.0), 0.0);
  EXPECT_EQ(degradation_pct(3.0, 2.0), 50.0);
  EXPECT_THROW(degradation_pct(1.0, 0.0), ContractViolation);
}

TEST(MetricProperties, MetricAxiomsAndScaling) {
  const Vector a = vec({0.5, -2.0, 3.0}), b = vec({1.0, 1.0, -1.0});
  EXPECT_GT(rmse_theta(a, b), 0.0);
  EXPECT_EQ(rmse_theta(a, b), rmse_theta(b, a));
  for (double c : {-3.0, 0.5, 7.0}) EXPECT_NEAR(rmse_theta(c * a, c * b), std::abs(c) * rmse_theta(a, b), 1e-12);
  const Matrix y1{{1.0, 2.0, 3.0}, {0.0, 0.0, 1.0}};
  const Matrix y2{{1.5, 2.0, 2.0}, {0.0, 1.0, 1.0}};
  EXPECT_EQ(rmse_y(y1, y2), rmse_y(y2, y1));
  EXPECT_GT(rmse_y(y1, y2), 0.0);
}

TEST(Generation, AidPresetShape) {
  const auto [spec, theta] = builtin_system("bergman_aid");
  const Dataset ds = generate_benchmark_data(spec, theta, "aid", 1);
  ASSERT_EQ(ds.traces.size(), 14u);
  for (const Trace& tr : ds.traces) EXPECT_EQ(tr.k(), 200);
  ASSERT_EQ(ds.events.size(), 14u);
  for (const auto& ev : ds.events)
    for (const Event& e : ev) {
      if (e.channel == 1) {
        EXPECT_GE(e.t, 15.0);
        EXPECT_LE(e.t, 400.0);
      }
    }
}

TEST(Generation, LotkaVolterraWindows) {
  const auto [spec, theta] = builtin_system("lotka_volterra");
  const Dataset ds = generate_benchmark_data(spec, theta, "lotka_volterra", 1);
  std::vector<Trace> windows;
  for (const Trace& tr : ds.traces) windows.push_back(resample(tr, 1, 200));
  const BatchSet set = make_batches(windows, 32, 200, 0.75, 1);
  EXPECT_EQ(set.instances.size(), 64u);
}

TEST(Generation, SameSeedSameBytes) {
  const auto [spec, theta] = builtin_system("bergman_aid");
  TempDir a("gen_a"), b("gen_b");
  write_dataset(generate_benchmark_data(spec, theta, "aid", 7), a.path().string());
  write_dataset(generate_benchmark_data(spec, theta, "aid", 7), b.path().string());
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a.path())) {
    ++files;
    EXPECT_EQ(read_text(entry.path().string()), read_text((b.path() / entry.path().filename()).string()))
        << entry.path().filename();
  }
  EXPECT_GT(files, 14u);
  const Dataset back = read_dataset(a.path().string());
  EXPECT_EQ(back.traces.size(), 14u);
  EXPECT_EQ(back.theta_true, theta);
}

TEST(Generation, Errors) {
  const auto [spec, theta] = builtin_system("lotka_volterra");
  EXPECT_THROW(generate_benchmark_data(spec, theta, "nope", 1), LookupError);
  EXPECT_THROW(generate_benchmark_data(spec, theta, "aid", 1), ContractViolation);
}

TEST(RealData, WellFormedFileIsOneTrace) {
  TempDir dir("real_ok");
  write_text(dir.file("t.csv"), "t,cgm,basal\n0,5.5,1\n5,5.6,1\n10,5.8,0.5\n15,6.0,0.5\n");
  RealSchema schema;
  schema.observed = {"cgm"};
  schema.inputs = {"basal"};
  const RealData d = load_real_csv(dir.file("t.csv"), "", schema);
  ASSERT_EQ(d.segments.size(), 1u);
  EXPECT_EQ(d.segments[0].k(), 4);
  EXPECT_EQ(d.segments[0].dt, 5.0);
  EXPECT_EQ(d.segments[0].u(0, 2), 0.5);
}

TEST(RealData, GapSplitsSegments) {
  TempDir dir("real_gap");
  write_text(dir.file("t.csv"), "t,cgm\n0,5\n5,5\n10,5\n25,6\n30,6\n35,6\n");
  write_text(dir.file("e.csv"), "t,channel,magnitude\n5,0,40\n30,0,10\n");
  RealSchema schema;
  schema.observed = {"cgm"};
  schema.event_channels = {"meal"};
  const RealData d = load_real_csv(dir.file("t.csv"), dir.file("e.csv"), schema);
  ASSERT_EQ(d.segments.size(), 2u);
  EXPECT_EQ(d.segments[1].t0, 25.0);
  EXPECT_EQ(d.segments[0].u(0, 1), 8.0);
  EXPECT_EQ(d.segments[1].u(0, 1), 2.0);
}

TEST(RealData, Errors) {
  TempDir dir("real_bad");
  write_text(dir.file("t.csv"), "t,cgm\n0,5\n5,5\n12,5\n");
  write_text(dir.file("ok.csv"), "t,cgm\n0,5\n5,5\n10,5\n");
  write_text(dir.file("neg.csv"), "t,channel,magnitude\n5,0,1\n-1,0,2\n");
  RealSchema schema;
  schema.observed = {"cgm"};
  try {
    load_real_csv(dir.file("t.csv"), "", schema);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 4"), std::string::npos);
  }
  schema.event_channels = {"meal"};
  try {
    load_real_csv(dir.file("ok.csv"), dir.file("neg.csv"), schema);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
  schema.observed = {"glucose"};
  EXPECT_THROW(load_real_csv(dir.file("ok.csv"), "", schema), LookupError);
}

TEST(Report, EmptyRowsGiveHeaderOnly) {
  const std::string csv = format_report({}, ReportFormat::csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(csv.rfind("digest,arch,system,sampling_factor,rmse_theta,rmse_y,shifts", 0), 0u);
  EXPECT_EQ(format_report({}, ReportFormat::json), "[]\n");
}

TEST(Report, JsonRoundTrip) {
  ReportRow a = sample_row();
  ReportRow b = sample_row();
  b.arch = "sindyc";
  b.status = "diverged";
  b.rmse_y = std::numeric_limits<double>::quiet_NaN();
  b.degradation_y.reset();
  std::vector<ReportRow> rows{a, b};
  const auto back = parse_report_json(format_report(rows, ReportFormat::json, true));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  ReportRow got = back[1];
  EXPECT_TRUE(std::isnan(got.rmse_y));
  got.rmse_y = 0.0;
  b.rmse_y = 0.0;
  EXPECT_EQ(got, b);
}

TEST(Report, CsvColumnOrder) {
  const std::string csv = format_report({sample_row()}, ReportFormat::csv, true);
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header,
            "digest,arch,system,sampling_factor,rmse_theta,rmse_y,shifts,err_a,err_b,runtime_s,seed,experiment,dt,"
            "perturbation,injected_shift,shift_search,degradation_theta,degradation_y,status");
  EXPECT_EQ(format_report({sample_row()}, ReportFormat::csv).find("runtime_s"), std::string::npos);
}

TEST(Experiment, ConfigRoundTripAndErrors) {
  const ExperimentConfig c = default_experiment("c5");
  const ExperimentConfig back = experiment_from_json(experiment_to_json(c));
  EXPECT_EQ(experiment_to_json(back), experiment_to_json(c));
  EXPECT_THROW(default_experiment("c9"), LookupError);
  try {
    experiment_from_json(R"({"train": {"epochs": 3}, "sindy": {"tresh": 1}})");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("$.sindy.tresh"), std::string::npos);
  }
  const ExperimentConfig o = experiment_from_json(R"({"seed": 4, "architecture": "node", "train": {"epochs": 3}})");
  EXPECT_EQ(o.seeds, std::vector<std::uint64_t>{4});
  EXPECT_EQ(o.architectures, std::vector<std::string>{"node"});
  EXPECT_EQ(o.train.epochs, 3);
  EXPECT_EQ(o.train.lr, TrainConfig{}.lr);
}

TEST(Experiment, EmptySweepGivesEmptyReport) {
  ExperimentConfig c = tiny_sweep();
  c.architectures.clear();
  EXPECT_TRUE(run_experiment(c).empty());
}

TEST(Experiment, SweepRowsAndDeterminism) {
  const ExperimentConfig c = tiny_sweep();
  const auto rows = run_experiment(c);
  // factors x shifts x search x archs
  ASSERT_EQ(rows.size(), 2u * 2u * 2u * 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "ok") << r.arch;
    EXPECT_TRUE(std::isfinite(r.rmse_theta));
    if (r.injected_shift == std::vector<double>{3.0} && r.arch != "sindyc") EXPECT_TRUE(r.degradation_y.has_value());
  }
  TempDir dir("sweep");
  emit_report(rows, ReportFormat::csv, dir.file("a.csv"));
  emit_report(run_experiment(c), ReportFormat::csv, dir.file("b.csv"));
  EXPECT_EQ(read_text(dir.file("a.csv")), read_text(dir.file("b.csv")));
}
