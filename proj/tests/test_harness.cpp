#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bvm/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bvm;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.experiment = "unit";
  cfg.family = "multinomial";
  cfg.sweep = {{1, 0, 0, 50}, {1, 0, 0, 3200}};
  cfg.metrics = {"tv"};
  cfg.replications = 1;
  cfg.seed = 9;
  cfg.seed_present = true;
  cfg.quadrature_nodes = 64;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config validation produces field-level messages") {
  ExperimentConfig cfg = small_config();
  cfg.metrics.clear();
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("metrics"), ConfigInvalid);
  cfg = small_config();
  cfg.sweep.clear();
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("sweep"), ConfigInvalid);
  cfg = small_config();
  cfg.seed_present = false;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("seed"), ConfigInvalid);
  cfg = small_config();
  cfg.family = "bogus";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("family"), ConfigInvalid);
}

TEST_CASE("config json round trip") {
  ExperimentConfig cfg = small_config();
  ExperimentConfig back = ExperimentConfig::from_json(cfg.canonical_json());
  CHECK(back.experiment == cfg.experiment);
  CHECK(back.sweep.size() == 2);
  CHECK(back.digest() == cfg.digest());
}

TEST_CASE("digest is stable and sensitive to semantic fields") {
  ExperimentConfig cfg = small_config();
  std::string d0 = cfg.digest();
  CHECK(d0 == cfg.digest());
  ExperimentConfig other = small_config();
  other.seed = 10;
  CHECK(other.digest() != d0);
  other = small_config();
  other.quadrature_nodes = 128;
  CHECK(other.digest() != d0);
}

TEST_CASE("tv sweep produces decreasing values matching the library oracle") {
  ExperimentConfig cfg = small_config();
  std::vector<RunRecord> records = run(cfg);
  REQUIRE(records.size() == 2);
  CHECK(records[0].n == 50);
  CHECK(records[1].n == 3200);
  CHECK(records[1].value < records[0].value);

  // Recompute record 0 directly through the library.
  MultinomialSpec spec;
  spec.probs = Eigen::VectorXd::Constant(2, 0.5);
  ExpFamilyModel model = build_multinomial(spec);
  LocalFrame frame = LocalFrame::at(model);
  Eigen::MatrixXd data = sample_sufficient(model, model.theta0, 50, records[0].seed);
  LocalPosterior post =
      LocalPosterior::make(frame, make_summary(frame, data), PriorSpec::flat());
  DistanceEstimate est = tv_distance_quadrature(post, QuadratureGrid{64, 10.0});
  CHECK(records[0].value == est.estimate);
  CHECK(records[0].error == est.error);
}

TEST_CASE("reruns and worker counts reproduce results bit-for-bit") {
  ExperimentConfig cfg = small_config();
  std::vector<RunRecord> a = run(cfg, 1);
  std::vector<RunRecord> b = run(cfg, 1);
  std::vector<RunRecord> c = run(cfg, 4);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].value == b[i].value);
    CHECK(a[i].value == c[i].value);
    CHECK(a[i].seed == c[i].seed);
  }
}

TEST_CASE("unsupported metric becomes an error row, not an abort") {
  ExperimentConfig cfg = small_config();
  cfg.metrics = {"mle-rate"};  // undefined for a flat family
  std::vector<RunRecord> records = run(cfg);
  REQUIRE(records.size() == 2);
  for (const auto& r : records) {
    CHECK(r.failed);
    CHECK(r.metric == "mle-rate!UnsupportedMethod");
    CHECK(std::isnan(r.value));
  }
}

TEST_CASE("emit_table writes the exact CSV header and sorted rows") {
  RunRecord r1{"e", "f", 2, 2, 100, 0, "tv", 0.5, 0.01, 7, "abc", 0};
  RunRecord r2{"e", "f", 1, 1, 100, 0, "tv", 0.25, 0.01, 8, "abc", 0};
  std::string path = temp_path("bvm_table_test.csv");
  emit_table({r1, r2}, path, "csv");
  std::string body = slurp(path);
  CHECK(body.rfind("experiment,family,d,d1,n,replicate,metric,value,error,seed,"
                   "config_digest,wall_time_ms\n", 0) == 0);
  CHECK(body.find(",1,1,") < body.find(",2,2,"));  // sorted by d first
  std::filesystem::remove(path);
}

TEST_CASE("csv serializes 17 significant digits round-trip") {
  RunRecord r{"e", "f", 1, 1, 10, 0, "tv", 0.1234567890123456789, 1.0 / 3.0, 1, "d", 0};
  std::string path = temp_path("bvm_digits_test.csv");
  emit_table({r}, path, "csv");
  std::string body = slurp(path);
  std::filesystem::remove(path);
  std::size_t line_start = body.find('\n') + 1;
  std::stringstream row(body.substr(line_start));
  std::string field;
  for (int i = 0; i < 8; ++i) std::getline(row, field, ',');
  CHECK(std::strtod(field.c_str(), nullptr) == r.value);
}

TEST_CASE("json table round-trips to identical records") {
  ExperimentConfig cfg = small_config();
  std::vector<RunRecord> records = run(cfg);
  std::string path = temp_path("bvm_json_test.json");
  emit_table(records, path, "json");
  std::vector<RunRecord> back = records_from_json_file(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == records.size());
  detail::sort_records(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].value == records[i].value);
    CHECK(back[i].error == records[i].error);
    CHECK(back[i].seed == records[i].seed);
    CHECK(back[i].metric == records[i].metric);
  }
}

TEST_CASE("emit_table refuses empty input and unknown formats") {
  CHECK_THROWS_AS(emit_table({}, temp_path("x.csv"), "csv"), std::invalid_argument);
  RunRecord r{"e", "f", 1, 1, 10, 0, "tv", 1.0, 0.0, 1, "d", 0};
  CHECK_THROWS_AS(emit_table({r}, temp_path("x.xml"), "xml"), std::invalid_argument);
}

TEST_CASE("plotdata slope of an exact power law") {
  std::vector<RunRecord> records;
  for (int n : {50, 100, 200, 400, 800}) {
    RunRecord r{"e", "f", 1, 1, n, 0, "tv", std::pow(n, -0.5), 0.0, 1, "d", 0};
    records.push_back(r);
  }
  std::string path = temp_path("bvm_plot_test.dat");
  emit_plotdata(records, "n", "tv", {}, path);
  std::string body = slurp(path);
  std::filesystem::remove(path);
  std::size_t pos = body.find("# loglog_slope: ");
  REQUIRE(pos != std::string::npos);
  double slope = std::strtod(body.c_str() + pos + 16, nullptr);
  CHECK(std::abs(slope + 0.5) < 1e-9);
}

TEST_CASE("plotdata groups by requested fields") {
  std::vector<RunRecord> records;
  for (int d : {1, 2})
    for (int n : {100, 200}) {
      RunRecord r{"e", "f", d, d, n, 0, "tv", 1.0 / n, 0.0, 1, "g", 0};
      records.push_back(r);
    }
  std::string path = temp_path("bvm_plot_group.dat");
  emit_plotdata(records, "n", "tv", {"d"}, path);
  std::string body = slurp(path);
  std::filesystem::remove(path);
  int blocks = 0;
  for (std::size_t p = body.find("# group:"); p != std::string::npos;
       p = body.find("# group:", p + 1))
    ++blocks;
  CHECK(blocks == 2);
  CHECK_THROWS_AS(emit_plotdata(records, "bogus", "tv", {}, path), UnknownField);
}

TEST_CASE("atomic write leaves no temp file behind") {
  ExperimentConfig cfg = small_config();
  std::vector<RunRecord> records = run(cfg);
  std::string path = temp_path("bvm_atomic_test.csv");
  emit_table(records, path, "csv");
  CHECK(std::filesystem::exists(path));
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove(path);
}
