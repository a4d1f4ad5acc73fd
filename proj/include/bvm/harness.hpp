#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bvm/curved.hpp"
#include "bvm/diagnostics.hpp"
#include "bvm/el.hpp"
#include "bvm/expfam.hpp"
#include "bvm/local.hpp"
#include "bvm/rng.hpp"

// Experiment runner: JSON configs, deterministic per-task seeding, worker
// pools whose output is invariant to the worker count, and flat-file outputs
// (CSV, JSON, gnuplot-style plot data).

namespace bvm {

struct ConfigInvalid : std::runtime_error {
  explicit ConfigInvalid(const std::string& what) : std::runtime_error(what) {}
};

struct IoFailure : std::runtime_error {
  explicit IoFailure(const std::string& what) : std::runtime_error(what) {}
};

struct UnknownField : std::runtime_error {
  explicit UnknownField(const std::string& what) : std::runtime_error(what) {}
};

struct SweepCell {
  int d = 0;  // ambient (or nominal) dimension; 0 when (d_r, d_c) given
  int d_r = 0;
  int d_c = 0;
  int n = 0;
};

struct ExperimentConfig {
  std::string experiment;
  std::string family;  // multinomial | mv-linear | el-mean | sur-toy | ssem-toy | identity-embed
  std::vector<SweepCell> sweep;
  std::string prior = "flat";  // flat | lipschitz
  double prior_K = 0.0;
  std::vector<std::string> metrics;
  double alpha = 2.0;  // alpha-moment weight exponent
  int replications = 1;
  std::uint64_t seed = 0;
  bool seed_present = false;

  // Method parameters.
  int quadrature_nodes = 128;
  double quadrature_radius = 10.0;
  int importance_budget = 20000;
  double c = 1.0;       // ball scale for lambda/audits
  double c_max = 64.0;  // bisection cap for a_n
  int u_budget = 10000;
  double lemma4_k = 2.0;
  double lemma4_c1 = 1.0;
  double tail_k_bar = 1.0;
  int mle_starts = 8;

  void validate() const {
    std::string bad;
    static const char* families[] = {"multinomial", "mv-linear",  "el-mean",
                                     "sur-toy",     "ssem-toy",   "identity-embed"};
    bool known_family = false;
    for (const char* f : families) known_family = known_family || family == f;
    if (experiment.empty()) bad += " experiment: empty;";
    if (!known_family) bad += " family: unknown '" + family + "';";
    if (sweep.empty()) bad += " sweep: empty;";
    for (const auto& cell : sweep) {
      if (cell.n < 1) bad += " sweep: n >= 1 required;";
      if (cell.d < 1 && (cell.d_r < 1 || cell.d_c < 1))
        bad += " sweep: need d or (d_r, d_c);";
    }
    if (metrics.empty()) bad += " metrics: empty;";
    static const char* known[] = {"tv",        "alpha-moment", "lambda-curve", "a-n",
                                  "lemma-audits", "mle-rate",  "tail-mass",    "growth"};
    for (const auto& m : metrics) {
      bool ok = false;
      for (const char* k : known) ok = ok || m == k;
      if (!ok) bad += " metrics: unknown '" + m + "';";
    }
    if (replications < 1) bad += " replications: >= 1 required;";
    if (!seed_present) bad += " seed: required (no implicit entropy);";
    if (prior != "flat" && prior != "lipschitz") bad += " prior: unknown '" + prior + "';";
    if (!bad.empty()) throw ConfigInvalid("config invalid:" + bad);
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
      cfg.experiment = j.value("experiment", std::string());
      cfg.family = j.value("family", std::string());
      if (j.contains("sweep"))
        for (const auto& cj : j.at("sweep")) {
          SweepCell cell;
          cell.d = cj.value("d", 0);
          cell.d_r = cj.value("d_r", 0);
          cell.d_c = cj.value("d_c", 0);
          cell.n = cj.value("n", 0);
          cfg.sweep.push_back(cell);
        }
      if (j.contains("prior")) {
        if (j.at("prior").is_string()) {
          cfg.prior = j.at("prior").get<std::string>();
        } else {
          cfg.prior = j.at("prior").value("kind", "flat");
          cfg.prior_K = j.at("prior").value("K", 0.0);
        }
      }
      if (j.contains("metrics"))
        for (const auto& m : j.at("metrics")) cfg.metrics.push_back(m.get<std::string>());
      cfg.alpha = j.value("alpha", cfg.alpha);
      cfg.replications = j.value("replications", cfg.replications);
      if (j.contains("seed")) {
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.seed_present = true;
      }
      cfg.quadrature_nodes = j.value("quadrature_nodes", cfg.quadrature_nodes);
      cfg.quadrature_radius = j.value("quadrature_radius", cfg.quadrature_radius);
      cfg.importance_budget = j.value("importance_budget", cfg.importance_budget);
      cfg.c = j.value("c", cfg.c);
      cfg.c_max = j.value("c_max", cfg.c_max);
      cfg.u_budget = j.value("u_budget", cfg.u_budget);
      cfg.lemma4_k = j.value("lemma4_k", cfg.lemma4_k);
      cfg.lemma4_c1 = j.value("lemma4_c1", cfg.lemma4_c1);
      cfg.tail_k_bar = j.value("tail_k_bar", cfg.tail_k_bar);
      cfg.mle_starts = j.value("mle_starts", cfg.mle_starts);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigInvalid(std::string("config parse: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }

  static ExperimentConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("config file not readable: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigInvalid(std::string("config parse: ") + e.what());
    }
    return from_json(j);
  }

  // Canonical form: sorted keys (nlohmann object ordering), normalized
  // numbers (shortest round-trip dump), every semantic field present.
  nlohmann::json canonical_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["family"] = family;
    j["sweep"] = nlohmann::json::array();
    for (const auto& cell : sweep)
      j["sweep"].push_back({{"d", cell.d}, {"d_r", cell.d_r}, {"d_c", cell.d_c}, {"n", cell.n}});
    j["prior"] = {{"kind", prior}, {"K", prior_K}};
    j["metrics"] = metrics;
    j["alpha"] = alpha;
    j["replications"] = replications;
    j["seed"] = seed;
    j["quadrature_nodes"] = quadrature_nodes;
    j["quadrature_radius"] = quadrature_radius;
    j["importance_budget"] = importance_budget;
    j["c"] = c;
    j["c_max"] = c_max;
    j["u_budget"] = u_budget;
    j["lemma4_k"] = lemma4_k;
    j["lemma4_c1"] = lemma4_c1;
    j["tail_k_bar"] = tail_k_bar;
    j["mle_starts"] = mle_starts;
    return j;
  }

  std::string digest() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(canonical_json().dump())));
    return buf;
  }
};

struct RunRecord {
  std::string experiment;
  std::string family;
  int d = 0;
  int d1 = 0;
  int n = 0;
  int replicate = 0;
  std::string metric;  // error rows carry "metric!FailureClass"
  double value = 0.0;
  double error = 0.0;
  std::uint64_t seed = 0;  // the derived per-task seed
  std::string config_digest;
  long long wall_time_ms = 0;  // fixed at 0: outputs are part of the determinism contract
  bool failed = false;
};

// ---------------------------------------------------------------------------
// Family construction

struct BuiltFamily {
  bool curved = false;
  ExpFamilyModel model;  // flat case
  CurvedMap cmap;        // curved case
  int d = 0;             // ambient dimension
  int d1 = 0;            // curved parameter dimension (= d when flat)
};

namespace detail {

inline Eigen::MatrixXd toy_design(int d_c) {
  // I stacked on a row of ones: Z'Z/n = (I + 11')/(d_c + 1), PD.
  Eigen::MatrixXd z(d_c + 1, d_c);
  z.topRows(d_c) = Eigen::MatrixXd::Identity(d_c, d_c);
  z.bottomRows(1).setOnes();
  return z;
}

inline MomentModel el_mean_model(int d) {
  // d+1 equally spaced scalar atoms on [0, 1], mean restriction m(x, eta) = x - eta.
  MomentModel mm;
  for (int j = 0; j <= d; ++j)
    mm.support.push_back(Eigen::VectorXd::Constant(1, static_cast<double>(j) / d));
  mm.moment_fn = builtin_moment_fn("mean", Eigen::VectorXd(), 1).fn;
  mm.n_moments = 1;
  mm.d1 = 1;
  mm.psi_lower = Eigen::VectorXd::Constant(1, 0.1);
  mm.psi_upper = Eigen::VectorXd::Constant(1, 0.9);
  return mm;
}

inline SurSpec sur_toy_spec() {
  SurSpec spec;
  spec.base_spec.d_r = 2;
  spec.base_spec.d_c = 2;
  spec.base_spec.Pi.resize(2, 2);
  spec.base_spec.Pi << 0.8, 0.0, 0.4, 0.6;  // covariate 1 excluded from equation 2
  spec.base_spec.Sigma.resize(2, 2);
  spec.base_spec.Sigma << 1.0, 0.3, 0.3, 1.0;
  spec.base_spec.Z = toy_design(2);
  spec.pattern.resize(2, 2);
  spec.pattern << true, false, true, true;
  spec.lambda_min_floor = 0.05;
  spec.operator_bound = 5.0;
  return spec;
}

inline SsemSpec ssem_toy_spec() {
  SsemSpec spec;
  spec.d_r = 2;
  spec.d_z1 = 1;
  spec.d_z2 = 1;
  spec.beta = Eigen::VectorXd::Constant(1, 0.5);
  spec.gamma = Eigen::VectorXd::Constant(1, 0.3);
  spec.Pi12 = Eigen::MatrixXd::Constant(1, 1, 0.2);
  spec.Pi22 = Eigen::MatrixXd::Constant(1, 1, 0.7);
  spec.Sigma.resize(2, 2);
  spec.Sigma << 1.0, 0.2, 0.2, 1.0;
  spec.Z = toy_design(2);
  return spec;
}

}  // namespace detail

inline BuiltFamily build_family(const std::string& family, const SweepCell& cell) {
  BuiltFamily out;
  if (family == "multinomial") {
    MultinomialSpec spec;
    spec.probs = Eigen::VectorXd::Constant(cell.d + 1, 1.0 / (cell.d + 1));
    out.model = build_multinomial(spec);
    out.d = out.d1 = cell.d;
    return out;
  }
  if (family == "mv-linear") {
    MvLinearSpec spec;
    spec.d_r = std::max(1, cell.d_r);
    spec.d_c = std::max(1, cell.d_c);
    spec.Pi = Eigen::MatrixXd::Constant(spec.d_c, spec.d_r, 0.3);
    spec.Sigma = Eigen::MatrixXd::Identity(spec.d_r, spec.d_r);
    spec.Z = detail::toy_design(spec.d_c);
    out.model = build_mv_linear(spec);
    out.d = out.d1 = out.model.dim;
    return out;
  }
  out.curved = true;
  if (family == "el-mean") {
    int d = std::max(1, cell.d);
    out.cmap = el_curved_map(detail::el_mean_model(d), Eigen::VectorXd::Constant(1, 0.5));
  } else if (family == "sur-toy") {
    out.cmap = sur_map(detail::sur_toy_spec());
  } else if (family == "ssem-toy") {
    out.cmap = ssem_map(detail::ssem_toy_spec());
  } else if (family == "identity-embed") {
    out.cmap = identity_embedding(build_gaussian_location(Eigen::VectorXd::Zero(cell.d)));
  } else {
    throw ConfigInvalid("unknown family: " + family);
  }
  out.d = out.cmap.d;
  out.d1 = out.cmap.d1;
  return out;
}

inline PriorSpec make_prior(const ExperimentConfig& cfg, const Eigen::VectorXd& theta0) {
  if (cfg.prior == "flat") return PriorSpec::flat();
  PriorSpec p;
  double k = cfg.prior_K;
  p.log_density_up_to_constant = [theta0, k](const Eigen::VectorXd& theta) {
    return -k * (theta - theta0).norm();
  };
  p.lipschitz_K = [k](double) { return std::optional<double>(k); };
  return p;
}

// ---------------------------------------------------------------------------
// Task execution

namespace detail {

// Stable failure-class labels for error rows (typeid names are mangled and
// compiler-specific, so the mapping is explicit).
inline std::string failure_class(const std::exception& e) {
  if (dynamic_cast<const PreconditionViolated*>(&e)) return "PreconditionViolated";
  if (dynamic_cast<const UnsupportedMethod*>(&e)) return "UnsupportedMethod";
  if (dynamic_cast<const Infeasible*>(&e)) return "Infeasible";
  if (dynamic_cast<const BoundaryDegenerate*>(&e)) return "BoundaryDegenerate";
  if (dynamic_cast<const DegenerateWeights*>(&e)) return "DegenerateWeights";
  if (dynamic_cast<const DimensionTooLarge*>(&e)) return "DimensionTooLarge";
  if (dynamic_cast<const DegenerateJacobian*>(&e)) return "DegenerateJacobian";
  if (dynamic_cast<const NoConvergedStart*>(&e)) return "NoConvergedStart";
  if (dynamic_cast<const OutOfDomain*>(&e)) return "OutOfDomain";
  if (dynamic_cast<const InvalidSpec*>(&e)) return "InvalidSpec";
  if (dynamic_cast<const InvalidPattern*>(&e)) return "InvalidPattern";
  if (dynamic_cast<const RankDeficient*>(&e)) return "RankDeficient";
  if (dynamic_cast<const DimensionMismatch*>(&e)) return "DimensionMismatch";
  if (dynamic_cast<const ConfigInvalid*>(&e)) return "ConfigInvalid";
  return "Error";
}

inline RunRecord execute_task(const ExperimentConfig& cfg, const SweepCell& cell,
                              int cell_index, int replicate, const std::string& metric,
                              const std::string& digest) {
  RunRecord rec;
  rec.experiment = cfg.experiment;
  rec.family = cfg.family;
  rec.n = cell.n;
  rec.replicate = replicate;
  rec.metric = metric;
  rec.config_digest = digest;
  std::string label = "cell:" + std::to_string(cell_index) + "|rep:" +
                      std::to_string(replicate) + "|metric:" + metric;
  rec.seed = mix_seed(cfg.seed, label);

  try {
    BuiltFamily fam = build_family(cfg.family, cell);
    rec.d = fam.d;
    rec.d1 = fam.d1;

    if (metric == "growth") {
      rec.value = std::pow(static_cast<double>(fam.d), 4.0) / cell.n;
      return rec;
    }

    if (!fam.curved) {
      LocalFrame frame = LocalFrame::at(fam.model);
      PriorSpec prior = make_prior(cfg, frame.theta0);
      auto posterior_for = [&]() {
        Eigen::MatrixXd data =
            sample_sufficient(fam.model, frame.theta0, cell.n, rec.seed);
        return LocalPosterior::make(frame, make_summary(frame, data), prior);
      };
      MomentBoundOptions opts;
      opts.method = fam.model.finite_support() ? BoundMethod::exact_enumeration
                                               : BoundMethod::monte_carlo;

      if (metric == "tv" || metric == "alpha-moment") {
        double alpha = (metric == "tv") ? 0.0 : cfg.alpha;
        LocalPosterior post = posterior_for();
        DistanceEstimate est;
        if (fam.d <= 3) {
          QuadratureGrid grid{cfg.quadrature_nodes, cfg.quadrature_radius};
          est = alpha_moment_distance_quadrature(post, alpha, grid);
        } else {
          est = alpha_moment_distance_importance(post, alpha, cfg.importance_budget,
                                                 mix_seed(rec.seed, "is"));
        }
        rec.value = est.estimate;
        rec.error = est.error;
        return rec;
      }
      if (metric == "lambda-curve") {
        double b1_0 = b1n(fam.model, frame, cell.n, 0.0, opts, mix_seed(rec.seed, "b1"));
        double b2_c = b2n(fam.model, frame, cell.n, cfg.c, opts, mix_seed(rec.seed, "b2"));
        rec.value = lambda_n(b1_0, b2_c, cfg.c, fam.d, cell.n);
        return rec;
      }
      if (metric == "a-n") {
        rec.value = a_n_bisect(fam.model, frame, cell.n, cfg.c_max, opts,
                               mix_seed(rec.seed, "an"));
        return rec;
      }
      if (metric == "lemma-audits") {
        LocalPosterior post = posterior_for();
        Lemma1Report l1 = lemma1_audit(post, cfg.c, cfg.u_budget, mix_seed(rec.seed, "l1"), opts);
        AuditVerdict l3 = lemma3_audit(post, cfg.c, opts, mix_seed(rec.seed, "l3"));
        AuditVerdict l4 = lemma4_audit(post, 16.5 * std::max(4.0 * cfg.lemma4_c1, 1.1),
                                       cfg.lemma4_k, cfg.lemma4_c1, opts,
                                       mix_seed(rec.seed, "l4"));
        bool all = (l1.violations == 0) && l3.holds && l4.holds;
        rec.value = all ? 1.0 : 0.0;
        rec.error = std::max(l1.max_excess_pointwise, l1.max_excess_upper);
        return rec;
      }
      throw UnsupportedMethod("metric '" + metric + "' undefined for flat family");
    }

    // Curved families.
    Eigen::VectorXd theta0 = fam.cmap.map(fam.cmap.eta0);
    Eigen::MatrixXd data = sample_sufficient(fam.cmap.base, theta0, cell.n, rec.seed);
    if (metric == "tv") {
      CurvedLocalPosterior post =
          curved_local_posterior(fam.cmap, make_prior(cfg, theta0), data);
      DistanceEstimate est;
      if (fam.d1 <= 3) {
        QuadratureGrid grid{cfg.quadrature_nodes, cfg.quadrature_radius};
        est = curved_tv_quadrature(post, grid);
      } else {
        est = curved_tv_importance(post, cfg.importance_budget, mix_seed(rec.seed, "is"));
      }
      rec.value = est.estimate;
      rec.error = est.error;
      return rec;
    }
    if (metric == "mle-rate") {
      Eigen::VectorXd x_bar = data.colwise().mean();
      CurvedMleResult mle =
          curved_mle(fam.cmap, x_bar, cell.n, cfg.mle_starts, mix_seed(rec.seed, "mle"));
      rec.value = mle.norm_error;
      return rec;
    }
    if (metric == "tail-mass") {
      CurvedLocalPosterior post =
          curved_local_posterior(fam.cmap, make_prior(cfg, theta0), data);
      rec.value = tail_mass_audit(post, cfg.tail_k_bar);
      return rec;
    }
    throw UnsupportedMethod("metric '" + metric + "' undefined for curved family");
  } catch (const std::exception& e) {
    rec.metric = metric + "!" + failure_class(e);
    rec.value = std::nan("");
    rec.error = std::nan("");
    rec.failed = true;
  }
  return rec;
}

}  // namespace detail

inline std::vector<RunRecord> run(const ExperimentConfig& cfg, int workers = 1) {
  cfg.validate();
  const std::string digest = cfg.digest();
  struct Task {
    int cell_index, replicate;
    std::string metric;
  };
  std::vector<Task> tasks;
  for (int ci = 0; ci < static_cast<int>(cfg.sweep.size()); ++ci)
    for (int r = 0; r < cfg.replications; ++r)
      for (const auto& m : cfg.metrics) tasks.push_back({ci, r, m});

  std::vector<RunRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker_fn = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      records[i] = detail::execute_task(cfg, cfg.sweep[t.cell_index], t.cell_index,
                                        t.replicate, t.metric, digest);
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker_fn);
    for (auto& th : pool) th.join();
  }
  return records;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void sort_records(std::vector<RunRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const RunRecord& a, const RunRecord& b) {
                     if (a.d != b.d) return a.d < b.d;
                     if (a.n != b.n) return a.n < b.n;
                     if (a.replicate != b.replicate) return a.replicate < b.replicate;
                     return a.metric < b.metric;
                   });
}

inline void atomic_write(const std::string& path, const std::string& body) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + tmp);
    out << body;
    if (!out) throw IoFailure("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoFailure("rename failed: " + path + ": " + ec.message());
}

}  // namespace detail

inline void emit_table(std::vector<RunRecord> records, const std::string& path,
                       const std::string& format = "csv") {
  if (records.empty()) throw std::invalid_argument("emit_table: records nonempty required");
  detail::sort_records(records);
  std::string body;
  if (format == "csv") {
    body = "experiment,family,d,d1,n,replicate,metric,value,error,seed,config_digest,"
           "wall_time_ms\n";
    for (const auto& r : records) {
      body += r.experiment + "," + r.family + "," + std::to_string(r.d) + "," +
              std::to_string(r.d1) + "," + std::to_string(r.n) + "," +
              std::to_string(r.replicate) + "," + r.metric + "," + detail::fmt17(r.value) +
              "," + detail::fmt17(r.error) + "," + std::to_string(r.seed) + "," +
              r.config_digest + "," + std::to_string(r.wall_time_ms) + "\n";
    }
  } else if (format == "json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records)
      arr.push_back({{"experiment", r.experiment},
                     {"family", r.family},
                     {"d", r.d},
                     {"d1", r.d1},
                     {"n", r.n},
                     {"replicate", r.replicate},
                     {"metric", r.metric},
                     {"value", detail::fmt17(r.value)},
                     {"error", detail::fmt17(r.error)},
                     {"seed", r.seed},
                     {"config_digest", r.config_digest},
                     {"wall_time_ms", r.wall_time_ms}});
    body = arr.dump(2) + "\n";
  } else {
    throw std::invalid_argument("emit_table: format must be csv or json");
  }
  detail::atomic_write(path, body);
}

inline std::vector<RunRecord> records_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  nlohmann::json arr;
  in >> arr;
  std::vector<RunRecord> records;
  for (const auto& j : arr) {
    RunRecord r;
    r.experiment = j.at("experiment");
    r.family = j.at("family");
    r.d = j.at("d");
    r.d1 = j.at("d1");
    r.n = j.at("n");
    r.replicate = j.at("replicate");
    r.metric = j.at("metric");
    r.value = std::strtod(j.at("value").get<std::string>().c_str(), nullptr);
    r.error = std::strtod(j.at("error").get<std::string>().c_str(), nullptr);
    r.seed = j.at("seed");
    r.config_digest = j.at("config_digest");
    r.wall_time_ms = j.at("wall_time_ms");
    records.push_back(r);
  }
  return records;
}

namespace detail {

inline double record_field(const RunRecord& r, const std::string& field) {
  if (field == "d") return r.d;
  if (field == "d1") return r.d1;
  if (field == "n") return r.n;
  if (field == "replicate") return r.replicate;
  if (field == "value") return r.value;
  if (field == "error") return r.error;
  throw UnknownField("emit_plotdata: unknown field '" + field + "'");
}

inline std::string record_group_key(const RunRecord& r, const std::vector<std::string>& fields) {
  std::string key;
  for (const auto& f : fields) {
    if (f == "family") {
      key += "family=" + r.family + " ";
    } else if (f == "experiment") {
      key += "experiment=" + r.experiment + " ";
    } else {
      key += f + "=" + fmt17(record_field(r, f)) + " ";
    }
  }
  return key.empty() ? "all " : key;
}

// Least-squares slope of log y against log x over positive pairs.
inline double loglog_slope(const std::vector<std::pair<double, double>>& xy) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const auto& [x, y] : xy) {
    if (!(x > 0.0) || !(y > 0.0)) continue;
    double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  if (m < 2) return std::nan("");
  double denom = m * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) return std::nan("");
  return (m * sxy - sx * sy) / denom;
}

}  // namespace detail

inline void emit_plotdata(std::vector<RunRecord> records, const std::string& x_field,
                          const std::string& y_metric,
                          const std::vector<std::string>& group_by, const std::string& path) {
  if (records.empty()) throw std::invalid_argument("emit_plotdata: records nonempty required");
  detail::sort_records(records);
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    if (r.metric != y_metric) continue;
    groups[detail::record_group_key(r, group_by)].push_back(&r);
  }
  if (groups.empty()) throw UnknownField("emit_plotdata: no records with metric " + y_metric);
  std::string body;
  for (const auto& [key, rows] : groups) {
    body += "# group: " + key + "\n";
    std::vector<std::pair<double, double>> xy;
    for (const RunRecord* r : rows) {
      double x = detail::record_field(*r, x_field);
      body += detail::fmt17(x) + " " + detail::fmt17(r->value) + " " +
              detail::fmt17(r->error) + "\n";
      xy.emplace_back(x, r->value);
    }
    body += "# loglog_slope: " + detail::fmt17(detail::loglog_slope(xy)) + "\n\n";
  }
  detail::atomic_write(path, body);
}

}  // namespace bvm
