// asentinel command line: simulate, optimize, detect, closed-loop, verify.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "asentinel/csv.hpp"
#include "asentinel/detector.hpp"
#include "asentinel/irrigation.hpp"
#include "asentinel/model_io.hpp"
#include "asentinel/optimizer.hpp"
#include "asentinel/parallel.hpp"
#include "asentinel/verify.hpp"

namespace fs = std::filesystem;
using namespace asentinel;

namespace {

constexpr int kExitInfeasible = 2;
constexpr int kExitFailed = 3;

struct RunConfig {
  std::string command;
  std::string system_path;
  std::string scenario_path;
  std::string formulation = "all";
  std::string seeds = "1";
  std::string output_dir = ".";
  std::optional<double> jd_max;
  std::optional<double> jc_max;
  int horizon = 0;  // 0: from the document or scenario
  int mode = 0;
  std::string input;
  std::string input_file;
  int closed_loop_seeds = 50;
  bool trace = true;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw InvalidArgument("bad seed \"" + s + "\" in \"" + text + "\"");
    return static_cast<std::uint64_t>(v);
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const std::uint64_t lo = number(item.substr(0, dash));
    const std::uint64_t hi = number(item.substr(dash + 1));
    if (hi < lo) throw InvalidArgument("empty seed range \"" + item + "\"");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw InvalidArgument("no seeds given");
  return out;
}

std::string scenario_path(const RunConfig& cfg) {
  return cfg.scenario_path.empty() ? std::string(ASENTINEL_SCENARIO_DIR) + "/haughton_9_10.json" : cfg.scenario_path;
}

irrigation::ChannelScenario load_scenario_with_overrides(const RunConfig& cfg) {
  irrigation::ChannelScenario s = irrigation::load_scenario(scenario_path(cfg));
  if (cfg.jd_max) s.jd_max = *cfg.jd_max;
  if (cfg.jc_max) s.jc_max = *cfg.jc_max;
  s.validate();
  return s;
}

/// System, modes and the one-shot problem used by simulate/optimize/detect.
struct Setup {
  LinearGaussianSystem system;
  ModeSet modes;
  int horizon = 0;
  std::optional<Json> problem;  // "problem" block of a system document
  std::optional<irrigation::ChannelScenario> scenario;
};

Setup load_setup(const RunConfig& cfg) {
  Setup st;
  if (!cfg.system_path.empty()) {
    const Json j = io::read_json_file(cfg.system_path);
    const SystemDocument doc = document_from_json(j);
    st.system = doc.system;
    st.modes = doc.modes;
    if (j.contains("problem")) st.problem = j.at("problem");
    st.horizon = st.problem && st.problem->contains("horizon") ? st.problem->at("horizon").get<int>() : 5;
  } else {
    st.scenario = load_scenario_with_overrides(cfg);
    st.system = irrigation::build_system(*st.scenario);
    st.modes = irrigation::build_modes(*st.scenario, st.system);
    st.horizon = st.scenario->horizon;
  }
  if (cfg.horizon > 0) st.horizon = cfg.horizon;
  st.system.validate();
  return st;
}

ProblemSpec build_problem(const Setup& st, ProblemKind kind, const RunConfig& cfg) {
  ProblemSpec spec;
  if (st.scenario) {
    irrigation::ChannelScenario s = *st.scenario;
    s.horizon = st.horizon;
    spec = irrigation::window_problem(st.system, st.modes, s, kind);
  } else {
    const Json empty = Json::object();
    const Json& pj = st.problem ? *st.problem : empty;
    const int m = st.system.outputs();
    const int p = st.system.inputs();
    const int n = st.system.states();
    const int horizon = st.horizon;
    Vector reference = Vector::Zero(static_cast<Eigen::Index>(m) * (horizon + 1));
    if (pj.contains("reference")) {
      const Vector r = io::vector_from_json(pj.at("reference"), "reference");
      if (r.size() == m) {
        for (int k = 0; k <= horizon; ++k) reference.segment(static_cast<Eigen::Index>(k) * m, m) = r;
      } else if (r.size() == reference.size()) {
        reference = r;
      } else {
        throw InvalidArgument("reference must have length m or m(N+1)");
      }
    }
    const Matrix q = pj.contains("Q") ? io::matrix_from_json(pj.at("Q"), "Q") : Matrix(Matrix::Identity(m, m));
    const Matrix r = pj.contains("R") ? io::matrix_from_json(pj.at("R"), "R") : Matrix(Matrix::Identity(p, p));
    spec.kind = kind;
    spec.control = build_control_objective(st.system, st.modes, reference, ControlWeights{q, r}, horizon);
    spec.detection = build_detection_bound(st.system, st.modes, horizon);
    if (pj.contains("Gx") || pj.contains("Gu") || pj.contains("g")) {
      const Vector g = io::vector_from_json(io::field(pj, "g"), "g");
      const Matrix gx = pj.contains("Gx") ? io::matrix_from_json(pj.at("Gx"), "Gx") : Matrix(Matrix::Zero(g.size(), n));
      const Matrix gu = pj.contains("Gu") ? io::matrix_from_json(pj.at("Gu"), "Gu") : Matrix(Matrix::Zero(g.size(), p));
      spec.constraints = expand_constraints(st.system, st.modes, gx, gu, g, horizon);
    }
    if (pj.contains("jd_max")) spec.jd_max = pj.at("jd_max").get<double>();
    if (pj.contains("jc_max")) spec.jc_max = pj.at("jc_max").get<double>();
  }
  if (cfg.jd_max) spec.jd_max = *cfg.jd_max;
  if (cfg.jc_max) spec.jc_max = *cfg.jc_max;
  spec.validate();
  return spec;
}

/// Input sequence for simulate/detect: a file (Solution JSON or plain array),
/// a constant comma list, or all ones.
ControlSequence input_sequence(const RunConfig& cfg, int horizon, int p) {
  const auto len = static_cast<Eigen::Index>(horizon) * p;
  if (!cfg.input_file.empty()) {
    const Json j = io::read_json_file(cfg.input_file);
    const Vector u = io::vector_from_json(j.is_object() ? io::field(j, "u_star") : j, "u_star");
    if (u.size() == len) return ControlSequence(u, horizon, p);
    if (u.size() == p) return ControlSequence(u.replicate(horizon, 1), horizon, p);
    throw InvalidArgument("input file must hold p or p*N values");
  }
  Vector step = Vector::Ones(p);
  if (!cfg.input.empty()) {
    std::vector<double> vals;
    std::stringstream ss(cfg.input);
    std::string item;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    if (static_cast<int>(vals.size()) != p) throw InvalidArgument("--input needs " + std::to_string(p) + " values");
    step = Eigen::Map<const Vector>(vals.data(), p);
  }
  return ControlSequence(step.replicate(horizon, 1), horizon, p);
}

std::string seed_file(const RunConfig& cfg, const std::string& stem, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / (stem + "_seed" + std::to_string(seed) + ".csv")).string();
}

int run_simulate(const RunConfig& cfg) {
  const Setup st = load_setup(cfg);
  linalg::require(cfg.mode >= 0 && cfg.mode < st.modes.size(), "--mode out of range");
  const ControlSequence u = input_sequence(cfg, st.horizon, st.system.inputs());
  for (std::uint64_t seed : parse_seeds(cfg.seeds)) {
    const Rollout r = sample_rollout(st.system, st.modes.input_matrix(cfg.mode), u, seed);
    csv::write_rollout(seed_file(cfg, "rollout", seed), r, u);
  }
  return 0;
}

Json solution_to_json(const Solution& s, const ProblemSpec& spec) {
  auto finite = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json j;
  j["formulation"] = to_string(spec.kind);
  j["status"] = to_string(s.status);
  j["u_star"] = io::vector_to_json(s.u_star);
  j["objective_value"] = finite(s.objective_value);
  j["control_cost"] = finite(s.control_cost);
  j["detection_bound"] = finite(s.detection_bound);
  j["constraint_violation"] = finite(s.constraint_violation);
  j["side_constraint_slack"] = finite(s.side_constraint_slack);
  j["stationarity"] = finite(s.stationarity);
  j["kkt_residual"] = finite(s.kkt_residual);
  j["restarts_used"] = s.restarts_used;
  j["min_side_value"] = finite(s.min_side_value);
  j["jd_max"] = spec.jd_max;
  j["jc_max"] = spec.jc_max;
  j["farkas"] = s.farkas ? io::vector_to_json(*s.farkas) : Json(nullptr);
  return j;
}

int run_optimize(const RunConfig& cfg) {
  const Setup st = load_setup(cfg);
  const ProblemKind kind =
      problem_kind_from_string(cfg.formulation == "all" ? std::string("pure-control") : cfg.formulation);
  const ProblemSpec spec = build_problem(st, kind, cfg);
  SolverOptions opt;
  opt.seed = parse_seeds(cfg.seeds).front();
  opt.record_trace = cfg.trace;
  const Solution sol = solve(spec, opt);
  {
    std::ofstream out(fs::path(cfg.output_dir) / "solution.json");
    if (!out) throw InvalidArgument("cannot write solution.json in \"" + cfg.output_dir + "\"");
    out << solution_to_json(sol, spec).dump(2) << '\n';
  }
  csv::write_trace((fs::path(cfg.output_dir) / "trace.csv").string(), sol.trace);
  std::cout << to_string(kind) << ": " << to_string(sol.status) << "  J_c " << csv::num(sol.control_cost)
            << "  J_d " << csv::num(sol.detection_bound) << "  kkt " << csv::num(sol.kkt_residual) << '\n';
  return sol.status == SolveStatus::Infeasible ? kExitInfeasible : 0;
}

int run_detect(const RunConfig& cfg) {
  const Setup st = load_setup(cfg);
  linalg::require(cfg.mode >= 0 && cfg.mode < st.modes.size(), "--mode out of range");
  const int p = st.system.inputs();
  // Long enough for several detection windows.
  const int steps = 4 * st.horizon;
  const ControlSequence u = input_sequence(cfg, steps, p);
  for (std::uint64_t seed : parse_seeds(cfg.seeds)) {
    const Rollout r = sample_rollout(st.system, st.modes.input_matrix(cfg.mode), u, seed);
    Mmae running(st.system, st.modes);
    DetectorBank bank(st.system, st.modes, st.horizon);
    std::vector<csv::PosteriorRow> rows;
    for (int k = 0; k <= steps; ++k) {
      const Vector u_prev = k > 0 ? Vector(u.at(k - 1)) : Vector::Zero(p);
      const Vector y = r.outputs.col(k);
      running.observe(u_prev, y);
      rows.push_back({k, running.posterior().probs, bank.step(u_prev, y)});
    }
    csv::write_posteriors(seed_file(cfg, "detect", seed), rows, st.modes.size());
  }
  return 0;
}

std::vector<ProblemKind> formulations(const std::string& name) {
  if (name == "all") {
    return {ProblemKind::PureControl, ProblemKind::DetectionConstrained, ProblemKind::ControlConstrained};
  }
  return {problem_kind_from_string(name)};
}

void print_summary(const std::vector<irrigation::NormalizedSummary>& rows) {
  std::printf("%-22s %5s %12s %12s %7s\n", "formulation", "runs", "norm J_c", "norm J_d", "failed");
  for (const auto& r : rows) {
    std::printf("%-22s %5d %12.6f %12.6f %7d\n", to_string(r.kind), r.runs, r.mean_control_cost,
                r.mean_detection_bound, r.failed_windows);
  }
}

int run_closed_loop_command(const RunConfig& cfg) {
  const irrigation::ChannelScenario scenario = load_scenario_with_overrides(cfg);
  const std::vector<std::uint64_t> seeds = parse_seeds(cfg.seeds);
  std::vector<ProblemKind> kinds = formulations(cfg.formulation);
  // Normalization always needs the pure-control runs of the same seeds.
  if (kinds.front() != ProblemKind::PureControl) kinds.insert(kinds.begin(), ProblemKind::PureControl);

  const std::size_t jobs = kinds.size() * seeds.size();
  const auto logs = parallel_map<irrigation::ExperimentLog>(jobs, [&](std::size_t i) {
    const ProblemKind kind = kinds[i / seeds.size()];
    const std::uint64_t seed = seeds[i % seeds.size()];
    return irrigation::run_closed_loop(scenario, kind, seed);
  });

  std::vector<irrigation::NormalizedSummary> summary;
  const std::vector<irrigation::ExperimentLog> pure(logs.begin(), logs.begin() + static_cast<long>(seeds.size()));
  for (std::size_t f = 0; f < kinds.size(); ++f) {
    const auto first = logs.begin() + static_cast<long>(f * seeds.size());
    const std::vector<irrigation::ExperimentLog> runs(first, first + static_cast<long>(seeds.size()));
    for (const auto& log : runs) {
      const std::string stem = std::string(to_string(log.kind));
      csv::write_steps(seed_file(cfg, stem + "_steps", log.seed), log);
      csv::write_windows(seed_file(cfg, stem + "_windows", log.seed), log);
      csv::write_latencies(seed_file(cfg, stem + "_latency", log.seed), log);
      for (const auto& w : log.windows) {
        if (w.failed) {
          std::cerr << "warning: " << stem << " seed " << log.seed << " window " << w.index << ": "
                    << to_string(w.status) << '\n';
        }
      }
    }
    summary.push_back(irrigation::normalize_against(runs, pure));
  }
  csv::write_summary((fs::path(cfg.output_dir) / "summary.csv").string(), summary);
  print_summary(summary);
  return 0;
}

int run_verify(const RunConfig& cfg) {
  verify::VerifyOptions opt;
  opt.closed_loop_seeds = cfg.closed_loop_seeds;
  std::printf("%-4s %-6s %9s  %s\n", "id", "result", "seconds", "check");
  const auto results = verify::run_all(opt, [](const verify::CheckResult& r) {
    std::printf("%-4d %-6s %9.2f  %s: %s\n", r.id, r.passed ? "PASS" : "FAIL", r.seconds, r.name.c_str(),
                r.detail.c_str());
    std::fflush(stdout);
  });
  for (const auto& r : results) {
    if (!r.passed) return kExitFailed;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active detection of prevented-actuation attacks"};
  app.require_subcommand(1, 1);
  RunConfig cfg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--system", cfg.system_path, "System JSON document");
    sub->add_option("--scenario", cfg.scenario_path, "Scenario JSON (default: shipped Haughton scenario)");
    sub->add_option("--seeds", cfg.seeds, "Seeds: 7, 1,2,5 or 1-50");
    sub->add_option("--output-dir", cfg.output_dir, "Directory for output files");
    sub->add_option("--jd-max", cfg.jd_max, "Override of the detection bound cap");
    sub->add_option("--jc-max", cfg.jc_max, "Override of the control cost cap");
    sub->add_option("--horizon", cfg.horizon, "Horizon override")->check(CLI::PositiveNumber);
  };
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--mode", cfg.mode, "True mode index");
    sub->add_option("--input", cfg.input, "Constant input, comma separated (default all ones)");
    sub->add_option("--input-file", cfg.input_file, "JSON array or Solution JSON with u_star");
  };
  const std::string kinds = "pure-control, detection-constrained, control-constrained";

  CLI::App* simulate = app.add_subcommand("simulate", "Sample rollouts");
  add_common(simulate);
  add_inputs(simulate);
  CLI::App* optimize = app.add_subcommand("optimize", "Solve one open-loop problem");
  add_common(optimize);
  optimize->add_option("--formulation", cfg.formulation, kinds)->default_val("pure-control");
  CLI::App* detect = app.add_subcommand("detect", "Run the detector bank on a rollout");
  add_common(detect);
  add_inputs(detect);
  CLI::App* closed = app.add_subcommand("closed-loop", "Closed-loop scenario runs");
  add_common(closed);
  closed->add_option("--formulation", cfg.formulation, kinds + " or all")->default_val("all");
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run all acceptance checks");
  verify_cmd->add_option("--closed-loop-seeds", cfg.closed_loop_seeds, "Seeds for the closed-loop checks")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  cfg.command = app.get_subcommands().front()->get_name();

  try {
    if (cfg.command != "verify") fs::create_directories(cfg.output_dir);
    if (cfg.command == "simulate") return run_simulate(cfg);
    if (cfg.command == "optimize") return run_optimize(cfg);
    if (cfg.command == "detect") return run_detect(cfg);
    if (cfg.command == "closed-loop") return run_closed_loop_command(cfg);
    return run_verify(cfg);
  } catch (const ParseError& e) {
    std::cerr << "parse error (line " << e.line() << ", column " << e.column() << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
