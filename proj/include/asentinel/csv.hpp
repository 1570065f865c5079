#pragma once

// CSV output. Every table has a header row; column orders are listed in
// docs/formats.md. Numbers use %.12g so reruns are byte-identical.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "asentinel/detector.hpp"
#include "asentinel/errors.hpp"
#include "asentinel/irrigation.hpp"
#include "asentinel/model.hpp"
#include "asentinel/optimizer.hpp"

namespace asentinel::csv {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path), path_(path) {
    if (!out_) throw InvalidArgument("cannot write \"" + path + "\"");
  }

  void header(const std::vector<std::string>& cols) { row(cols); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  const std::string& path() const { return path_; }

 private:
  std::ofstream out_;
  std::string path_;
};

inline std::vector<std::string> indexed(const std::string& prefix, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline void append(std::vector<std::string>& cells, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) cells.push_back(num(v(i)));
}

inline void append(std::vector<std::string>& cells, const std::vector<std::string>& more) {
  cells.insert(cells.end(), more.begin(), more.end());
}

/// k, x_*, y_*, u_* (u empty on the last row).
inline void write_rollout(const std::string& path, const Rollout& r, const ControlSequence& u) {
  Writer w(path);
  std::vector<std::string> head{"k"};
  append(head, indexed("x", r.states.rows()));
  append(head, indexed("y", r.outputs.rows()));
  append(head, indexed("u", u.inputs()));
  w.header(head);
  for (Eigen::Index k = 0; k < r.states.cols(); ++k) {
    std::vector<std::string> cells{std::to_string(k)};
    append(cells, Vector(r.states.col(k)));
    append(cells, Vector(r.outputs.col(k)));
    if (k < u.horizon()) {
      append(cells, Vector(u.at(static_cast<int>(k))));
    } else {
      for (int i = 0; i < u.inputs(); ++i) cells.emplace_back();
    }
    w.row(cells);
  }
}

inline void write_trace(const std::string& path, const std::vector<TraceRow>& trace) {
  Writer w(path);
  w.header({"restart", "iteration", "objective", "side_value", "violation", "multiplier", "penalty",
            "inner_iterations"});
  for (const auto& t : trace) {
    w.row({std::to_string(t.restart), std::to_string(t.iteration), num(t.objective), num(t.side_value),
           num(t.violation), num(t.multiplier), num(t.penalty), std::to_string(t.inner_iterations)});
  }
}

struct PosteriorRow {
  int k = 0;
  Vector posterior;
  std::optional<Decision> decision;
};

/// k, p_* (running posterior), decision_detector, decision_mode (empty when none).
inline void write_posteriors(const std::string& path, const std::vector<PosteriorRow>& rows, int modes) {
  Writer w(path);
  std::vector<std::string> head{"k"};
  append(head, indexed("p", modes));
  head.insert(head.end(), {"decision_detector", "decision_mode"});
  w.header(head);
  for (const auto& r : rows) {
    std::vector<std::string> cells{std::to_string(r.k)};
    append(cells, r.posterior);
    cells.push_back(r.decision ? std::to_string(r.decision->detector) : "");
    cells.push_back(r.decision ? std::to_string(r.decision->mode) : "");
    w.row(cells);
  }
}

inline void write_steps(const std::string& path, const irrigation::ExperimentLog& log) {
  Writer w(path);
  w.header({"k", "minute", "true_mode", "level9", "level10", "measured9", "measured10", "expected9", "expected10",
            "head8", "head9", "head10", "decision_detector", "decision_mode"});
  for (const auto& s : log.steps) {
    std::vector<std::string> cells{std::to_string(s.k), num(s.minute), std::to_string(s.true_mode)};
    append(cells, s.levels);
    append(cells, s.measured);
    append(cells, s.expected_levels);
    append(cells, s.applied);
    cells.push_back(s.decision_detector >= 0 ? std::to_string(s.decision_detector) : "");
    cells.push_back(s.decision_mode >= 0 ? std::to_string(s.decision_mode) : "");
    w.row(cells);
  }
}

inline void write_windows(const std::string& path, const irrigation::ExperimentLog& log) {
  Writer w(path);
  w.header({"window", "start_k", "steps", "status", "failed", "linear_infeasible", "control_cost", "detection_bound",
            "constraint_violation", "side_slack", "restarts"});
  for (const auto& x : log.windows) {
    w.row({std::to_string(x.index), std::to_string(x.start_k), std::to_string(x.steps), to_string(x.status),
           x.failed ? "1" : "0",
           x.linear_infeasible ? "1" : "0", num(x.control_cost), num(x.detection_bound), num(x.constraint_violation),
           num(x.side_slack), std::to_string(x.restarts_used)});
  }
}

inline void write_latencies(const std::string& path, const irrigation::ExperimentLog& log) {
  Writer w(path);
  w.header({"segment_start", "segment_end", "mode", "latency_minutes"});
  for (const auto& l : log.latencies) {
    w.row({num(l.segment.start), num(l.segment.end), std::to_string(l.segment.mode),
           l.latency_minutes ? num(*l.latency_minutes) : ""});
  }
}

inline void write_summary(const std::string& path, const std::vector<irrigation::NormalizedSummary>& rows) {
  Writer w(path);
  w.header({"formulation", "runs", "normalized_control_cost", "normalized_detection_bound", "failed_windows"});
  for (const auto& r : rows) {
    w.row({to_string(r.kind), std::to_string(r.runs), num(r.mean_control_cost), num(r.mean_detection_bound),
           std::to_string(r.failed_windows)});
  }
}

}  // namespace asentinel::csv
