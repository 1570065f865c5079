#pragma once

// JSON documents for systems and mode sets. Matrices are row-major nested
// arrays, masks are bit strings ("010", character j = actuator j), priors are
// plain numbers.
//
//   {
//     "A": [[...]], "B": [[...]], "C": [[...]], "Hw": [[...]], "Hv": [[...]],
//     "x0_mean": [...], "x0_cov": [[...]],
//     "modes": { "masks": ["00", "10", ...], "priors": [0.25, ...] }
//   }
//
// "modes" is optional; when absent all 2^p masks with uniform priors are used.

#include <fstream>
#include <sstream>
#include <string>

#include "asentinel/errors.hpp"
#include "asentinel/model.hpp"
#include "json.hpp"

namespace asentinel {

using Json = nlohmann::json;

/// Parse failure with a source location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what), line_(line), column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

namespace io {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Matrix matrix_from_json(const Json& j, const std::string& name) {
  if (!j.is_array()) throw InvalidArgument("\"" + name + "\" must be an array of rows");
  if (j.empty()) return Matrix(0, 0);
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw InvalidArgument("\"" + name + "\" rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw InvalidArgument("\"" + name + "\" entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

inline Vector vector_from_json(const Json& j, const std::string& name) {
  if (!j.is_array()) throw InvalidArgument("\"" + name + "\" must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InvalidArgument("\"" + name + "\" entries must be numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline const Json& field(const Json& j, const std::string& key) {
  if (!j.contains(key)) throw InvalidArgument("missing field \"" + key + "\"");
  return j.at(key);
}

/// Parses text, translating byte offsets of syntax errors into line/column.
inline Json parse_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError("JSON syntax error at line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": " + e.what(),
                     line, column);
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open \"" + path + "\"");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

}  // namespace io

inline Json system_to_json(const LinearGaussianSystem& sys) {
  return Json{{"A", io::matrix_to_json(sys.A)},   {"B", io::matrix_to_json(sys.B)},
              {"C", io::matrix_to_json(sys.C)},   {"Hw", io::matrix_to_json(sys.Hw)},
              {"Hv", io::matrix_to_json(sys.Hv)}, {"x0_mean", io::vector_to_json(sys.x0_mean)},
              {"x0_cov", io::matrix_to_json(sys.x0_cov)}};
}

inline LinearGaussianSystem system_from_json(const Json& j) {
  LinearGaussianSystem sys;
  sys.A = io::matrix_from_json(io::field(j, "A"), "A");
  sys.B = io::matrix_from_json(io::field(j, "B"), "B");
  sys.C = io::matrix_from_json(io::field(j, "C"), "C");
  sys.Hw = io::matrix_from_json(io::field(j, "Hw"), "Hw");
  sys.Hv = io::matrix_from_json(io::field(j, "Hv"), "Hv");
  sys.x0_mean = io::vector_from_json(io::field(j, "x0_mean"), "x0_mean");
  sys.x0_cov = io::matrix_from_json(io::field(j, "x0_cov"), "x0_cov");
  sys.validate();
  return sys;
}

inline Json modes_to_json(const ModeSet& modes) {
  Json masks = Json::array();
  for (const auto& m : modes.masks) masks.push_back(mask_to_string(m));
  return Json{{"masks", masks}, {"priors", io::vector_to_json(modes.priors)}};
}

inline ModeSet modes_from_json(const Json& j, const Matrix& b) {
  std::vector<Mask> masks;
  for (const auto& s : io::field(j, "masks")) {
    if (!s.is_string()) throw InvalidArgument("masks must be bit strings");
    masks.push_back(mask_from_string(s.get<std::string>()));
  }
  return modes_from_masks(b, masks, io::vector_from_json(io::field(j, "priors"), "priors"));
}

struct SystemDocument {
  LinearGaussianSystem system;
  ModeSet modes;
};

inline Json document_to_json(const SystemDocument& doc) {
  Json j = system_to_json(doc.system);
  j["modes"] = modes_to_json(doc.modes);
  return j;
}

inline SystemDocument document_from_json(const Json& j) {
  SystemDocument doc;
  doc.system = system_from_json(j);
  doc.modes = j.contains("modes") ? modes_from_json(j.at("modes"), doc.system.B)
                                  : enumerate_modes(doc.system.B, uniform_priors(doc.system.inputs()));
  return doc;
}

inline SystemDocument load_system_document(const std::string& path) {
  return document_from_json(io::read_json_file(path));
}

}  // namespace asentinel
