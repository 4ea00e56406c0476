#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualavg/errors.hpp"
#include "dualavg/objectives.hpp"

// Instance file schema (JSON object):
//   family   "pca" | "quadratic"
//   n, dim   agents and variable dimension
//   rows     rows per data matrix (pca)
//   seed     generator seed
//   convex   quadratic only
//   row_rule how pca rows were drawn, informational
//   entries  optional; per agent {"M": [[...]]} (pca) or {"A": [[...]], "b": [...]} (quadratic).
//            When present they are used verbatim, otherwise the instance is regenerated from the seed.

namespace dualavg {

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) throw ConfigError(what + ": expected a nested array");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j.front().size()) throw ConfigError(what + ": ragged rows");
    for (std::size_t c = 0; c < j[r].size(); ++c) {
      if (!j[r][c].is_number()) throw ConfigError(what + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

inline nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(what + ": non-numeric entry");
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return v;
}

}  // namespace detail

inline nlohmann::json instance_to_json(const ObjectiveSplit& split, bool with_entries) {
  if (!split.spec()) throw std::invalid_argument("instance has no generation spec to serialize");
  const auto& s = *split.spec();
  nlohmann::json j{{"family", s.family}, {"n", s.n}, {"dim", s.dim}, {"seed", s.seed}};
  if (s.family == "pca") {
    j["rows"] = s.rows;
    j["row_rule"] = kPcaRowRule;
  } else {
    j["convex"] = s.convex;
  }
  if (with_entries) {
    auto entries = nlohmann::json::array();
    for (const auto& f : split.locals()) {
      if (const auto* p = std::get_if<PcaForm>(&f.form())) {
        entries.push_back({{"M", detail::matrix_to_json(p->m)}});
      } else if (const auto* q = std::get_if<QuadraticForm>(&f.form())) {
        entries.push_back({{"A", detail::matrix_to_json(q->a)}, {"b", detail::vector_to_json(q->b)}});
      } else {
        throw std::invalid_argument("black-box locals cannot be serialized");
      }
    }
    j["entries"] = std::move(entries);
  }
  return j;
}

inline ObjectiveSplit instance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("instance: expected a JSON object");
  static const std::vector<std::string> known{"family", "n", "rows", "dim", "seed", "convex", "row_rule", "entries"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("instance: unknown key '" + key + "'");
  InstanceSpec s;
  try {
    s.family = j.at("family").get<std::string>();
    s.n = j.at("n").get<int>();
    s.dim = j.at("dim").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    if (s.family == "pca") {
      s.rows = j.at("rows").get<int>();
      s.convex = false;
    } else if (s.family == "quadratic") {
      s.convex = j.value("convex", true);
    } else {
      throw ConfigError("instance: unknown family '" + s.family + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("instance: ") + e.what());
  }
  if (!j.contains("entries")) {
    return s.family == "pca" ? pca_instance(s.n, s.rows, s.dim, s.seed)
                             : quadratic_instance(s.n, s.dim, s.seed, s.convex);
  }
  const auto& entries = j.at("entries");
  if (!entries.is_array() || static_cast<int>(entries.size()) != s.n)
    throw ConfigError("instance: entries must list one object per agent");
  std::vector<LocalObjective> locals;
  try {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::string where = "instance entry " + std::to_string(i);
      const auto& e = entries[i];
      if (s.family == "pca") {
        Matrix m = detail::matrix_from_json(e.at("M"), where + " M");
        if (m.cols() != s.dim || m.rows() != s.rows) throw ConfigError(where + ": M has the wrong shape");
        locals.push_back(LocalObjective::pca(std::move(m)));
      } else {
        Matrix a = detail::matrix_from_json(e.at("A"), where + " A");
        Vector b = detail::vector_from_json(e.at("b"), where + " b");
        if (a.rows() != s.dim || a.cols() != s.dim || b.size() != s.dim)
          throw ConfigError(where + ": A or b has the wrong shape");
        locals.push_back(LocalObjective::quadratic(std::move(a), std::move(b)));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("instance entries: ") + e.what());
  }
  return ObjectiveSplit(std::move(locals), s);
}

inline void save_instance(const std::string& path, const ObjectiveSplit& split, bool with_entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << instance_to_json(split, with_entries).dump(2) << '\n';
}

inline ObjectiveSplit load_instance(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  try {
    return instance_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace dualavg
