// Copyright 2026 The epop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPOP_IO_HPP
#define EPOP_IO_HPP

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <epop/ep_engine.hpp>
#include <epop/errors.hpp>
#include <epop/factors.hpp>
#include <epop/message_operator.hpp>

/**
 * \file
 * \brief File formats: training-set CSV, operator model JSON, factor-graph JSON.
 *
 * CSV numbers are written with 17 significant digits; JSON numbers use the shortest
 * representation that parses back to the same double. Both round-trip bit-exactly.
 */

namespace epop::io {

using nlohmann::json;

inline constexpr std::string_view kDatasetHeader =
    "case_id,mx_mean,mx_log_variance,mz_alpha,mz_beta,out_mean,out_log_variance,ess,n_samples";
inline constexpr std::string_view kModelFormat = "epop-message-operator";
inline constexpr int kModelFormatVersion = 1;

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return {buf, res.ptr};
}

inline double parse_double(std::string_view field, std::size_t line) {
  double x = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw FormatError("line " + std::to_string(line) + ": cannot parse number '" + std::string(field) + "'");
  }
  return x;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open '" + path + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot open '" + path + "' for writing");
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw FormatError("write to '" + path + "' failed");
  }
}

// ---------------------------------------------------------------- dataset CSV

inline std::string dataset_to_csv(const std::vector<TrainingPair>& pairs) {
  std::string out(kDatasetHeader);
  out += '\n';
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const auto mx = p.input.m_x.mean_log_variance();
    out += std::to_string(i);
    for (double v : {mx.mean, mx.log_variance, p.input.m_z.alpha(), p.input.m_z.beta(), p.target.mean,
                     p.target.log_variance, p.ess}) {
      out += ',';
      out += format_double(v);
    }
    out += ',';
    out += std::to_string(p.n_samples);
    out += '\n';
  }
  return out;
}

inline std::vector<TrainingPair> dataset_from_csv(std::string_view text) {
  std::vector<TrainingPair> pairs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (!header_seen) {
      if (line != kDatasetHeader) {
        throw FormatError("line 1: unexpected dataset header");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) {
        break;
      }
      start = comma + 1;
    }
    if (fields.size() != 9) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 9 fields, found " +
                        std::to_string(fields.size()));
    }
    double v[9];
    for (std::size_t k = 0; k < 9; ++k) {
      v[k] = parse_double(fields[k], line_no);
    }
    try {
      TrainingPair p;
      p.input.m_x = Gaussian1D::from_mean_log_variance({v[1], v[2]});
      p.input.m_z = BetaDist{v[3], v[4]};
      p.target = {v[5], v[6]};
      p.ess = v[7];
      p.n_samples = static_cast<std::size_t>(v[8]);
      if (!std::isfinite(p.target.mean) || !std::isfinite(p.target.log_variance)) {
        throw DomainError("non-finite target");
      }
      pairs.push_back(p);
    } catch (const DomainError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) {
    throw FormatError("line 1: empty dataset");
  }
  return pairs;
}

// ---------------------------------------------------------------- model JSON

namespace detail {

/// FNV-1a over the bit patterns of a sequence of doubles.
class Checksum {
 public:
  void add(double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      hash_ ^= (bits >> (8 * b)) & 0xFFU;
      hash_ *= 0x100000001B3ULL;
    }
  }
  void add(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        add(m(i, j));
      }
    }
  }
  [[nodiscard]] std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data.push_back(m(i, j));
    }
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw FormatError("model: matrix data length does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) {
      m(i, j2) = data[k++].get<double>();
    }
  }
  return m;
}

inline json spec_to_json(const RffSpec& spec) {
  return {{"frequencies", matrix_to_json(spec.frequencies)},
          {"phases", std::vector<double>(spec.phases.data(), spec.phases.data() + spec.phases.size())},
          {"bandwidths", std::vector<double>(spec.bandwidths.data(), spec.bandwidths.data() + spec.bandwidths.size())}};
}

inline RffSpec spec_from_json(const json& j) {
  RffSpec spec;
  spec.frequencies = matrix_from_json(j.at("frequencies"));
  const auto phases = j.at("phases").get<std::vector<double>>();
  const auto bw = j.at("bandwidths").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(phases.size()) != spec.frequencies.rows() ||
      static_cast<Eigen::Index>(bw.size()) != spec.frequencies.cols()) {
    throw FormatError("model: feature spec arrays have inconsistent lengths");
  }
  spec.phases = Eigen::Map<const Eigen::VectorXd>(phases.data(), static_cast<Eigen::Index>(phases.size()));
  spec.bandwidths = Eigen::Map<const Eigen::VectorXd>(bw.data(), static_cast<Eigen::Index>(bw.size()));
  return spec;
}

inline void checksum_spec(Checksum& c, const RffSpec& spec) {
  c.add(spec.frequencies);
  c.add(Eigen::MatrixXd(spec.phases));
  c.add(Eigen::MatrixXd(spec.bandwidths));
}

inline std::string model_checksum(const MessageOperator& op, const std::vector<double>& a_upper) {
  Checksum c;
  if (op.features.kind == FeatureKind::joint) {
    checksum_spec(c, op.features.joint);
  } else {
    checksum_spec(c, op.features.x_side);
    checksum_spec(c, op.features.z_side);
  }
  c.add(op.model.W);
  for (double v : a_upper) {
    c.add(v);
  }
  c.add(op.model.lambda);
  c.add(op.model.noise_scale);
  c.add(op.tau_default);
  return c.hex();
}

}  // namespace detail

inline std::string to_string(FeatureKind kind) { return kind == FeatureKind::joint ? "joint" : "product"; }

inline FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "joint") {
    return FeatureKind::joint;
  }
  if (s == "product") {
    return FeatureKind::product;
  }
  throw DomainError("unknown feature kind '" + s + "' (expected joint or product)");
}

/// Training provenance stored alongside the operator.
struct ModelMetadata {
  std::uint64_t seed = 0;
  std::size_t dataset_rows = 0;
  CvReport cv;
};

inline std::string model_to_json(const MessageOperator& op, const ModelMetadata& meta) {
  const Eigen::Index D = op.model.A_inv.rows();
  std::vector<double> a_upper;
  a_upper.reserve(static_cast<std::size_t>(D * (D + 1) / 2));
  for (Eigen::Index i = 0; i < D; ++i) {
    for (Eigen::Index j = i; j < D; ++j) {
      a_upper.push_back(op.model.A_inv(i, j));
    }
  }
  json features = {{"kind", to_string(op.features.kind)}, {"quadrature_order", op.features.quadrature_order}};
  if (op.features.kind == FeatureKind::joint) {
    features["joint"] = detail::spec_to_json(op.features.joint);
  } else {
    features["x_side"] = detail::spec_to_json(op.features.x_side);
    features["z_side"] = detail::spec_to_json(op.features.z_side);
  }
  json cv_grid = json::array();
  for (const auto& e : meta.cv.grid) {
    cv_grid.push_back({e.bandwidth_multiplier, e.lambda});
  }
  json fold_errors = json::array();
  for (Eigen::Index r = 0; r < meta.cv.fold_errors.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(meta.cv.fold_errors.cols()));
    for (Eigen::Index c = 0; c < meta.cv.fold_errors.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = meta.cv.fold_errors(r, c);
    }
    fold_errors.push_back(row);
  }
  json j = {
      {"format", kModelFormat},
      {"format_version", kModelFormatVersion},
      {"seed", meta.seed},
      {"recipient", op.recipient == Recipient::x ? "x" : "z"},
      {"feature_kind", to_string(op.features.kind)},
      {"num_features", op.features.dimension()},
      {"base_bandwidths", {op.base_bandwidths(0), op.base_bandwidths(1)}},
      {"bandwidth_multiplier", op.bandwidth_multiplier},
      {"bandwidths", {op.base_bandwidths(0) * op.bandwidth_multiplier, op.base_bandwidths(1) * op.bandwidth_multiplier}},
      {"lambda", op.model.lambda},
      {"noise_scale", op.model.noise_scale},
      {"n_train", op.model.n_train},
      {"tau_default", op.tau_default},
      {"features", std::move(features)},
      {"W", detail::matrix_to_json(op.model.W)},
      {"A_inv_upper", {{"dim", D}, {"data", a_upper}}},
      {"training",
       {{"dataset_rows", meta.dataset_rows},
        {"cv", {{"grid", cv_grid}, {"fold_errors", fold_errors}, {"chosen", meta.cv.chosen}}}}},
      {"checksum", detail::model_checksum(op, a_upper)},
  };
  return j.dump();
}

struct LoadedModel {
  MessageOperator op;
  ModelMetadata meta;
};

inline LoadedModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model: not valid JSON (truncated or corrupted?): ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw FormatError("model: unrecognized format tag");
    }
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw FormatError("model: unsupported format version " + std::to_string(j.at("format_version").get<int>()));
    }
    LoadedModel out;
    auto& op = out.op;
    op.recipient = j.at("recipient").get<std::string>() == "x" ? Recipient::x : Recipient::z;
    const auto& f = j.at("features");
    op.features.kind = feature_kind_from_string(f.at("kind").get<std::string>());
    op.features.quadrature_order = f.at("quadrature_order").get<int>();
    if (op.features.kind == FeatureKind::joint) {
      op.features.joint = detail::spec_from_json(f.at("joint"));
    } else {
      op.features.x_side = detail::spec_from_json(f.at("x_side"));
      op.features.z_side = detail::spec_from_json(f.at("z_side"));
    }
    const auto bb = j.at("base_bandwidths").get<std::vector<double>>();
    if (bb.size() != 2) {
      throw FormatError("model: base_bandwidths must have two entries");
    }
    op.base_bandwidths = {bb[0], bb[1]};
    op.bandwidth_multiplier = j.at("bandwidth_multiplier").get<double>();
    op.tau_default = j.at("tau_default").get<double>();
    op.model.lambda = j.at("lambda").get<double>();
    op.model.noise_scale = j.at("noise_scale").get<double>();
    op.model.n_train = j.at("n_train").get<std::size_t>();
    op.model.W = detail::matrix_from_json(j.at("W"));
    const auto D = j.at("A_inv_upper").at("dim").get<Eigen::Index>();
    const auto a_upper = j.at("A_inv_upper").at("data").get<std::vector<double>>();
    if (D != op.features.dimension() || op.model.W.cols() != D || op.model.W.rows() != 2 ||
        a_upper.size() != static_cast<std::size_t>(D * (D + 1) / 2) ||
        j.at("num_features").get<Eigen::Index>() != D) {
      throw FormatError("model: inconsistent feature dimension");
    }
    op.model.A_inv.resize(D, D);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < D; ++r) {
      for (Eigen::Index c = r; c < D; ++c) {
        op.model.A_inv(r, c) = a_upper[k];
        op.model.A_inv(c, r) = a_upper[k];
        ++k;
      }
    }
    if (j.at("checksum").get<std::string>() != detail::model_checksum(op, a_upper)) {
      throw FormatError("model: checksum mismatch (file corrupted)");
    }
    out.meta.seed = j.at("seed").get<std::uint64_t>();
    const auto& tr = j.at("training");
    out.meta.dataset_rows = tr.at("dataset_rows").get<std::size_t>();
    const auto& cv = tr.at("cv");
    for (const auto& e : cv.at("grid")) {
      out.meta.cv.grid.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    }
    const auto& fe = cv.at("fold_errors");
    const auto rows = static_cast<Eigen::Index>(fe.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(fe.at(0).size()) : 0;
    out.meta.cv.fold_errors.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        out.meta.cv.fold_errors(r, c) = fe.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
      }
    }
    out.meta.cv.chosen = cv.at("chosen").get<std::size_t>();
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: missing or malformed field: ") + e.what());
  }
}

// ---------------------------------------------------------------- graph JSON

/// Graph description:
/// {"variables": [{"name": "x", "family": "gaussian"}, ...],
///  "factors": [{"name": "prior", "kind": "gaussian_prior", "variables": ["x"], "mean": 0, "variance": 2},
///              {"name": "f1", "kind": "logistic", "variables": ["x", "z1"]},
///              {"name": "l1", "kind": "linear_gaussian", "variables": ["a", "b"],
///               "coefficient": 1, "offset": 0, "noise_variance": 1}],
///  "observations": [{"variable": "z1", "alpha": 5, "beta": 2}]}
inline FactorGraph graph_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("graph: not valid JSON: ") + e.what());
  }
  FactorGraph g;
  try {
    std::map<std::string, int> index;
    for (const auto& v : j.at("variables")) {
      const auto name = v.at("name").get<std::string>();
      const auto fam = v.at("family").get<std::string>();
      if (fam != "gaussian" && fam != "beta") {
        throw FormatError("graph: variable '" + name + "' has unknown family '" + fam + "'");
      }
      if (!index.emplace(name, static_cast<int>(g.variables.size())).second) {
        throw FormatError("graph: duplicate variable '" + name + "'");
      }
      g.variables.push_back({name, fam == "gaussian" ? Family::gaussian : Family::beta});
    }
    auto lookup = [&](const std::string& name) {
      auto it = index.find(name);
      if (it == index.end()) {
        throw FormatError("graph: unknown variable '" + name + "'");
      }
      return it->second;
    };
    for (const auto& fj : j.at("factors")) {
      Factor f;
      f.name = fj.at("name").get<std::string>();
      const auto kind = fj.at("kind").get<std::string>();
      for (const auto& v : fj.at("variables")) {
        f.variables.push_back(lookup(v.get<std::string>()));
      }
      if (kind == "gaussian_prior") {
        f.kind = FactorKind::gaussian_prior;
        f.prior = Gaussian1D::from_mean_variance(fj.at("mean").get<double>(), fj.at("variance").get<double>());
      } else if (kind == "logistic") {
        f.kind = FactorKind::logistic;
      } else if (kind == "linear_gaussian") {
        f.kind = FactorKind::linear_gaussian;
        f.coefficient = fj.value("coefficient", 1.0);
        f.offset = fj.value("offset", 0.0);
        f.noise_variance = fj.at("noise_variance").get<double>();
      } else {
        throw FormatError("graph: factor '" + f.name + "' has unknown kind '" + kind + "'");
      }
      g.factors.push_back(std::move(f));
    }
    if (j.contains("observations")) {
      for (const auto& o : j.at("observations")) {
        const int v = lookup(o.at("variable").get<std::string>());
        if (!g.observations.emplace(v, BetaDist{o.at("alpha").get<double>(), o.at("beta").get<double>()}).second) {
          throw FormatError("graph: duplicate observation");
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("graph: missing or malformed field: ") + e.what());
  } catch (const DomainError& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
  try {
    g.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("graph: ") + e.what());
  }
  return g;
}

inline json distribution_to_json(const ExpFamDist& d) {
  if (const auto* g = std::get_if<Gaussian1D>(&d)) {
    json j = {{"family", "gaussian"}, {"eta", {g->eta1(), g->eta2()}}, {"proper", g->is_proper()}};
    if (g->is_proper()) {
      j["mean"] = g->mean();
      j["variance"] = g->variance();
    }
    return j;
  }
  const auto& b = std::get<BetaDist>(d);
  return {{"family", "beta"}, {"alpha", b.alpha()}, {"beta", b.beta()}, {"proper", b.is_proper()}};
}

inline ExpFamDist distribution_from_json(const json& j) {
  if (j.at("family").get<std::string>() == "gaussian") {
    return Gaussian1D::from_natural(j.at("eta").at(0).get<double>(), j.at("eta").at(1).get<double>());
  }
  return BetaDist::unchecked(j.at("alpha").get<double>(), j.at("beta").get<double>());
}

}  // namespace epop::io

#endif  // EPOP_IO_HPP
