#include "ophmm/model_io.hpp"

#include <json.hpp>

#include "ophmm/errors.hpp"
#include "ophmm/util.hpp"

namespace ophmm {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "ophmm-model";
constexpr int kFormatVersion = 1;

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return rows;
}

Eigen::VectorXd json_to_vector(const json& arr, Eigen::Index expected, const char* what) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != expected) {
    throw InputError(std::string("model file: '") + what + "' must be an array of length " +
                     std::to_string(expected));
  }
  Eigen::VectorXd v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) {
    const auto& x = arr[static_cast<std::size_t>(i)];
    if (!x.is_number()) throw InputError(std::string("model file: non-numeric entry in '") + what + "'");
    v(i) = x.get<double>();
  }
  return v;
}

Eigen::MatrixXd json_to_matrix(const json& rows, Eigen::Index n_rows, Eigen::Index n_cols,
                               const char* what) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != n_rows) {
    throw InputError(std::string("model file: '") + what + "' must have " +
                     std::to_string(n_rows) + " rows");
  }
  Eigen::MatrixXd m(n_rows, n_cols);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    m.row(r) = json_to_vector(rows[static_cast<std::size_t>(r)], n_cols, what).transpose();
  }
  return m;
}

}  // namespace

std::string serialize_model(const HmmModel& model, const ModelMetadata& metadata) {
  json doc;
  doc["format"] = kFormatTag;
  doc["version"] = kFormatVersion;
  doc["n_states"] = model.n_states();
  doc["dim"] = model.dim();
  doc["initial"] = vector_to_json(model.initial());
  doc["transition"] = matrix_to_json(model.transition());
  json em = json::array();
  for (const auto& g : model.emissions()) {
    em.push_back({{"mean", vector_to_json(g.mean())}, {"covariance", matrix_to_json(g.covariance())}});
  }
  doc["emissions"] = std::move(em);
  doc["metadata"] = {{"config_hash", metadata.config_hash},
                     {"data_digest", metadata.data_digest},
                     {"timestamp", metadata.timestamp}};
  return doc.dump(2) + "\n";
}

ModelFile parse_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("format", std::string{}) != kFormatTag) {
      throw InputError("model file: missing or wrong format tag");
    }
    const int k = doc.at("n_states").get<int>();
    const int d = doc.at("dim").get<int>();
    if (k < 1 || d < 1) throw InputError("model file: n_states and dim must be >= 1");
    Eigen::VectorXd pi = json_to_vector(doc.at("initial"), k, "initial");
    Eigen::MatrixXd a = json_to_matrix(doc.at("transition"), k, k, "transition");
    const auto& em = doc.at("emissions");
    if (!em.is_array() || static_cast<int>(em.size()) != k) {
      throw InputError("model file: expected " + std::to_string(k) + " emissions");
    }
    std::vector<Gaussian> emissions;
    for (const auto& e : em) {
      emissions.emplace_back(json_to_vector(e.at("mean"), d, "mean"),
                             json_to_matrix(e.at("covariance"), d, d, "covariance"));
    }
    ModelMetadata meta;
    if (doc.contains("metadata")) {
      const auto& m = doc["metadata"];
      meta.config_hash = m.value("config_hash", std::string{});
      meta.data_digest = m.value("data_digest", std::string{});
      meta.timestamp = m.value("timestamp", std::string{});
    }
    return ModelFile{HmmModel(std::move(pi), std::move(a), std::move(emissions)), std::move(meta)};
  } catch (const json::exception& e) {
    throw InputError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const HmmModel& model,
                const ModelMetadata& metadata) {
  write_text_file(path, serialize_model(model, metadata));
}

ModelFile load_model(const std::filesystem::path& path) { return parse_model(read_text_file(path)); }

}  // namespace ophmm
