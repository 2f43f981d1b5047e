#pragma once

#include <filesystem>
#include <string>

#include "ophmm/hmm.hpp"

namespace ophmm {

struct ModelMetadata {
  std::string config_hash;
  std::string data_digest;
  // Period label the model is "as of" (last training period). Never wall-clock,
  // so repeated runs write identical files.
  std::string timestamp;
};

struct ModelFile {
  HmmModel model;
  ModelMetadata metadata;
};

/// JSON document: format tag, K, d, initial, transition (row-major nested),
/// emissions [{mean, covariance}], metadata. Doubles use the shortest
/// round-trip decimal, so write -> read is bit-exact.
std::string serialize_model(const HmmModel& model, const ModelMetadata& metadata = {});
ModelFile parse_model(const std::string& text);

void save_model(const std::filesystem::path& path, const HmmModel& model,
                const ModelMetadata& metadata = {});
ModelFile load_model(const std::filesystem::path& path);

}  // namespace ophmm
