#pragma once

#include <filesystem>
#include <string>

#include "kpl/baselines.hpp"
#include "kpl/koopman.hpp"

namespace kpl::io {

// Versioned JSON model document. Matrices are stored as
// {"rows": r, "cols": c, "data": [row-major values]}.
inline constexpr const char* kModelFormat = "kpl-model";
inline constexpr int kModelVersion = 1;

enum class ModelKind { koopman, dmdc };

/// DMDc model together with the metadata needed to run it on platoon data.
struct DmdcArtifact {
  baselines::DmdcModel model;
  int n_followers = 0;
  double dt = 0.1;
};

std::string to_string(ModelKind kind);

std::string serialize(const koopman::KoopmanModel& model);
std::string serialize(const DmdcArtifact& model);
koopman::KoopmanModel parse_koopman(const std::string& text, const std::string& source = "<memory>");
DmdcArtifact parse_dmdc(const std::string& text, const std::string& source = "<memory>");

void save_model(const koopman::KoopmanModel& model, const std::filesystem::path& path);
void save_model(const DmdcArtifact& model, const std::filesystem::path& path);
koopman::KoopmanModel load_model(const std::filesystem::path& path);
DmdcArtifact load_dmdc(const std::filesystem::path& path);

/// Reads only the header of a model file.
ModelKind peek_kind(const std::filesystem::path& path);

}  // namespace kpl::io
