#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "ldbp/dbp.hpp"
#include "ldbp/params.hpp"
#include "ldbp/pmd_comp.hpp"
#include "ldbp/subband.hpp"

namespace ldbp::cli {

using json = nlohmann::json;

inline constexpr int kArtifactSchemaVersion = 1;

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& p);

struct QuantMetadata {
  int bits = 8;
  std::map<std::string, double> scales;  ///< per parameter block
};

/// Architecture descriptor plus parameters. The descriptor holds everything
/// needed to rebuild the model type around the parameters.
struct ModelArtifact {
  json architecture;
  ParamSet params;
  std::optional<QuantMetadata> quantization;
  json provenance;  ///< config digest, seeds

  bool operator==(const ModelArtifact& o) const;
};

ModelArtifact make_artifact(const DbpModel& m);
ModelArtifact make_artifact(const SubbandDbpModel& m, const FilterBankConfig& bank, double input_sample_rate);
ModelArtifact make_artifact(const MultiStepPmdModel& m);
ModelArtifact make_artifact(const MimoFirBaseline& m);

std::string artifact_type(const ModelArtifact& a);
DbpModel to_dbp(const ModelArtifact& a);
SubbandDbpModel to_subband(const ModelArtifact& a, FilterBankConfig* bank = nullptr);
MultiStepPmdModel to_pmd(const ModelArtifact& a);
MimoFirBaseline to_mimo(const ModelArtifact& a);

/// Canonical text form (sorted keys, two-space indent, trailing newline)
/// including the content digest.
std::string serialize(const ModelArtifact& a);
/// Parses and verifies the schema version and the content digest. A newer
/// or unknown version or a digest mismatch raises IntegrityError.
ModelArtifact deserialize(std::string_view text);

ModelArtifact load_artifact(const std::filesystem::path& p);
void save_artifact(const std::filesystem::path& p, const ModelArtifact& a);

/// Parameter blocks as JSON and back (used by artifacts and checkpoints).
json params_json(const ParamSet& p);
ParamSet params_from_json(const json& j);

/// Writes via a temporary file in the same directory and rename.
void atomic_write(const std::filesystem::path& p, std::string_view bytes);
std::string read_file(const std::filesystem::path& p);

}  // namespace ldbp::cli
