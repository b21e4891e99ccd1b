#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "qst/tensor.hpp"
#include "qst/tomography.hpp"

namespace qst {

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// JSON manifest of an array file. `extra` holds kind-specific fields
/// (kept sites, records layout) and is written alongside the fixed keys.
struct Manifest {
  std::string kind;  // pure | density | records | unitary
  std::vector<int> dims;
  std::string dtype = "c128";
  std::string data_file;  // relative to the manifest directory
  std::string sha256;
  nlohmann::json extra = nlohmann::json::object();
};

/// Writes data as little-endian interleaved float64 (re, im), row-major, to
/// <manifest stem>.bin next to the manifest, then the manifest itself.
/// Throws IoError on write failure.
Manifest write_array(const std::filesystem::path& manifest_path, const std::string& kind, const std::vector<int>& dims,
                     const Matrix& data, const nlohmann::json& extra = nlohmann::json::object());

struct LoadedArray {
  Manifest manifest;
  std::vector<cplx> values;  // row-major
};

/// Reads and checks a manifest and its data file: dtype, size and
/// checksum. Throws IoError; `expected_kind` (if non-empty) must match.
LoadedArray read_array(const std::filesystem::path& manifest_path, const std::string& expected_kind = "");

void save_state(const std::filesystem::path& path, const PureState& psi);
PureState load_state(const std::filesystem::path& path);

/// `sites` and `parent_dims` record where the operator came from.
void save_density(const std::filesystem::path& path, const DensityOperator& rho, const std::vector<int>& sites = {},
                  const std::vector<int>& parent_dims = {});
struct LoadedDensity {
  DensityOperator rho;
  std::vector<int> sites;
  std::vector<int> parent_dims;
};
LoadedDensity load_density(const std::filesystem::path& path);

void save_unitary(const std::filesystem::path& path, const UnitaryMatrix& u);
UnitaryMatrix load_unitary(const std::filesystem::path& path);

/// Records of one or more subsets, each group in canonical multi-index
/// order. Values are stored as (value, 0) pairs.
struct RecordSet {
  int d = 0;
  std::vector<int> parent_dims;
  std::vector<std::vector<ExpectationRecord>> groups;
};
void save_records(const std::filesystem::path& path, const RecordSet& set);
RecordSet load_records(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace qst
