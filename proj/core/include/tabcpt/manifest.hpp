#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tabcpt {

// One dataset record of a corpus manifest. Manifest files are JSON Lines, one
// object per dataset with exactly these keys:
//   {"id", "name", "source", "path", "target_column", "rows", "cols"}
// `cols` counts every CSV column, the target included. Relative paths resolve
// against the manifest's directory.
struct DatasetManifest {
  std::string id;
  std::string name;
  std::string source;
  std::filesystem::path path;
  std::string target_column;
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool operator==(const DatasetManifest&) const = default;
};

// Header line written by `curate`:
//   {"curation": {"records_digest": "<hex>", "eval_manifest_digest": "<hex>"}}
// `records_digest` covers the canonical text of every dataset record, so any
// edit to the curated list invalidates the stamp.
struct CurationStamp {
  std::uint64_t records_digest = 0;
  std::uint64_t eval_manifest_digest = 0;
};

struct Manifest {
  std::vector<DatasetManifest> datasets;
  std::optional<CurationStamp> curation;
};

/// Canonical one-line JSON form of a record (paths written as given).
std::string manifest_record_line(const DatasetManifest& record);

std::uint64_t records_digest(const std::vector<DatasetManifest>& records);

/// Parses a manifest file. Malformed lines raise an input error naming the
/// line number; duplicate ids are rejected.
Manifest read_manifest(const std::filesystem::path& file);

void write_manifest(const std::filesystem::path& file, const Manifest& manifest);

/// True when the stamp is present and matches the records.
bool curation_valid(const Manifest& manifest);

}  // namespace tabcpt
