#include "tabcpt/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include "tabcpt/digest.hpp"
#include "tabcpt/error.hpp"

namespace tabcpt {

namespace {

using nlohmann::json;

const std::set<std::string> kRecordKeys = {"id", "name", "source", "path", "target_column", "rows", "cols"};

std::string line_context(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line) + ": ";
}

DatasetManifest parse_record(const json& object, const std::string& where) {
  for (const auto& [key, value] : object.items()) {
    if (!kRecordKeys.count(key)) throw input_error(where + "unknown key '" + key + "'");
  }
  for (const auto& key : kRecordKeys) {
    if (!object.contains(key)) throw input_error(where + "missing key '" + key + "'");
  }
  DatasetManifest record;
  try {
    record.id = object.at("id").get<std::string>();
    record.name = object.at("name").get<std::string>();
    record.source = object.at("source").get<std::string>();
    record.path = object.at("path").get<std::string>();
    record.target_column = object.at("target_column").get<std::string>();
    record.rows = object.at("rows").get<std::size_t>();
    record.cols = object.at("cols").get<std::size_t>();
  } catch (const json::exception& e) {
    throw input_error(where + "bad field type: " + e.what());
  }
  if (record.id.empty()) throw input_error(where + "empty id");
  return record;
}

}  // namespace

std::string manifest_record_line(const DatasetManifest& record) {
  json object = {{"id", record.id},
                 {"name", record.name},
                 {"source", record.source},
                 {"path", record.path.generic_string()},
                 {"target_column", record.target_column},
                 {"rows", record.rows},
                 {"cols", record.cols}};
  return object.dump();
}

std::uint64_t records_digest(const std::vector<DatasetManifest>& records) {
  Digest64 digest;
  for (const auto& record : records) {
    digest.update(manifest_record_line(record));
    digest.update("\n");
  }
  return digest.value();
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw input_error("cannot open manifest " + file.string());
  const auto base = file.parent_path();

  Manifest manifest;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  bool seen_record = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = line_context(file, line);
    json object;
    try {
      object = json::parse(text);
    } catch (const json::parse_error& e) {
      throw input_error(where + "malformed JSON: " + e.what());
    }
    if (!object.is_object()) throw input_error(where + "expected a JSON object");

    if (object.contains("curation")) {
      if (seen_record || manifest.curation) throw input_error(where + "curation stamp must be the first line");
      try {
        const json& stamp = object.at("curation");
        manifest.curation = CurationStamp{from_hex(stamp.at("records_digest").get<std::string>()),
                                          from_hex(stamp.at("eval_manifest_digest").get<std::string>())};
      } catch (const json::exception& e) {
        throw input_error(where + "bad curation stamp: " + e.what());
      }
      continue;
    }

    DatasetManifest record = parse_record(object, where);
    if (!ids.insert(record.id).second) throw input_error(where + "duplicate dataset id '" + record.id + "'");
    if (record.path.is_relative()) record.path = (base / record.path).lexically_normal();
    manifest.datasets.push_back(std::move(record));
    seen_record = true;
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& file, const Manifest& manifest) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write manifest " + file.string());
  if (manifest.curation) {
    json stamp = {{"curation",
                   {{"records_digest", to_hex(manifest.curation->records_digest)},
                    {"eval_manifest_digest", to_hex(manifest.curation->eval_manifest_digest)}}}};
    out << stamp.dump() << '\n';
  }
  for (const auto& record : manifest.datasets) out << manifest_record_line(record) << '\n';
  if (!out) throw input_error("failed writing manifest " + file.string());
}

bool curation_valid(const Manifest& manifest) {
  return manifest.curation && manifest.curation->records_digest == records_digest(manifest.datasets);
}

}  // namespace tabcpt
